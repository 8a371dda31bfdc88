//! Domain types for a pair of structural equation models and the
//! average/differential reparameterization of their regulatory effects.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::standardize_columns;

/// Index sets of anchoring exogenous columns, one set per node.
pub type AnchorSets = Vec<Vec<usize>>;

/// One observed network: endogenous matrix, standardized exogenous matrix
/// and the known anchor sets.
#[derive(Debug, Clone)]
pub struct NetworkData {
    /// `n × p` endogenous observations.
    pub y: DMatrix<f64>,
    /// `n × q` exogenous observations, each column scaled to norm `√n`.
    pub x: DMatrix<f64>,
    /// `x_raw[:, j] = x[:, j] * x_scales[j]`.
    pub x_scales: Vec<f64>,
    pub anchors: AnchorSets,
}

impl NetworkData {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// Resamples rows (subjects); `y` and `x` rows move together. The
    /// resampled exogenous matrix is re-standardized.
    pub fn resample_rows(&self, rows: &[usize]) -> Result<NetworkData> {
        let y = self.y.select_rows(rows);
        let x = self.x.select_rows(rows);
        let (x, rescale) = standardize_columns(&x)?;
        let x_scales = self
            .x_scales
            .iter()
            .zip(rescale.iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(NetworkData {
            y,
            x,
            x_scales,
            anchors: self.anchors.clone(),
        })
    }
}

/// The two observed datasets plus node and exogenous-variable labels.
#[derive(Debug, Clone)]
pub struct ObservationPair {
    networks: [NetworkData; 2],
    pub node_names: Vec<String>,
    pub exo_names: Vec<String>,
}

impl ObservationPair {
    /// Builds a pair from raw data. Exogenous columns are standardized here
    /// and the scale factors retained.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        y1: DMatrix<f64>,
        x1: DMatrix<f64>,
        y2: DMatrix<f64>,
        x2: DMatrix<f64>,
        anchors1: AnchorSets,
        anchors2: AnchorSets,
        node_names: Vec<String>,
        exo_names: Vec<String>,
    ) -> Result<Self> {
        let p = y1.ncols();
        let q = x1.ncols();
        if y2.ncols() != p {
            return Err(Error::Dimension(format!(
                "y1 has {p} columns but y2 has {}",
                y2.ncols()
            )));
        }
        if x2.ncols() != q {
            return Err(Error::Dimension(format!(
                "x1 has {q} columns but x2 has {}",
                x2.ncols()
            )));
        }
        if y1.nrows() != x1.nrows() || y2.nrows() != x2.nrows() {
            return Err(Error::Dimension(
                "endogenous and exogenous row counts differ within a network".into(),
            ));
        }
        if node_names.len() != p || exo_names.len() != q {
            return Err(Error::Dimension(format!(
                "expected {p} node names and {q} exogenous names, got {} and {}",
                node_names.len(),
                exo_names.len()
            )));
        }
        for (k, anchors) in [&anchors1, &anchors2].into_iter().enumerate() {
            if anchors.len() != p {
                return Err(Error::Dimension(format!(
                    "network {} has {} anchor sets for {p} nodes",
                    k + 1,
                    anchors.len()
                )));
            }
            if let Some(bad) = anchors.iter().flatten().find(|&&j| j >= q) {
                return Err(Error::InvalidArgument(format!(
                    "network {}: anchor index {bad} out of range for {q} exogenous columns",
                    k + 1
                )));
            }
        }
        let (x1, s1) = standardize_columns(&x1)?;
        let (x2, s2) = standardize_columns(&x2)?;
        Ok(ObservationPair {
            networks: [
                NetworkData {
                    y: y1,
                    x: x1,
                    x_scales: s1,
                    anchors: anchors1,
                },
                NetworkData {
                    y: y2,
                    x: x2,
                    x_scales: s2,
                    anchors: anchors2,
                },
            ],
            node_names,
            exo_names,
        })
    }

    pub(crate) fn from_networks(
        networks: [NetworkData; 2],
        node_names: Vec<String>,
        exo_names: Vec<String>,
    ) -> Self {
        ObservationPair {
            networks,
            node_names,
            exo_names,
        }
    }

    /// Network `k` with `k ∈ {0, 1}`.
    pub fn network(&self, k: usize) -> &NetworkData {
        &self.networks[k]
    }

    pub fn networks(&self) -> &[NetworkData; 2] {
        &self.networks
    }

    pub fn p(&self) -> usize {
        self.networks[0].y.ncols()
    }

    pub fn q(&self) -> usize {
        self.networks[0].x.ncols()
    }

    /// The same data with the two network slots exchanged.
    pub fn swapped(&self) -> ObservationPair {
        let [a, b] = self.networks.clone();
        ObservationPair {
            networks: [b, a],
            node_names: self.node_names.clone(),
            exo_names: self.exo_names.clone(),
        }
    }

    /// A pair whose two slots hold identical copies of network `k`.
    pub fn duplicated(&self, k: usize) -> ObservationPair {
        ObservationPair {
            networks: [self.networks[k].clone(), self.networks[k].clone()],
            node_names: self.node_names.clone(),
            exo_names: self.exo_names.clone(),
        }
    }
}

/// Ground truth for one network.
#[derive(Debug, Clone)]
pub struct SemModel {
    /// `p × p`, zero diagonal; column `i` holds the effects on node `i`.
    pub gamma: DMatrix<f64>,
    /// `q × p` anchoring effects.
    pub phi: DMatrix<f64>,
    pub sigma: Vec<f64>,
}

impl SemModel {
    pub fn new(gamma: DMatrix<f64>, phi: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        let p = gamma.nrows();
        if gamma.ncols() != p || phi.ncols() != p || sigma.len() != p {
            return Err(Error::Dimension("inconsistent SEM dimensions".into()));
        }
        if (0..p).any(|i| gamma[(i, i)] != 0.0) {
            return Err(Error::InvalidArgument(
                "gamma must have an exactly zero diagonal".into(),
            ));
        }
        Ok(SemModel { gamma, phi, sigma })
    }

    pub fn p(&self) -> usize {
        self.gamma.nrows()
    }

    /// Support of each column of `phi`.
    pub fn anchor_sets(&self) -> AnchorSets {
        (0..self.p())
            .map(|i| {
                (0..self.phi.nrows())
                    .filter(|&j| self.phi[(j, i)] != 0.0)
                    .collect()
            })
            .collect()
    }
}

/// Per-node record of the tuning chosen in the construction stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NodeTuning {
    pub node: usize,
    /// Which fit this record describes: 0 = joint, 1/2 = a single network.
    pub network: u8,
    pub lambda: f64,
    pub lambda_max: f64,
    pub ridge_lambda: f64,
    pub cv_error: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt: f64,
    pub active: usize,
    pub failure: Option<String>,
}

/// Sparse list of `(exogenous column, coefficient)` per node.
pub type SparseColumns = Vec<Vec<(usize, f64)>>;

/// Average (`beta_plus`) and differential (`beta_minus`) effects for every
/// node, stacked as columns.
#[derive(Debug, Clone)]
pub struct DifferentialEstimate {
    pub beta_plus: DMatrix<f64>,
    pub beta_minus: DMatrix<f64>,
    /// Anchoring effects on the standardized exogenous scale, if estimated.
    pub phi_hat1: SparseColumns,
    pub phi_hat2: SparseColumns,
    pub tuning: Vec<NodeTuning>,
}

impl DifferentialEstimate {
    pub fn p(&self) -> usize {
        self.beta_plus.nrows()
    }

    pub fn gamma1(&self) -> DMatrix<f64> {
        &self.beta_plus + &self.beta_minus
    }

    pub fn gamma2(&self) -> DMatrix<f64> {
        &self.beta_plus - &self.beta_minus
    }

    pub fn from_gammas(gamma1: &DMatrix<f64>, gamma2: &DMatrix<f64>) -> Self {
        DifferentialEstimate {
            beta_plus: (gamma1 + gamma2) / 2.0,
            beta_minus: (gamma1 - gamma2) / 2.0,
            phi_hat1: Vec::new(),
            phi_hat2: Vec::new(),
            tuning: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    Differential,
    Common,
    Absent,
}

impl EdgeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeLabel::Differential => "differential",
            EdgeLabel::Common => "common",
            EdgeLabel::Absent => "absent",
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EdgeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "differential" => Ok(EdgeLabel::Differential),
            "common" => Ok(EdgeLabel::Common),
            "absent" => Ok(EdgeLabel::Absent),
            other => Err(Error::InvalidArgument(format!("unknown edge label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub label: EdgeLabel,
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub boot_freq: Option<f64>,
}

/// Labels for every ordered pair `source → target`, `source ≠ target`,
/// in source-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReport {
    pub p: usize,
    pub tolerance: f64,
    pub edges: Vec<Edge>,
}

impl EdgeReport {
    pub fn count(&self, label: EdgeLabel) -> usize {
        self.edges.iter().filter(|e| e.label == label).count()
    }

    /// Position of `source → target` in `edges`.
    pub fn index_of(p: usize, source: usize, target: usize) -> usize {
        debug_assert!(source != target);
        source * (p - 1) + if target > source { target - 1 } else { target }
    }

    pub fn get(&self, source: usize, target: usize) -> &Edge {
        &self.edges[Self::index_of(self.p, source, target)]
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "vector lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `(γ1, γ2) ↦ ((γ1 + γ2)/2, (γ1 − γ2)/2)`.
pub fn reparameterize(gamma1: &[f64], gamma2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(gamma1, gamma2)?;
    let plus = gamma1
        .iter()
        .zip(gamma2)
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    let minus = gamma1
        .iter()
        .zip(gamma2)
        .map(|(a, b)| (a - b) / 2.0)
        .collect();
    Ok((plus, minus))
}

/// Inverse of [`reparameterize`].
pub fn recover_gammas(beta_plus: &[f64], beta_minus: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(beta_plus, beta_minus)?;
    let g1 = beta_plus
        .iter()
        .zip(beta_minus)
        .map(|(a, b)| a + b)
        .collect();
    let g2 = beta_plus
        .iter()
        .zip(beta_minus)
        .map(|(a, b)| a - b)
        .collect();
    Ok((g1, g2))
}

pub fn label_for(beta_plus: f64, beta_minus: f64, tol: f64) -> EdgeLabel {
    if beta_minus.abs() > tol {
        EdgeLabel::Differential
    } else if beta_plus.abs() > tol {
        EdgeLabel::Common
    } else {
        EdgeLabel::Absent
    }
}

/// Labels every off-diagonal pair from the estimated effects. An edge with
/// both a nonzero average and a nonzero differential effect is reported as
/// differential.
pub fn classify_edges(est: &DifferentialEstimate, tol: f64) -> EdgeReport {
    let tol = tol.max(0.0);
    let p = est.p();
    let mut edges = Vec::with_capacity(p * p.saturating_sub(1));
    for source in 0..p {
        for target in (0..p).filter(|&t| t != source) {
            let bp = est.beta_plus[(source, target)];
            let bm = est.beta_minus[(source, target)];
            edges.push(Edge {
                source,
                target,
                label: label_for(bp, bm, tol),
                beta_plus: bp,
                beta_minus: bm,
                gamma1: bp + bm,
                gamma2: bp - bm,
                boot_freq: None,
            });
        }
    }
    EdgeReport {
        p,
        tolerance: tol,
        edges,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorViolation {
    Empty {
        network: u8,
        node: usize,
    },
    Shared {
        network: u8,
        nodes: (usize, usize),
        exo: usize,
    },
}

impl fmt::Display for AnchorViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorViolation::Empty { network, node } => {
                write!(f, "network {network}: node {node} has no anchor")
            }
            AnchorViolation::Shared {
                network,
                nodes: (a, b),
                exo,
            } => write!(
                f,
                "network {network}: nodes {a} and {b} share anchor column {exo}"
            ),
        }
    }
}

/// Checks one network's anchor sets: every set nonempty, sets pairwise
/// disjoint. `network` is only used for reporting.
pub fn check_anchor_sets(anchors: &[Vec<usize>], network: u8) -> Vec<AnchorViolation> {
    let mut out = Vec::new();
    let mut owner: std::collections::BTreeMap<usize, usize> = Default::default();
    for (node, set) in anchors.iter().enumerate() {
        if set.is_empty() {
            out.push(AnchorViolation::Empty { network, node });
        }
        for &exo in set {
            match owner.get(&exo) {
                Some(&first) if first != node => out.push(AnchorViolation::Shared {
                    network,
                    nodes: (first, node),
                    exo,
                }),
                Some(_) => {}
                None => {
                    owner.insert(exo, node);
                }
            }
        }
    }
    out
}

pub fn validate_anchors(pair: &ObservationPair) -> std::result::Result<(), Vec<AnchorViolation>> {
    let mut all = check_anchor_sets(&pair.network(0).anchors, 1);
    all.extend(check_anchor_sets(&pair.network(1).anchors, 2));
    if all.is_empty() {
        Ok(())
    } else {
        Err(all)
    }
}
