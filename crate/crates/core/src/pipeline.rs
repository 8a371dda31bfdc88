//! The two-stage estimator and the per-network baseline.
//!
//! Stage 1 predicts every node from the exogenous variables of its own
//! network (screening, then ridge with a GCV-chosen penalty). Stage 2
//! regresses each node on the other nodes' predictions, after removing the
//! node's anchors, jointly over both networks with the coefficients split
//! into average and differential parts.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    argmin_grid, check_grid, gcv_score, log_space, ols_fit, select_from_spectrum, Annihilator,
    RidgeSpectrum,
};
use crate::model::{
    classify_edges, validate_anchors, DifferentialEstimate, Edge, EdgeLabel, EdgeReport,
    NetworkData, NodeTuning, ObservationPair, SparseColumns,
};
use crate::par;
use crate::screening::{isis_select, screen_size, ScreenSet};
use crate::solver::{
    adaptive_weights, argmin_curve, cv_path, fold_assignment, lambda_path, CvPath, PathStop,
    BlockStats, CdSettings, CvTask, GramSystem, NetGram, TestBlock,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Screen size is `⌊n^screen_exponent⌋` unless `screen_size` is set.
    pub screen_exponent: f64,
    pub screen_size: Option<usize>,
    /// 1 means a single screening pass.
    pub isis_rounds: usize,
    /// Ridge grid: `ridge_points` log-spaced values in
    /// `[ridge_lo · n, ridge_hi · n]`.
    pub ridge_points: usize,
    pub ridge_lo: f64,
    pub ridge_hi: f64,
    pub cv_folds: usize,
    pub lambda_points: usize,
    pub lambda_ratio: f64,
    /// The penalty path ends early once the fraction of response variance
    /// explained improves by less than this relative amount between grid
    /// points, or exceeds `path_max_explained`. Zero disables the rule.
    pub path_min_gain: f64,
    pub path_max_explained: f64,
    /// The path also ends once this many grid points pass without a new
    /// CV minimum. Zero disables the rule.
    pub cv_patience: usize,
    pub cd_tol: f64,
    pub cd_max_sweeps: usize,
    pub eps_factor: f64,
    pub classify_tol: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the ambient pool.
    #[serde(skip)]
    pub threads: usize,
    /// Warn instead of failing on anchor violations and node failures.
    pub permissive: bool,
    pub estimate_phi: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            screen_exponent: 0.9,
            screen_size: None,
            isis_rounds: 1,
            ridge_points: 50,
            ridge_lo: 1e-4,
            ridge_hi: 1e2,
            cv_folds: 10,
            lambda_points: 100,
            lambda_ratio: 1e-4,
            path_min_gain: 1e-5,
            path_max_explained: 0.999,
            cv_patience: 10,
            cd_tol: 1e-7,
            cd_max_sweeps: 100_000,
            eps_factor: 1e-4,
            classify_tol: 0.0,
            seed: 0,
            threads: 0,
            permissive: false,
            estimate_phi: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.screen_exponent > 0.0 && self.screen_exponent <= 1.0) {
            return bad("screen_exponent must lie in (0, 1]");
        }
        if self.screen_size == Some(0) {
            return bad("screen_size must be at least 1");
        }
        if self.ridge_points == 0 || !(self.ridge_lo > 0.0) || !(self.ridge_hi >= self.ridge_lo) {
            return bad("ridge grid needs ridge_points >= 1 and 0 < ridge_lo <= ridge_hi");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.lambda_points == 0 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return bad("lambda_points must be >= 1 and lambda_ratio in (0, 1)");
        }
        if !(self.path_min_gain >= 0.0) || !(self.path_max_explained > 0.0 && self.path_max_explained <= 1.0) {
            return bad("path_min_gain must be nonnegative and path_max_explained in (0, 1]");
        }
        if !(self.cd_tol > 0.0) || self.cd_max_sweeps == 0 {
            return bad("cd_tol must be positive and cd_max_sweeps at least 1");
        }
        if !(self.eps_factor > 0.0) || !(self.classify_tol >= 0.0) {
            return bad("eps_factor must be positive and classify_tol nonnegative");
        }
        Ok(())
    }

    pub fn cd_settings(&self) -> CdSettings {
        CdSettings {
            tol: self.cd_tol,
            max_sweeps: self.cd_max_sweeps,
        }
    }

    pub fn ridge_grid(&self, n: usize) -> Vec<f64> {
        let n = n as f64;
        log_space(self.ridge_lo * n, self.ridge_hi * n, self.ridge_points)
    }

    pub fn screen_size_for(&self, n: usize, q: usize) -> usize {
        self.screen_size
            .unwrap_or_else(|| screen_size(n, self.screen_exponent))
            .min(q)
            .max(1)
    }
}

/// Stage-1 output for one node in one network.
#[derive(Debug, Clone)]
pub struct NodeCalibration {
    pub screen: ScreenSet,
    pub ridge_lambda: f64,
    /// Nonzero reduced-form coefficients, ascending column order.
    pub pi_hat: Vec<(usize, f64)>,
    pub y_hat: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkCalibration {
    pub pi_hat: SparseColumns,
    /// `n × p` predicted endogenous matrix.
    pub y_hat: DMatrix<f64>,
    pub ridge_lambda: Vec<f64>,
    pub screens: Vec<ScreenSet>,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub networks: [NetworkCalibration; 2],
}

/// Screens `x` down to `d` columns for `y`, fits ridge with the GCV-best
/// penalty from `grid`, and predicts.
pub fn calibrate_node(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    d: usize,
    grid: &[f64],
    isis_rounds: usize,
) -> Result<NodeCalibration> {
    check_grid(grid)?;
    let screen = isis_select(x, y, d, isis_rounds)?;
    let idx = screen.sorted_indices();
    let xm = x.select_columns(&idx);
    let spectrum = RidgeSpectrum::from_design(&xm, y)?;
    let (lambda, _) = select_from_spectrum(&spectrum, grid);
    let coef = spectrum.coefficients(lambda);
    let y_hat = &xm * &coef;
    Ok(NodeCalibration {
        screen,
        ridge_lambda: lambda,
        pi_hat: idx.into_iter().zip(coef.iter().copied()).collect(),
        y_hat,
    })
}

/// Calibration when every column is kept: one eigendecomposition of `XᵀX`
/// serves all nodes.
fn calibrate_unscreened(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    shared: &RidgeSpectrum,
    grid: &[f64],
) -> Result<NodeCalibration> {
    let screen = isis_select(x, y, x.ncols().max(1), 1)?;
    let spectrum = shared.retarget(&x.tr_mul(y), y.norm_squared());
    let (lambda, _) = select_from_spectrum(&spectrum, grid);
    let coef = spectrum.coefficients(lambda);
    let y_hat = x * &coef;
    Ok(NodeCalibration {
        screen,
        ridge_lambda: lambda,
        pi_hat: coef.iter().copied().enumerate().collect(),
        y_hat,
    })
}

/// Stage 1 for every node of both networks.
pub fn calibrate_all(pair: &ObservationPair, config: &PipelineConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let p = pair.p();
    let q = pair.q();
    let shared: Vec<Option<RidgeSpectrum>> = pair
        .networks()
        .iter()
        .map(|net| {
            let n = net.n();
            (q <= n).then(|| {
                RidgeSpectrum::from_gram(&net.x.tr_mul(&net.x), &DVector::zeros(q), 0.0, n)
            })
        })
        .collect();
    let grids: Vec<Vec<f64>> = pair.networks().iter().map(|net| config.ridge_grid(net.n())).collect();

    let results = par::map_range(2 * p, |t| {
        let (k, i) = (t / p, t % p);
        let net = pair.network(k);
        let y = net.y.column(i).into_owned();
        let out = match &shared[k] {
            Some(spec) => calibrate_unscreened(&y, &net.x, spec, &grids[k]),
            None => calibrate_node(
                &y,
                &net.x,
                config.screen_size_for(net.n(), q),
                &grids[k],
                config.isis_rounds,
            ),
        };
        out.map(|mut c| {
            c.screen.node = i;
            c.screen.network = k as u8 + 1;
            c
        })
        .map_err(|e| e.at_node(i, k as u8 + 1))
    });

    let mut nodes = results.into_iter();
    let mut networks = Vec::with_capacity(2);
    for k in 0..2 {
        let n = pair.network(k).n();
        let mut net = NetworkCalibration {
            pi_hat: Vec::with_capacity(p),
            y_hat: DMatrix::zeros(n, p),
            ridge_lambda: Vec::with_capacity(p),
            screens: Vec::with_capacity(p),
        };
        for i in 0..p {
            let c = nodes.next().expect("one result per task")?;
            net.y_hat.set_column(i, &c.y_hat);
            net.pi_hat.push(c.pi_hat);
            net.ridge_lambda.push(c.ridge_lambda);
            net.screens.push(c.screen);
        }
        networks.push(net);
    }
    let [a, b]: [NetworkCalibration; 2] = networks.try_into().expect("two networks");
    Ok(CalibrationResult { networks: [a, b] })
}

fn others(p: usize, i: usize) -> Vec<usize> {
    (0..p).filter(|&j| j != i).collect()
}

/// The explicit Stage-2 regression for one node, before anchor removal.
#[derive(Debug, Clone)]
pub struct StackedNodeProblem {
    pub node: usize,
    /// `[y_i^(1); y_i^(2)]`.
    pub response: DVector<f64>,
    /// `[[Ŷ1, Ŷ1], [Ŷ2, −Ŷ2]]` with node `i`'s column removed.
    pub z_hat: DMatrix<f64>,
    pub anchors: [DMatrix<f64>; 2],
}

impl StackedNodeProblem {
    pub fn assemble(node: usize, pair: &ObservationPair, calib: &CalibrationResult) -> Self {
        let p = pair.p();
        let cols = others(p, node);
        let (n1, n2) = (pair.network(0).n(), pair.network(1).n());
        let h = cols.len();
        let mut z_hat = DMatrix::zeros(n1 + n2, 2 * h);
        let mut response = DVector::zeros(n1 + n2);
        for (k, offset, sign) in [(0, 0, 1.0), (1, n1, -1.0)] {
            let block = calib.networks[k].y_hat.select_columns(&cols);
            let n = block.nrows();
            z_hat.view_mut((offset, 0), (n, h)).copy_from(&block);
            z_hat.view_mut((offset, h), (n, h)).copy_from(&(block * sign));
            response
                .rows_mut(offset, n)
                .copy_from(&pair.network(k).y.column(node));
        }
        let anchors = [0, 1].map(|k| {
            let net = pair.network(k);
            net.x.select_columns(&net.anchors[node])
        });
        StackedNodeProblem {
            node,
            response,
            z_hat,
            anchors,
        }
    }

    /// Applies the block-diagonal anchor annihilator to the response and
    /// the design.
    pub fn projected(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n1 = self.anchors[0].nrows();
        let n2 = self.response.len() - n1;
        let mut y = self.response.clone();
        let mut z = self.z_hat.clone();
        for (k, offset, n) in [(0, 0, n1), (1, n1, n2)] {
            let h = Annihilator::new(&self.anchors[k])?;
            let yb = h.apply_vec(&self.response.rows(offset, n).into_owned());
            y.rows_mut(offset, n).copy_from(&yb);
            let zb = h.apply(&self.z_hat.rows(offset, n).into_owned());
            z.rows_mut(offset, n).copy_from(&zb);
        }
        Ok((y, z))
    }
}

/// Anchor-projected Stage-2 pieces of one node in one network.
struct ProjectedBlock {
    design: DMatrix<f64>,
    response: DVector<f64>,
    gram: NetGram,
    xty: DVector<f64>,
    yty: f64,
}

impl ProjectedBlock {
    fn new(node: usize, net: &NetworkData, y_hat: &DMatrix<f64>) -> Result<Self> {
        let p = y_hat.ncols();
        let h = Annihilator::new(&net.x.select_columns(&net.anchors[node]))?;
        let design = h.apply(&y_hat.select_columns(&others(p, node)));
        let response = h.apply_vec(&net.y.column(node).into_owned());
        let gram = NetGram::from_design(&design);
        let xty = design.tr_mul(&response);
        let yty = response.norm_squared();
        Ok(ProjectedBlock {
            design,
            response,
            gram,
            xty,
            yty,
        })
    }

    fn n(&self) -> usize {
        self.response.len()
    }

    fn stats(&self) -> BlockStats<'_> {
        BlockStats {
            design: &self.design,
            response: &self.response,
            gram: &self.gram,
            xty: &self.xty,
            yty: self.yty,
        }
    }

    fn spectrum(&self) -> Result<RidgeSpectrum> {
        match &self.gram {
            NetGram::Dense(g) => Ok(RidgeSpectrum::from_gram(g, &self.xty, self.yty, self.n())),
            NetGram::Lazy { .. } => RidgeSpectrum::from_design(&self.design, &self.response),
        }
    }
}

fn system_of(parts: Vec<(NetGram, DVector<f64>, f64, usize)>) -> GramSystem {
    let mut it = parts.into_iter();
    let a = it.next().expect("at least one block");
    match it.next() {
        None => GramSystem::single(a.0, a.1, a.2, a.3),
        Some(b) => GramSystem::stacked(a, b),
    }
}

struct BlockFit {
    coef: Vec<f64>,
    tuning: NodeTuning,
}

/// Ridge initializer, adaptive weights, cross-validated penalty and the
/// final adaptive-lasso fit for one block (single network) or two blocks
/// (stacked `[β⁺; β⁻]`).
fn fit_blocks(blocks: &[ProjectedBlock], node_seed: u64, config: &PipelineConfig) -> Result<BlockFit> {
    let h = blocks[0].design.ncols();
    let m = h * blocks.len();
    let n_total: usize = blocks.iter().map(|b| b.n()).sum();
    if let Some(b) = blocks.iter().find(|b| b.n() < config.cv_folds) {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot fill {} folds",
            b.n(),
            config.cv_folds
        )));
    }

    // With two blocks, a ridge penalty λ on [β⁺; β⁻] equals λ/2 on each
    // network's own coefficients, so the stacked ridge splits per network.
    let spectra = blocks.iter().map(|b| b.spectrum()).collect::<Result<Vec<_>>>()?;
    let share = blocks.len() as f64;
    let grid = config.ridge_grid(n_total);
    let scores: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let rss = spectra.iter().fold(0.0, |acc, s| acc + s.rss(l / share));
            let dof = spectra.iter().fold(0.0, |acc, s| acc + s.dof(l / share));
            gcv_score(rss, dof, n_total)
        })
        .collect();
    let ridge_lambda = grid[argmin_grid(&grid, &scores)];
    let per_net: Vec<DVector<f64>> = spectra.iter().map(|s| s.coefficients(ridge_lambda / share)).collect();
    let init: Vec<f64> = if blocks.len() == 1 {
        per_net[0].iter().copied().collect()
    } else {
        let (plus, minus) = crate::model::reparameterize(per_net[0].as_slice(), per_net[1].as_slice())?;
        plus.into_iter().chain(minus).collect()
    };
    let eps = config.eps_factor * (init.iter().fold(0.0f64, |a, b| a.max(b.abs())) + 1e-12);
    let weights = adaptive_weights(&init, eps);

    let parts = |b: &ProjectedBlock| (b.gram.clone(), b.xty.clone(), b.yty, b.n());
    let full = system_of(blocks.iter().map(parts).collect());
    let lambda_max = full.null_threshold(&weights);
    let mut tuning = NodeTuning {
        ridge_lambda,
        lambda_max,
        weights: weights.clone(),
        converged: true,
        ..Default::default()
    };
    if !(lambda_max > 0.0) {
        return Ok(BlockFit {
            coef: vec![0.0; m],
            tuning,
        });
    }
    let mut path = lambda_path(lambda_max, config.lambda_points, config.lambda_ratio);
    let settings = config.cd_settings();

    let signs: Vec<Option<f64>> = if blocks.len() == 1 {
        vec![None]
    } else {
        vec![Some(1.0), Some(-1.0)]
    };
    let fold_of: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| fold_assignment(b.n(), config.cv_folds, par::derive_seed(node_seed, b.n() as u64)))
        .collect();
    let tasks: Vec<CvTask> = (0..config.cv_folds)
        .map(|f| {
            let splits: Vec<_> = blocks
                .iter()
                .zip(&fold_of)
                .map(|(b, folds)| b.stats().split(folds, f))
                .collect();
            let test = splits
                .iter()
                .zip(&signs)
                .map(|(s, &sign)| TestBlock {
                    design: s.test_design.clone(),
                    response: s.test_response.clone(),
                    sign,
                })
                .collect();
            let train = system_of(splits.into_iter().map(|s| (s.gram, s.xty, s.yty, s.n)).collect());
            CvTask { train, test }
        })
        .collect();
    let stop = PathStop {
        min_gain: config.path_min_gain,
        max_explained: config.path_max_explained,
        patience: config.cv_patience,
    };
    let CvPath { curve, mut fits } = cv_path(tasks, Some(full), &weights, &path, settings, &stop);
    path.truncate(curve.len());
    let best = argmin_curve(&curve);

    let point = fits.swap_remove(best);
    tuning.lambda = path[best];
    tuning.cv_error = curve[best];
    tuning.iterations = point.sweeps;
    tuning.converged = point.converged;
    tuning.kkt = point.kkt;
    tuning.active = point.beta.iter().filter(|b| **b != 0.0).count();
    if !point.converged {
        warn!("coordinate descent stopped after {} sweeps without converging", point.sweeps);
    }
    debug!(
        "lambda {:.3e} of max {:.3e}; rate reference {:.3e}",
        tuning.lambda,
        lambda_max,
        ((m as f64).ln() / n_total as f64).sqrt()
    );
    Ok(BlockFit {
        coef: point.beta,
        tuning,
    })
}

/// Stage-2 result for one node. Coefficient vectors have length `p − 1`
/// and skip the node itself.
#[derive(Debug, Clone)]
pub struct NodeEstimate {
    pub node: usize,
    pub beta_plus: Vec<f64>,
    pub beta_minus: Vec<f64>,
    pub phi1: Vec<(usize, f64)>,
    pub phi2: Vec<(usize, f64)>,
    pub tuning: NodeTuning,
}

/// Anchoring effects from least squares of the structural residual
/// `y_i − Y_{−i} γ̂` on the anchor columns.
fn estimate_phi(node: usize, net: &NetworkData, gamma: &[f64]) -> Result<Vec<(usize, f64)>> {
    let anchors = &net.anchors[node];
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    let p = net.y.ncols();
    let y_rest = net.y.select_columns(&others(p, node));
    let resid = net.y.column(node) - y_rest * DVector::from_column_slice(gamma);
    let coef = ols_fit(&net.x.select_columns(anchors), &resid)?;
    Ok(anchors.iter().copied().zip(coef.iter().copied()).collect())
}

pub fn construct_node(
    node: usize,
    pair: &ObservationPair,
    calib: &CalibrationResult,
    config: &PipelineConfig,
) -> Result<NodeEstimate> {
    let blocks = [0, 1]
        .iter()
        .map(|&k| ProjectedBlock::new(node, pair.network(k), &calib.networks[k].y_hat))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_blocks(&blocks, par::derive_seed(config.seed, node as u64), config)?;
    let h = pair.p() - 1;
    let beta_plus = fit.coef[..h].to_vec();
    let beta_minus = fit.coef[h..].to_vec();
    let (phi1, phi2) = if config.estimate_phi {
        let g1: Vec<f64> = beta_plus.iter().zip(&beta_minus).map(|(a, b)| a + b).collect();
        let g2: Vec<f64> = beta_plus.iter().zip(&beta_minus).map(|(a, b)| a - b).collect();
        (
            estimate_phi(node, pair.network(0), &g1)?,
            estimate_phi(node, pair.network(1), &g2)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let mut tuning = fit.tuning;
    tuning.node = node;
    tuning.network = 0;
    Ok(NodeEstimate {
        node,
        beta_plus,
        beta_minus,
        phi1,
        phi2,
        tuning,
    })
}

#[derive(Debug, Clone)]
pub struct RednetResult {
    pub estimate: DifferentialEstimate,
    pub report: EdgeReport,
}

fn check_input(pair: &ObservationPair, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    if let Err(violations) = validate_anchors(pair) {
        let msg = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        if config.permissive {
            warn!("anchor violations: {msg}");
        } else {
            return Err(Error::AnchorViolation(msg));
        }
    }
    Ok(())
}

/// Collects per-node outcomes. Strict mode turns any failure into an error;
/// permissive mode replaces failed nodes with `fallback` and records why.
fn gather<T>(
    results: Vec<Result<T>>,
    permissive: bool,
    mut fallback: impl FnMut(usize, &Error) -> T,
) -> Result<Vec<T>> {
    let failures: Vec<String> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("node {i}: {e}")))
        .collect();
    if !failures.is_empty() {
        let summary = failures.iter().take(5).cloned().collect::<Vec<_>>().join("; ");
        if !permissive {
            return Err(Error::NodeFailures {
                failed: failures.len(),
                summary,
            });
        }
        warn!("{} node(s) failed and are reported empty: {summary}", failures.len());
    }
    Ok(results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or_else(|e| fallback(i, &e)))
        .collect())
}

fn check_calibration(pair: &ObservationPair, calib: &CalibrationResult) -> Result<()> {
    for k in 0..2 {
        if calib.networks[k].y_hat.shape() != pair.network(k).y.shape() {
            return Err(Error::Dimension(format!(
                "calibration for network {} does not match the data",
                k + 1
            )));
        }
    }
    Ok(())
}

/// The joint two-stage analysis.
pub fn rednet_run(pair: &ObservationPair, config: &PipelineConfig) -> Result<RednetResult> {
    par::with_threads(config.threads, || {
        check_input(pair, config)?;
        let calib = calibrate_all(pair, config)?;
        construct_all(pair, &calib, config)
    })
}

/// Stage 2 only, reusing a calibration computed earlier.
pub fn rednet_run_with_calibration(
    pair: &ObservationPair,
    calib: &CalibrationResult,
    config: &PipelineConfig,
) -> Result<RednetResult> {
    par::with_threads(config.threads, || {
        check_input(pair, config)?;
        check_calibration(pair, calib)?;
        construct_all(pair, calib, config)
    })
}

fn construct_all(
    pair: &ObservationPair,
    calib: &CalibrationResult,
    config: &PipelineConfig,
) -> Result<RednetResult> {
    let p = pair.p();
    let results = par::map_range(p, |i| construct_node(i, pair, calib, config));
    let nodes = gather(results, config.permissive, |i, e| NodeEstimate {
        node: i,
        beta_plus: vec![0.0; p - 1],
        beta_minus: vec![0.0; p - 1],
        phi1: Vec::new(),
        phi2: Vec::new(),
        tuning: NodeTuning {
            node: i,
            failure: Some(e.to_string()),
            ..Default::default()
        },
    })?;
    let mut est = DifferentialEstimate {
        beta_plus: DMatrix::zeros(p, p),
        beta_minus: DMatrix::zeros(p, p),
        phi_hat1: Vec::with_capacity(p),
        phi_hat2: Vec::with_capacity(p),
        tuning: Vec::with_capacity(p),
    };
    for node in nodes {
        for (pos, j) in others(p, node.node).into_iter().enumerate() {
            est.beta_plus[(j, node.node)] = node.beta_plus[pos];
            est.beta_minus[(j, node.node)] = node.beta_minus[pos];
        }
        est.phi_hat1.push(node.phi1);
        est.phi_hat2.push(node.phi2);
        est.tuning.push(node.tuning);
    }
    let report = classify_edges(&est, config.classify_tol);
    Ok(RednetResult {
        estimate: est,
        report,
    })
}

/// Per-network fits from the baseline.
#[derive(Debug, Clone)]
pub struct NaiveResult {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// Differential when presence or sign differs between the networks,
    /// common when present in both with the same sign.
    pub report: EdgeReport,
    pub tuning: Vec<NodeTuning>,
}

/// Edge labels from two separately estimated networks.
pub fn naive_labels(gamma1: &DMatrix<f64>, gamma2: &DMatrix<f64>, tol: f64) -> EdgeReport {
    let p = gamma1.nrows();
    let mut edges = Vec::with_capacity(p * p.saturating_sub(1));
    for source in 0..p {
        for target in (0..p).filter(|&t| t != source) {
            let g1 = gamma1[(source, target)];
            let g2 = gamma2[(source, target)];
            let (on1, on2) = (g1.abs() > tol, g2.abs() > tol);
            let label = if on1 != on2 || (on1 && g1.signum() != g2.signum()) {
                EdgeLabel::Differential
            } else if on1 {
                EdgeLabel::Common
            } else {
                EdgeLabel::Absent
            };
            edges.push(Edge {
                source,
                target,
                label,
                beta_plus: (g1 + g2) / 2.0,
                beta_minus: (g1 - g2) / 2.0,
                gamma1: g1,
                gamma2: g2,
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

/// The baseline: the same Stage 1, then an adaptive lasso for each network
/// on its own.
pub fn naive_run(pair: &ObservationPair, config: &PipelineConfig) -> Result<NaiveResult> {
    par::with_threads(config.threads, || {
        check_input(pair, config)?;
        let calib = calibrate_all(pair, config)?;
        let p = pair.p();
        let results = par::map_range(2 * p, |t| {
            let (k, i) = (t / p, t % p);
            let block = ProjectedBlock::new(i, pair.network(k), &calib.networks[k].y_hat)
                .map_err(|e| e.at_node(i, k as u8 + 1))?;
            let mut fit = fit_blocks(&[block], par::derive_seed(config.seed, i as u64), config)
                .map_err(|e| e.at_node(i, k as u8 + 1))?;
            fit.tuning.node = i;
            fit.tuning.network = k as u8 + 1;
            Ok(fit)
        });
        let fits = gather(results, config.permissive, |t, e| BlockFit {
            coef: vec![0.0; p - 1],
            tuning: NodeTuning {
                node: t % p,
                network: (t / p) as u8 + 1,
                failure: Some(e.to_string()),
                ..Default::default()
            },
        })?;
        let mut gammas = [DMatrix::zeros(p, p), DMatrix::zeros(p, p)];
        let mut tuning = Vec::with_capacity(2 * p);
        for (t, fit) in fits.into_iter().enumerate() {
            let (k, i) = (t / p, t % p);
            for (pos, j) in others(p, i).into_iter().enumerate() {
                gammas[k][(j, i)] = fit.coef[pos];
            }
            tuning.push(fit.tuning);
        }
        let [gamma1, gamma2] = gammas;
        let report = naive_labels(&gamma1, &gamma2, config.classify_tol);
        Ok(NaiveResult {
            gamma1,
            gamma2,
            report,
            tuning,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ridge_fit;
    use crate::solver::{adalasso_fit, AdaLassoProblem};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64, n: usize, p: usize, q: usize) -> ObservationPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (x1, x2) = (draw(n, q), draw(n, q));
        let y1 = &x1 * draw(q, p) + draw(n, p) * 0.1;
        let y2 = &x2 * draw(q, p) + draw(n, p) * 0.1;
        let anchors: Vec<Vec<usize>> = (0..p).map(|i| vec![i % q]).collect();
        ObservationPair::new(
            y1,
            x1,
            y2,
            x2,
            anchors.clone(),
            anchors,
            (0..p).map(|i| format!("n{i}")).collect(),
            (0..q).map(|j| format!("x{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_calibration_reproduces_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = DMatrix::from_fn(100, 300, |_, _| rng.random_range(-1.0..1.0));
        let y = x.column(4) * 1.5 - x.column(40) + x.column(271) * 0.7;
        let grid = PipelineConfig::default().ridge_grid(100);
        let c = calibrate_node(&y, &x, 63, &grid, 1).unwrap();
        assert!(c.screen.selected.len() == 63);
        assert!((&c.y_hat - &y).norm() / y.norm() <= 1e-3);
        let support: Vec<usize> = c.pi_hat.iter().map(|(j, _)| *j).collect();
        assert!(support.iter().all(|j| c.screen.selected.contains(j)));
    }

    #[test]
    fn calibration_matches_scripted_reference() {
        let pair = random_pair(41, 50, 3, 3);
        let config = PipelineConfig::default();
        let calib = calibrate_all(&pair, &config).unwrap();
        for k in 0..2 {
            let net = pair.network(k);
            let grid = config.ridge_grid(net.n());
            for i in 0..3 {
                let y = net.y.column(i).into_owned();
                // reference: dense GCV over the grid, then a direct ridge solve
                let gcv: Vec<f64> = grid
                    .iter()
                    .map(|&l| {
                        let a = &net.x * (net.x.tr_mul(&net.x) + DMatrix::identity(3, 3) * l)
                            .try_inverse()
                            .unwrap()
                            * net.x.transpose();
                        let resid = (DMatrix::identity(50, 50) - &a) * &y;
                        let tr = 50.0 - a.trace();
                        (resid.norm_squared() / 50.0) / (tr / 50.0).powi(2)
                    })
                    .collect();
                let best = grid[argmin_grid(&grid, &gcv)];
                let beta = ridge_fit(&net.x, &y, best).unwrap();
                let yhat = &net.x * beta;
                assert_eq!(calib.networks[k].ridge_lambda[i], best);
                assert_relative_eq!(calib.networks[k].y_hat.column(i).into_owned(), yhat, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn calibration_reconstruction_identity() {
        let pair = random_pair(42, 20, 4, 40);
        let calib = calibrate_all(&pair, &PipelineConfig::default()).unwrap();
        for k in 0..2 {
            let x = &pair.network(k).x;
            for i in 0..4 {
                let mut pi = DVector::zeros(40);
                for &(j, v) in &calib.networks[k].pi_hat[i] {
                    pi[j] = v;
                    assert!(calib.networks[k].screens[i].selected.contains(&j));
                }
                assert_relative_eq!(x * pi, calib.networks[k].y_hat.column(i).into_owned(), epsilon = 1e-12);
            }
        }
        let again = calibrate_all(&pair, &PipelineConfig::default()).unwrap();
        assert_eq!(calib.networks[0].y_hat, again.networks[0].y_hat);
    }

    #[test]
    fn single_node_pair() {
        let pair = random_pair(43, 30, 1, 2);
        let calib = calibrate_all(&pair, &PipelineConfig::default()).unwrap();
        assert_eq!(calib.networks[1].y_hat.ncols(), 1);
    }

    #[test]
    fn projection_removes_anchors() {
        let pair = random_pair(44, 40, 4, 6);
        let calib = calibrate_all(&pair, &PipelineConfig::default()).unwrap();
        for i in 0..4 {
            let prob = StackedNodeProblem::assemble(i, &pair, &calib);
            for k in 0..2 {
                let hx = Annihilator::new(&prob.anchors[k]).unwrap().apply(&prob.anchors[k]);
                assert!(hx.amax() <= 1e-8);
            }
            let (_, z) = prob.projected().unwrap();
            let h = 3;
            // left half of each row block mirrors the right half up to sign
            for r in 0..80 {
                let s = if r < 40 { 1.0 } else { -1.0 };
                for c in 0..h {
                    assert_eq!(z[(r, h + c)], s * z[(r, c)]);
                }
            }
        }
    }

    /// The per-network ridge split reproduces a ridge fit on the explicit
    /// stacked design, and the fit path agrees with a direct solve.
    #[test]
    fn stacked_ridge_and_lasso_match_explicit_design() {
        let pair = random_pair(45, 40, 4, 6);
        let calib = calibrate_all(&pair, &PipelineConfig::default()).unwrap();
        let node = 2;
        let (y, z) = StackedNodeProblem::assemble(node, &pair, &calib).projected().unwrap();
        let blocks: Vec<ProjectedBlock> = (0..2)
            .map(|k| ProjectedBlock::new(node, pair.network(k), &calib.networks[k].y_hat).unwrap())
            .collect();
        let lambda = 3.0;
        let direct = ridge_fit(&z, &y, lambda).unwrap();
        let g: Vec<DVector<f64>> = blocks.iter().map(|b| ridge_fit(&b.design, &b.response, lambda / 2.0).unwrap()).collect();
        let (bp, bm) = crate::model::reparameterize(g[0].as_slice(), g[1].as_slice()).unwrap();
        for j in 0..3 {
            assert_relative_eq!(direct[j], bp[j], epsilon = 1e-10);
            assert_relative_eq!(direct[3 + j], bm[j], epsilon = 1e-10);
        }

        // joint GCV equals the dense hat-matrix GCV of the stacked design
        let spectra: Vec<RidgeSpectrum> = blocks.iter().map(|b| b.spectrum().unwrap()).collect();
        let rss = spectra[0].rss(lambda / 2.0) + spectra[1].rss(lambda / 2.0);
        let dof = spectra[0].dof(lambda / 2.0) + spectra[1].dof(lambda / 2.0);
        let a = &z * (z.tr_mul(&z) + DMatrix::identity(6, 6) * lambda).try_inverse().unwrap() * z.transpose();
        let dense_rss = ((DMatrix::identity(80, 80) - &a) * &y).norm_squared();
        assert_relative_eq!(rss, dense_rss, max_relative = 1e-8);
        assert_relative_eq!(dof, a.trace(), max_relative = 1e-8);

        let w = vec![1.0, 2.0, 0.5, 1.5, 1.0, 3.0];
        let prob = AdaLassoProblem::new(z, y, w.clone(), 0.01).unwrap();
        let want = adalasso_fit(&prob, 1e-12, 100_000).unwrap();
        let mut sys = system_of(blocks.iter().map(|b| (b.gram.clone(), b.xty.clone(), b.yty, b.n())).collect());
        let got = crate::solver::solve_path(&mut sys, &w, &[0.01], 0, CdSettings { tol: 1e-12, max_sweeps: 100_000 }, |_, _| true);
        for j in 0..6 {
            assert_relative_eq!(got.beta[j], want.beta[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn swap_negates_differential_exactly() {
        let pair = random_pair(46, 40, 5, 8);
        let config = PipelineConfig {
            seed: 3,
            ..Default::default()
        };
        let a = rednet_run(&pair, &config).unwrap();
        let b = rednet_run(&pair.swapped(), &config).unwrap();
        for (x, y) in a.estimate.beta_plus.iter().zip(b.estimate.beta_plus.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.estimate.beta_minus.iter().zip(b.estimate.beta_minus.iter()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn identical_networks_have_no_differential_edges() {
        let pair = random_pair(47, 40, 5, 8).duplicated(0);
        let r = rednet_run(&pair, &PipelineConfig::default()).unwrap();
        assert!(r.estimate.beta_minus.iter().all(|v| *v == 0.0));
        assert_eq!(r.report.count(EdgeLabel::Differential), 0);
        let naive = naive_run(&pair, &PipelineConfig::default()).unwrap();
        assert_eq!(naive.report.count(EdgeLabel::Differential), 0);
        assert_eq!(naive.gamma1, naive.gamma2);
    }

    #[test]
    fn injected_calibration_matches_end_to_end() {
        let pair = random_pair(48, 30, 4, 6);
        let config = PipelineConfig::default();
        let calib = calibrate_all(&pair, &config).unwrap();
        let a = rednet_run(&pair, &config).unwrap();
        let b = rednet_run_with_calibration(&pair, &calib, &config).unwrap();
        assert_eq!(a.estimate.beta_plus, b.estimate.beta_plus);
        assert_eq!(a.estimate.beta_minus, b.estimate.beta_minus);
        let g = a.estimate.gamma1() - a.estimate.gamma2();
        assert_relative_eq!(g, a.estimate.beta_minus * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn node_results_do_not_depend_on_other_nodes() {
        let pair = random_pair(49, 30, 4, 6);
        let config = PipelineConfig::default();
        let calib = calibrate_all(&pair, &config).unwrap();
        let all = rednet_run_with_calibration(&pair, &calib, &config).unwrap();
        let one = construct_node(2, &pair, &calib, &config).unwrap();
        for (pos, j) in others(4, 2).into_iter().enumerate() {
            assert_eq!(all.estimate.beta_plus[(j, 2)], one.beta_plus[pos]);
            assert_eq!(all.estimate.beta_minus[(j, 2)], one.beta_minus[pos]);
        }
    }

    #[test]
    fn converged_fits_satisfy_kkt() {
        let pair = random_pair(50, 40, 5, 8);
        let r = rednet_run(&pair, &PipelineConfig::default()).unwrap();
        for t in &r.estimate.tuning {
            assert!(t.converged);
            assert!(t.kkt <= 1e-6, "kkt {}", t.kkt);
        }
    }

    #[test]
    fn anchor_problems_are_reported() {
        let pair = random_pair(51, 30, 3, 5);
        let nets = pair.networks().clone();
        let mut bad = nets.clone();
        bad[0].anchors[1] = vec![0];
        let shared = ObservationPair::from_networks(bad, pair.node_names.clone(), pair.exo_names.clone());
        let err = rednet_run(&shared, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AnchorViolation(_)));
        let permissive = PipelineConfig {
            permissive: true,
            ..Default::default()
        };
        assert!(rednet_run(&shared, &permissive).is_ok());

        let mut collinear = nets;
        collinear[1].anchors[0] = vec![3, 3];
        let pair = ObservationPair::from_networks(collinear, pair.node_names.clone(), pair.exo_names.clone());
        let err = rednet_run(&pair, &permissive.clone()).map(|r| r.estimate.tuning[0].failure.clone());
        assert!(err.unwrap().is_some());
        let strict = PipelineConfig::default();
        let err = rednet_run(&pair, &strict).unwrap_err();
        assert!(matches!(err, Error::NodeFailures { failed: 1, .. }));
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let c = PipelineConfig {
            cv_folds: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            lambda_ratio: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
