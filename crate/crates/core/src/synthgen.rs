//! Synthetic paired networks with known shared, sign-flipped and
//! network-specific effects.

use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnchorSets, EdgeReport, ObservationPair, SemModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub p_total: usize,
    /// Nodes `0..sub_p` form the subnetwork that carries differences.
    pub sub_p: usize,
    /// Expected in-degree; 1 for sparse, 3 for dense.
    pub avg_degree: f64,
    pub acyclic: bool,
    pub n_opposite: usize,
    pub n_unique_each: usize,
    /// Effect magnitudes are uniform on `[lo, hi]` with a random sign.
    pub effect_range: (f64, f64),
    pub noise_sd: f64,
    /// Probabilities of the genotype values 0, 1, 2.
    pub genotype_probs: [f64; 3],
    /// Use one exogenous matrix for both networks (requires `n1 == n2`).
    pub shared_x: bool,
    pub n1: usize,
    pub n2: usize,
    /// Smallest allowed singular value of `I − Γ`.
    pub stability_floor: f64,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            p_total: 200,
            sub_p: 30,
            avg_degree: 1.0,
            acyclic: true,
            n_opposite: 5,
            n_unique_each: 5,
            effect_range: (0.3, 0.8),
            noise_sd: 0.1,
            genotype_probs: [0.25, 0.5, 0.25],
            shared_x: false,
            n1: 250,
            n2: 250,
            stability_floor: 0.1,
            seed: 0,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (lo, hi) = self.effect_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("effect range must satisfy 0 < lo < hi, got ({lo}, {hi})"));
        }
        let total: f64 = self.genotype_probs.iter().sum();
        if self.genotype_probs.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("genotype probabilities must be nonnegative and sum to 1".into());
        }
        if self.p_total == 0 || self.sub_p > self.p_total {
            return bad(format!("need 0 < p_total and sub_p <= p_total, got {} and {}", self.p_total, self.sub_p));
        }
        if !(self.avg_degree >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("avg_degree and noise_sd must be nonnegative".into());
        }
        if self.n1 < 2 || self.n2 < 2 {
            return bad("each network needs at least 2 samples".into());
        }
        if self.shared_x && self.n1 != self.n2 {
            return bad("shared_x requires n1 == n2".into());
        }
        if !(self.stability_floor > 0.0 && self.stability_floor < 1.0) {
            return bad("stability_floor must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// Ground-truth category of an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Absent,
    Common,
    Opposite,
    Unique1,
    Unique2,
    /// Present in both networks with different values, not simply negated.
    Shifted,
}

impl TruthLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TruthLabel::Absent => "absent",
            TruthLabel::Common => "common",
            TruthLabel::Opposite => "opposite",
            TruthLabel::Unique1 => "unique1",
            TruthLabel::Unique2 => "unique2",
            TruthLabel::Shifted => "shifted",
        }
    }

    pub fn is_differential(&self) -> bool {
        matches!(
            self,
            TruthLabel::Opposite | TruthLabel::Unique1 | TruthLabel::Unique2 | TruthLabel::Shifted
        )
    }

    fn classify(g1: f64, g2: f64) -> TruthLabel {
        match (g1 != 0.0, g2 != 0.0) {
            (false, false) => TruthLabel::Absent,
            (true, false) => TruthLabel::Unique1,
            (false, true) => TruthLabel::Unique2,
            _ if g1 == g2 => TruthLabel::Common,
            _ if g1 == -g2 => TruthLabel::Opposite,
            _ => TruthLabel::Shifted,
        }
    }
}

impl std::str::FromStr for TruthLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "absent" => TruthLabel::Absent,
            "common" => TruthLabel::Common,
            "opposite" => TruthLabel::Opposite,
            "unique1" => TruthLabel::Unique1,
            "unique2" => TruthLabel::Unique2,
            "shifted" => TruthLabel::Shifted,
            other => return Err(Error::InvalidArgument(format!("unknown truth label {other:?}"))),
        })
    }
}

/// Truth for every ordered pair, in the same order as [`EdgeReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct TruthLabels {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// Nodes included in scoring.
    pub scored: Vec<bool>,
    labels: Vec<TruthLabel>,
}

impl TruthLabels {
    pub fn from_gammas(gamma1: DMatrix<f64>, gamma2: DMatrix<f64>, scored: Vec<bool>) -> Result<Self> {
        let p = gamma1.nrows();
        if gamma1.shape() != (p, p) || gamma2.shape() != (p, p) || scored.len() != p {
            return Err(Error::Dimension("truth matrices must be square and agree".into()));
        }
        let mut labels = Vec::with_capacity(p * p.saturating_sub(1));
        for s in 0..p {
            for t in (0..p).filter(|&t| t != s) {
                labels.push(TruthLabel::classify(gamma1[(s, t)], gamma2[(s, t)]));
            }
        }
        Ok(TruthLabels {
            gamma1,
            gamma2,
            scored,
            labels,
        })
    }

    pub fn p(&self) -> usize {
        self.gamma1.nrows()
    }

    pub fn label(&self, source: usize, target: usize) -> TruthLabel {
        self.labels[EdgeReport::index_of(self.p(), source, target)]
    }

    /// Both endpoints lie in the scored node set.
    pub fn is_scored(&self, source: usize, target: usize) -> bool {
        self.scored[source] && self.scored[target]
    }

    pub fn count(&self, label: TruthLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn count_differential(&self) -> usize {
        self.labels.iter().filter(|l| l.is_differential()).count()
    }
}

pub type EdgeList = Vec<(usize, usize)>;

/// Edge sets of a generated pair. Shared and opposite edges exist in both
/// networks; unique edges in one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTopology {
    pub p: usize,
    pub shared: EdgeList,
    pub opposite: EdgeList,
    pub unique1: EdgeList,
    pub unique2: EdgeList,
    /// Position of each node in the ordering that acyclic edges respect.
    pub rank: Vec<usize>,
}

impl PairTopology {
    pub fn network_edges(&self, k: usize) -> EdgeList {
        let unique = if k == 0 { &self.unique1 } else { &self.unique2 };
        self.shared
            .iter()
            .chain(&self.opposite)
            .chain(unique)
            .copied()
            .collect()
    }
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Draws the two edge sets.
pub fn gen_topology(cfg: &PairConfig, rng: &mut impl Rng) -> Result<PairTopology> {
    cfg.validate()?;
    let p = cfg.p_total;
    let mut rank: Vec<usize> = (0..p).collect();
    rank.shuffle(rng);

    let e_sub = (cfg.sub_p as f64 * cfg.avg_degree).round() as usize;
    let needed = cfg.n_opposite + cfg.n_unique_each;
    if e_sub < needed {
        return Err(Error::Infeasible(format!(
            "a subnetwork of {} nodes with degree {} has {e_sub} edges, fewer than the {needed} \
             opposite and unique edges per network",
            cfg.sub_p, cfg.avg_degree
        )));
    }
    let base = e_sub - cfg.n_unique_each;
    let sub_draws = base + 2 * cfg.n_unique_each;
    let sub_pairs = cfg.sub_p * cfg.sub_p.saturating_sub(1) / 2;
    if sub_draws > sub_pairs {
        return Err(Error::Infeasible(format!(
            "{sub_draws} subnetwork edges requested but only {sub_pairs} node pairs exist"
        )));
    }

    let orient = |a: usize, b: usize| if rank[a] < rank[b] { (a, b) } else { (b, a) };
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut sub_edges = Vec::with_capacity(sub_draws);
    while sub_edges.len() < sub_draws {
        let a = rng.random_range(0..cfg.sub_p);
        let b = rng.random_range(0..cfg.sub_p);
        if a != b && used.insert(unordered(a, b)) {
            sub_edges.push(orient(a, b));
        }
    }
    let mut rest = sub_edges.into_iter();
    let opposite: EdgeList = rest.by_ref().take(cfg.n_opposite).collect();
    let mut shared: EdgeList = rest.by_ref().take(base - cfg.n_opposite).collect();
    let unique1: EdgeList = rest.by_ref().take(cfg.n_unique_each).collect();
    let unique2: EdgeList = rest.collect();

    // edges into nodes outside the subnetwork, identical in both networks
    let outside = p - cfg.sub_p;
    let e_out = (outside as f64 * cfg.avg_degree).round() as usize;
    let mut placed = 0;
    let mut attempts = 0usize;
    while placed < e_out && outside > 0 && p > 1 {
        attempts += 1;
        if attempts > 1000 * (e_out + 1) {
            return Err(Error::Infeasible(format!(
                "could not place {e_out} edges into the {outside} nodes outside the subnetwork"
            )));
        }
        let v = cfg.sub_p + rng.random_range(0..outside);
        let u = rng.random_range(0..p);
        if u == v {
            continue;
        }
        let (s, t) = orient(u, v);
        if t < cfg.sub_p || !used.insert(unordered(s, t)) {
            continue;
        }
        shared.push((s, t));
        placed += 1;
    }

    let mut topo = PairTopology {
        p,
        shared,
        opposite,
        unique1,
        unique2,
        rank,
    };
    if !cfg.acyclic {
        add_back_edge(&mut topo, cfg.sub_p, &mut used, rng);
    }
    Ok(topo)
}

/// Closes a directed cycle inside the subnetwork with one shared edge from
/// a node reachable from some edge's head back to its tail.
fn add_back_edge(
    topo: &mut PairTopology,
    sub_p: usize,
    used: &mut HashSet<(usize, usize)>,
    rng: &mut impl Rng,
) {
    let sub: EdgeList = topo
        .shared
        .iter()
        .chain(&topo.opposite)
        .copied()
        .filter(|&(s, t)| s < sub_p && t < sub_p)
        .collect();
    let mut adj = vec![Vec::new(); topo.p];
    for &(s, t) in &sub {
        adj[s].push(t);
    }
    let mut order: Vec<usize> = (0..sub.len()).collect();
    order.shuffle(rng);
    for e in order {
        let (u, v) = sub[e];
        // farthest node reachable from v, by breadth-first layers
        let mut seen = vec![false; topo.p];
        let mut queue = VecDeque::from([v]);
        seen[v] = true;
        let mut last = v;
        while let Some(w) = queue.pop_front() {
            last = w;
            for &x in &adj[w] {
                if !seen[x] {
                    seen[x] = true;
                    queue.push_back(x);
                }
            }
        }
        if last != u && used.insert(unordered(last, u)) {
            topo.shared.push((last, u));
            return;
        }
    }
}

fn draw_effect(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let m = rng.random_range(lo..=hi);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Assigns effect sizes to a topology.
pub fn sample_effects(
    topo: &PairTopology,
    cfg: &PairConfig,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>, TruthLabels)> {
    let p = topo.p;
    let mut g1 = DMatrix::zeros(p, p);
    let mut g2 = DMatrix::zeros(p, p);
    for &(s, t) in &topo.shared {
        let v = draw_effect(rng, cfg.effect_range);
        g1[(s, t)] = v;
        g2[(s, t)] = v;
    }
    for &(s, t) in &topo.opposite {
        let v = draw_effect(rng, cfg.effect_range);
        g1[(s, t)] = v;
        g2[(s, t)] = -v;
    }
    for &(s, t) in &topo.unique1 {
        g1[(s, t)] = draw_effect(rng, cfg.effect_range);
    }
    for &(s, t) in &topo.unique2 {
        g2[(s, t)] = draw_effect(rng, cfg.effect_range);
    }
    let scored = (0..p).map(|i| i < cfg.sub_p).collect();
    let labels = TruthLabels::from_gammas(g1.clone(), g2.clone(), scored)?;
    Ok((g1, g2, labels))
}

/// One anchor per node (`A_i = {i}`) with independently drawn effects in
/// each network.
pub fn gen_anchors_and_phi(cfg: &PairConfig, rng: &mut impl Rng) -> (AnchorSets, DMatrix<f64>, DMatrix<f64>) {
    let p = cfg.p_total;
    let anchors = (0..p).map(|i| vec![i]).collect();
    let mut draw = || {
        let mut phi = DMatrix::zeros(p, p);
        for i in 0..p {
            phi[(i, i)] = draw_effect(rng, cfg.effect_range);
        }
        phi
    };
    let phi1 = draw();
    let phi2 = draw();
    (anchors, phi1, phi2)
}

/// Smallest singular value of `I − Γ`.
pub fn check_stability(gamma: &DMatrix<f64>) -> f64 {
    let p = gamma.nrows();
    (DMatrix::identity(p, p) - gamma).singular_values().min()
}

/// Genotype-like matrix with i.i.d. entries in {0, 1, 2}.
pub fn sample_genotypes(n: usize, q: usize, probs: [f64; 3], rng: &mut impl Rng) -> DMatrix<f64> {
    let c0 = probs[0];
    let c1 = probs[0] + probs[1];
    DMatrix::from_fn(n, q, |_, _| {
        let u: f64 = rng.random();
        if u < c0 {
            0.0
        } else if u < c1 {
            1.0
        } else {
            2.0
        }
    })
}

/// Draws `n` samples from the reduced form `Y = (XΦ + E)(I − Γ)⁻¹`.
/// Returns `(y, x)` with `x` on its raw genotype scale; `x` is `shared_x`
/// when given, otherwise freshly drawn.
pub fn sample_data(
    model: &SemModel,
    n: usize,
    shared_x: Option<&DMatrix<f64>>,
    genotype_probs: [f64; 3],
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = model.p();
    let q = model.phi.nrows();
    let x = match shared_x {
        Some(x) if x.shape() != (n, q) => {
            return Err(Error::Dimension(format!(
                "shared exogenous matrix is {:?}, expected ({n}, {q})",
                x.shape()
            )))
        }
        Some(x) => x.clone(),
        None => sample_genotypes(n, q, genotype_probs, rng),
    };
    let mut rhs = &x * &model.phi;
    for i in 0..p {
        let sd = model.sigma[i];
        for r in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            rhs[(r, i)] += sd * z;
        }
    }
    let system = (DMatrix::identity(p, p) - &model.gamma).transpose();
    let lu = system.lu();
    let yt = lu
        .solve(&rhs.transpose())
        .ok_or_else(|| Error::Singular("I - gamma is singular".into()))?;
    Ok((yt.transpose(), x))
}

/// Everything produced by one simulation.
#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub pair: ObservationPair,
    pub models: [SemModel; 2],
    pub truth: TruthLabels,
    /// Exogenous matrices before standardization.
    pub x_raw: [DMatrix<f64>; 2],
    pub topology: PairTopology,
}

const MAX_STABILITY_DRAWS: usize = 100;

pub fn simulate(cfg: &PairConfig) -> Result<SimulatedPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topology = gen_topology(cfg, &mut rng)?;
    let mut drawn = None;
    for _ in 0..MAX_STABILITY_DRAWS {
        let (g1, g2, truth) = sample_effects(&topology, cfg, &mut rng)?;
        if check_stability(&g1) >= cfg.stability_floor && check_stability(&g2) >= cfg.stability_floor {
            drawn = Some((g1, g2, truth));
            break;
        }
    }
    let (g1, g2, truth) = drawn.ok_or_else(|| {
        Error::Infeasible(format!(
            "no effect draw kept the smallest singular value of I - gamma above {} in {MAX_STABILITY_DRAWS} tries",
            cfg.stability_floor
        ))
    })?;
    let (anchors, phi1, phi2) = gen_anchors_and_phi(cfg, &mut rng);
    let p = cfg.p_total;
    let sigma = vec![cfg.noise_sd; p];
    let m1 = SemModel::new(g1, phi1, sigma.clone())?;
    let m2 = SemModel::new(g2, phi2, sigma)?;
    let (y1, x1) = sample_data(&m1, cfg.n1, None, cfg.genotype_probs, &mut rng)?;
    let shared = cfg.shared_x.then_some(&x1);
    let (y2, x2) = sample_data(&m2, cfg.n2, shared, cfg.genotype_probs, &mut rng)?;
    let pair = ObservationPair::new(
        y1,
        x1.clone(),
        y2,
        x2.clone(),
        anchors.clone(),
        anchors,
        (0..p).map(|i| format!("node{i}")).collect(),
        (0..p).map(|j| format!("exo{j}")).collect(),
    )?;
    Ok(SimulatedPair {
        pair,
        models: [m1, m2],
        truth,
        x_raw: [x1, x2],
        topology,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reparameterize, validate_anchors};
    use approx::assert_relative_eq;

    fn small() -> PairConfig {
        PairConfig {
            p_total: 40,
            sub_p: 20,
            n1: 60,
            n2: 60,
            ..Default::default()
        }
    }

    /// Kahn's algorithm: true iff the edges admit a topological order.
    fn is_acyclic(p: usize, edges: &[(usize, usize)]) -> bool {
        let mut indeg = vec![0; p];
        let mut adj = vec![Vec::new(); p];
        for &(s, t) in edges {
            adj[s].push(t);
            indeg[t] += 1;
        }
        let mut queue: Vec<usize> = (0..p).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &t in &adj[v] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    queue.push(t);
                }
            }
        }
        seen == p
    }

    #[test]
    fn infeasible_degree_is_rejected() {
        let cfg = PairConfig {
            sub_p: 5,
            avg_degree: 1.0,
            ..small()
        };
        let err = gen_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn acyclic_topology_has_topological_order() {
        for seed in 0..10 {
            let topo = gen_topology(&small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for k in 0..2 {
                let edges = topo.network_edges(k);
                assert!(is_acyclic(40, &edges));
                assert!(edges.iter().all(|&(s, t)| topo.rank[s] < topo.rank[t]));
            }
        }
    }

    #[test]
    fn cyclic_topology_has_a_cycle_in_the_subnetwork() {
        let cfg = PairConfig {
            acyclic: false,
            avg_degree: 3.0,
            ..small()
        };
        for seed in 0..10 {
            let topo = gen_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let sub: Vec<(usize, usize)> = topo
                .network_edges(0)
                .into_iter()
                .filter(|&(s, t)| s < 20 && t < 20)
                .collect();
            assert!(!is_acyclic(40, &sub));
        }
    }

    #[test]
    fn networks_differ_only_by_unique_edges() {
        let topo = gen_topology(&small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a: HashSet<_> = topo.network_edges(0).into_iter().collect();
        let b: HashSet<_> = topo.network_edges(1).into_iter().collect();
        let only_a: HashSet<_> = a.difference(&b).copied().collect();
        let only_b: HashSet<_> = b.difference(&a).copied().collect();
        assert_eq!(only_a, topo.unique1.iter().copied().collect());
        assert_eq!(only_b, topo.unique2.iter().copied().collect());
        // differences stay inside the subnetwork
        assert!(only_a.iter().chain(&only_b).all(|&(s, t)| s < 20 && t < 20));
    }

    #[test]
    fn effects_and_labels() {
        let cfg = small();
        let sim = simulate(&cfg).unwrap();
        let (g1, g2) = (&sim.truth.gamma1, &sim.truth.gamma2);
        for v in g1.iter().chain(g2.iter()).filter(|v| **v != 0.0) {
            assert!((0.3..=0.8).contains(&v.abs()));
        }
        for &(s, t) in &sim.topology.opposite {
            assert_eq!(g1[(s, t)], -g2[(s, t)]);
        }
        assert_eq!(sim.truth.count_differential(), 15);
        assert_eq!(sim.truth.count(TruthLabel::Opposite), 5);
        assert_eq!(sim.truth.count(TruthLabel::Unique1), 5);

        // counts two ways: labels vs the supports of the reparameterized pair
        let (mut diff, mut common) = (0, 0);
        for s in 0..40 {
            for t in (0..40).filter(|&t| t != s) {
                let (bp, bm) = reparameterize(&[g1[(s, t)]], &[g2[(s, t)]]).unwrap();
                let label = sim.truth.label(s, t);
                assert_eq!(bm[0] != 0.0, label.is_differential());
                if bm[0] != 0.0 {
                    diff += 1;
                } else if bp[0] != 0.0 {
                    common += 1;
                }
            }
        }
        assert_eq!(diff, sim.truth.count_differential());
        assert_eq!(common, sim.truth.count(TruthLabel::Common));
    }

    #[test]
    fn anchors_are_valid() {
        let (anchors, phi1, _) = gen_anchors_and_phi(&small(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(phi1.nrows(), 40);
        for i in 0..40 {
            assert_eq!(anchors[i], vec![i]);
            let support: Vec<usize> = (0..40).filter(|&j| phi1[(j, i)] != 0.0).collect();
            assert_eq!(support, vec![i]);
        }
        let sim = simulate(&small()).unwrap();
        assert!(validate_anchors(&sim.pair).is_ok());
        assert_eq!(sim.pair.q(), sim.pair.p());
    }

    #[test]
    fn stability_examples() {
        assert_relative_eq!(check_stability(&DMatrix::zeros(4, 4)), 1.0, epsilon = 1e-12);
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 1)] = 0.9;
        g[(1, 0)] = 0.9;
        assert_relative_eq!(check_stability(&g), 0.1, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let upper = DMatrix::from_fn(6, 6, |r, c| if c > r { rng.random_range(-3.0..3.0) } else { 0.0 });
        assert!(check_stability(&upper) > 0.0);
        assert_relative_eq!((DMatrix::identity(6, 6) - upper).determinant(), 1.0, epsilon = 1e-9);
    }

    fn model(p: usize, gamma: DMatrix<f64>, sd: f64, rng: &mut ChaCha8Rng) -> SemModel {
        let phi = DMatrix::from_fn(p, p, |r, c| if r == c { draw_effect(rng, (0.3, 0.8)) } else { 0.0 });
        SemModel::new(gamma, phi, vec![sd; p]).unwrap()
    }

    #[test]
    fn sampling_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(5, DMatrix::zeros(5, 5), 0.0, &mut rng);
        let (y, x) = sample_data(&m, 30, None, [0.25, 0.5, 0.25], &mut rng).unwrap();
        assert_eq!(y, &x * &m.phi);

        let sim = simulate(&small()).unwrap();
        let noiseless = SemModel::new(sim.models[0].gamma.clone(), sim.models[0].phi.clone(), vec![0.0; 40]).unwrap();
        let (y, x) = sample_data(&noiseless, 50, None, [0.25, 0.5, 0.25], &mut rng).unwrap();
        let lhs = &y * (DMatrix::identity(40, 40) - &noiseless.gamma);
        assert!((lhs - &x * &noiseless.phi).amax() <= 1e-10);
    }

    #[test]
    fn acyclic_sampling_matches_forward_substitution() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let topo = gen_topology(&cfg, &mut rng).unwrap();
        let (g1, _, _) = sample_effects(&topo, &cfg, &mut rng).unwrap();
        let m = model(40, g1, 0.0, &mut rng);
        let (y, x) = sample_data(&m, 20, None, cfg.genotype_probs, &mut rng).unwrap();
        let mut order: Vec<usize> = (0..40).collect();
        order.sort_by_key(|&v| topo.rank[v]);
        let base = &x * &m.phi;
        let mut want = DMatrix::zeros(20, 40);
        for &v in &order {
            for r in 0..20 {
                let mut acc = base[(r, v)];
                for u in 0..40 {
                    acc += m.gamma[(u, v)] * want[(r, u)];
                }
                want[(r, v)] = acc;
            }
        }
        assert!((y - want).amax() <= 1e-10);
    }

    #[test]
    fn genotype_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = sample_genotypes(500, 200, [0.25, 0.5, 0.25], &mut rng);
        let total = x.len() as f64;
        for (value, prob) in [(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)] {
            let freq = x.iter().filter(|v| **v == value).count() as f64 / total;
            let band = 3.0 * (prob * (1.0 - prob) / total).sqrt();
            assert!((freq - prob).abs() <= band, "{value}: {freq}");
        }
    }

    #[test]
    fn shared_x_and_determinism() {
        let cfg = PairConfig {
            shared_x: true,
            ..small()
        };
        let a = simulate(&cfg).unwrap();
        assert_eq!(a.x_raw[0], a.x_raw[1]);
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.pair.network(1).y, b.pair.network(1).y);
        assert_eq!(a.truth, b.truth);
        let c = PairConfig {
            shared_x: true,
            n2: 61,
            ..small()
        };
        assert!(simulate(&c).is_err());
    }
}
