//! Weighted-ℓ1 (adaptive lasso) regression by cyclic coordinate descent.
//!
//! The objective is `(1/n)‖y − Zβ‖² + λ Σ ω_j |β_j|`. Coordinate descent
//! runs in covariance form: it keeps the gradient `g = Zᵀy − ZᵀZβ` and only
//! touches the Gram column of a coordinate when that coordinate moves.
//!
//! A [`GramSystem`] is either a single design or the stacked two-network
//! design `[[A, A], [B, −B]]`. The stacked Gram matrix is never formed; its
//! columns are assembled from the two per-network Gram columns, which keeps
//! memory at two `h × h` blocks and makes the arithmetic exactly
//! antisymmetric under exchanging the networks.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::log_space;
use crate::par;

/// Per-network Gram blocks wider than this are computed column by column
/// on demand instead of up front.
pub(crate) const DENSE_GRAM_LIMIT: usize = 2048;

/// An adaptive-lasso instance.
#[derive(Debug, Clone)]
pub struct AdaLassoProblem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
}

impl AdaLassoProblem {
    pub fn new(
        design: DMatrix<f64>,
        response: DVector<f64>,
        weights: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows, response has {}",
                design.nrows(),
                response.len()
            )));
        }
        if weights.len() != design.ncols() {
            return Err(Error::Dimension(format!(
                "{} weights for {} columns",
                weights.len(),
                design.ncols()
            )));
        }
        check_weights(&weights)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(AdaLassoProblem {
            design,
            response,
            weights,
            lambda,
        })
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let n = self.response.len() as f64;
        let rss = (&self.response - &self.design * beta).norm_squared();
        let pen: f64 = self
            .weights
            .iter()
            .zip(beta.iter())
            .map(|(w, b)| w * b.abs())
            .sum();
        rss / n + self.lambda * pen
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "adaptive weights must be finite and positive, got {w}"
        )));
    }
    Ok(())
}

/// `ω_j = 1 / (|β_init_j| + ε)`.
pub fn adaptive_weights(beta_init: &[f64], epsilon: f64) -> Vec<f64> {
    beta_init.iter().map(|b| 1.0 / (b.abs() + epsilon)).collect()
}

/// Default guard: `1e-4 · (max_j |β_init_j| + 1e-12)`.
pub fn default_epsilon(beta_init: &[f64]) -> f64 {
    1e-4 * (beta_init.iter().fold(0.0f64, |m, b| m.max(b.abs())) + 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    /// Coordinate-descent sweeps (full and active-set) used.
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CdSettings {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdSettings {
    fn default() -> Self {
        CdSettings {
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

/// Gram matrix of one network's design, dense or filled lazily.
#[derive(Debug, Clone)]
pub(crate) enum NetGram {
    Dense(DMatrix<f64>),
    Lazy {
        design: DMatrix<f64>,
        cache: Vec<Option<Vec<f64>>>,
    },
}

impl NetGram {
    pub(crate) fn from_design(design: &DMatrix<f64>) -> Self {
        if design.ncols() <= DENSE_GRAM_LIMIT {
            NetGram::Dense(design.tr_mul(design))
        } else {
            NetGram::Lazy {
                design: design.clone(),
                cache: vec![None; design.ncols()],
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            NetGram::Dense(g) => g.ncols(),
            NetGram::Lazy { design, .. } => design.ncols(),
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        match self {
            NetGram::Dense(g) => (0..g.ncols()).map(|j| g[(j, j)]).collect(),
            NetGram::Lazy { design, .. } => design.column_iter().map(|c| c.norm_squared()).collect(),
        }
    }

    fn prepare(&mut self, j: usize) {
        if let NetGram::Lazy { design, cache } = self {
            if cache[j].is_none() {
                let col = design.tr_mul(&design.column(j));
                cache[j] = Some(col.as_slice().to_vec());
            }
        }
    }

    /// Column `j`; [`prepare`](Self::prepare) must have been called for
    /// lazy blocks.
    fn column(&self, j: usize) -> &[f64] {
        match self {
            NetGram::Dense(g) => {
                let h = g.nrows();
                &g.as_slice()[j * h..(j + 1) * h]
            }
            NetGram::Lazy { cache, .. } => cache[j].as_deref().expect("column prepared"),
        }
    }
}

/// Sufficient statistics `(ZᵀZ, Zᵀy, yᵀy, n)` for a least-squares loss.
#[derive(Debug, Clone)]
pub(crate) struct GramSystem {
    nets: Vec<NetGram>,
    h: usize,
    pub(crate) xty: DVector<f64>,
    pub(crate) yty: f64,
    pub(crate) n: usize,
    diag: Vec<f64>,
}

impl GramSystem {
    pub(crate) fn single(net: NetGram, xty: DVector<f64>, yty: f64, n: usize) -> Self {
        let diag = net.diagonal();
        GramSystem {
            h: net.dim(),
            nets: vec![net],
            xty,
            yty,
            n,
            diag,
        }
    }

    /// Stacked design `[[A, A], [B, −B]]` with coefficients `[β⁺; β⁻]`.
    pub(crate) fn stacked(
        a: (NetGram, DVector<f64>, f64, usize),
        b: (NetGram, DVector<f64>, f64, usize),
    ) -> Self {
        let h = a.0.dim();
        debug_assert_eq!(h, b.0.dim());
        let mut xty = DVector::zeros(2 * h);
        for t in 0..h {
            xty[t] = a.1[t] + b.1[t];
            xty[h + t] = a.1[t] - b.1[t];
        }
        let da = a.0.diagonal();
        let db = b.0.diagonal();
        let diag_half: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x + y).collect();
        let mut diag = diag_half.clone();
        diag.extend_from_slice(&diag_half);
        GramSystem {
            nets: vec![a.0, b.0],
            h,
            xty,
            yty: a.2 + b.2,
            n: a.3 + b.3,
            diag,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.h * self.nets.len()
    }

    /// `out += alpha · (ZᵀZ)[:, k]`.
    fn axpy_column(&mut self, k: usize, alpha: f64, out: &mut [f64]) {
        let h = self.h;
        if self.nets.len() == 1 {
            self.nets[0].prepare(k);
            for (o, g) in out.iter_mut().zip(self.nets[0].column(k)) {
                *o += alpha * g;
            }
            return;
        }
        let j = k % h;
        self.nets[0].prepare(j);
        self.nets[1].prepare(j);
        let c1 = self.nets[0].column(j);
        let c2 = self.nets[1].column(j);
        let (plus, minus) = out.split_at_mut(h);
        let (same, cross) = if k < h {
            (plus, minus)
        } else {
            (minus, plus)
        };
        for t in 0..h {
            same[t] += alpha * (c1[t] + c2[t]);
            cross[t] += alpha * (c1[t] - c2[t]);
        }
    }

    /// `max_j` stationarity violation for `beta` given the matching gradient.
    fn kkt(&self, weights: &[f64], lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
        let n = self.n as f64;
        beta.iter()
            .zip(grad)
            .zip(weights)
            .map(|((&b, &g), &w)| {
                let score = 2.0 * g / n;
                if b != 0.0 {
                    (score - lambda * w * b.signum()).abs()
                } else {
                    (score.abs() - lambda * w).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `1 − rss / yᵀy`.
    fn explained(&self, beta: &[f64], grad: &[f64]) -> f64 {
        let mut bx = 0.0;
        let mut bg = 0.0;
        for j in 0..beta.len() {
            bx += beta[j] * self.xty[j];
            bg += beta[j] * grad[j];
        }
        if self.yty > 0.0 {
            (bx + bg) / self.yty
        } else {
            0.0
        }
    }

    fn objective(&self, weights: &[f64], lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
        // rss = yᵀy − βᵀZᵀy − βᵀg  with g = Zᵀy − ZᵀZβ
        let mut bx = 0.0;
        let mut bg = 0.0;
        let mut pen = 0.0;
        for j in 0..beta.len() {
            bx += beta[j] * self.xty[j];
            bg += beta[j] * grad[j];
            pen += weights[j] * beta[j].abs();
        }
        (self.yty - bx - bg) / self.n as f64 + lambda * pen
    }

    /// Smallest `λ` at which `β = 0` satisfies the optimality conditions.
    pub(crate) fn null_threshold(&self, weights: &[f64]) -> f64 {
        null_lambda(self.xty.as_slice(), weights, self.n)
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent from a warm start. `grad` must equal `Zᵀy − ZᵀZβ` on
/// entry and is kept consistent. Returns `(sweeps, converged)`.
pub(crate) fn cd_solve(
    sys: &mut GramSystem,
    weights: &[f64],
    lambda: f64,
    beta: &mut [f64],
    grad: &mut [f64],
    settings: CdSettings,
) -> (usize, bool) {
    let m = sys.dim();
    let n = sys.n as f64;
    let thresholds: Vec<f64> = weights.iter().map(|w| n * lambda * w / 2.0).collect();
    let mut sweeps = 0usize;
    let mut last_obj = if cfg!(debug_assertions) {
        sys.objective(weights, lambda, beta, grad)
    } else {
        0.0
    };

    let sweep = |sys: &mut GramSystem, coords: &mut dyn Iterator<Item = usize>, beta: &mut [f64], grad: &mut [f64]| {
        let mut max_change = 0.0f64;
        for j in coords {
            let gjj = sys.diag[j];
            let old = beta[j];
            let new = if gjj > 0.0 {
                soft_threshold(grad[j] + gjj * old, thresholds[j]) / gjj
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                sys.axpy_column(j, -delta, grad);
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    };

    loop {
        let change = sweep(sys, &mut (0..m), beta, grad);
        sweeps += 1;
        if cfg!(debug_assertions) {
            let obj = sys.objective(weights, lambda, beta, grad);
            debug_assert!(
                obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                "objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }
        if change < settings.tol {
            return (sweeps, true);
        }
        if sweeps >= settings.max_sweeps {
            return (sweeps, false);
        }
        let active: Vec<usize> = (0..m).filter(|&j| beta[j] != 0.0).collect();
        let mut rounds = 0;
        loop {
            let change = sweep(sys, &mut active.iter().copied(), beta, grad);
            sweeps += 1;
            rounds += 1;
            if change < settings.tol {
                break;
            }
            if sweeps >= settings.max_sweeps {
                return (sweeps, false);
            }
            if rounds % NEWTON_AFTER == 0 {
                newton_step(sys, &active, beta, grad, &thresholds);
            }
        }
    }
}

/// Active-set sweeps between attempts at a direct solve on the support.
const NEWTON_AFTER: usize = 8;
const NEWTON_MAX_SUPPORT: usize = 2000;

/// Moves the nonzero coordinates of `β` among `candidates` along a Newton direction for the objective with
/// the current signs held fixed. The step length minimizes that quadratic
/// along the direction and is cut back where the first coordinate reaches
/// zero, so the objective never increases. Near-singular support blocks
/// get a small diagonal shift before factoring. Returns false if no move
/// was made.
fn newton_step(
    sys: &mut GramSystem,
    candidates: &[usize],
    beta: &mut [f64],
    grad: &mut [f64],
    thresholds: &[f64],
) -> bool {
    let support: Vec<usize> = candidates.iter().copied().filter(|&j| beta[j] != 0.0).collect();
    let a = support.len();
    if a == 0 || a > NEWTON_MAX_SUPPORT {
        return false;
    }
    let m = sys.dim();
    let mut cols = DMatrix::zeros(m, a);
    let mut buf = vec![0.0; m];
    for (c, &k) in support.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        sys.axpy_column(k, 1.0, &mut buf);
        cols.column_mut(c).copy_from_slice(&buf);
    }
    let block = DMatrix::from_fn(a, a, |r, c| cols[(support[r], c)]);
    // with β zero off the support, grad_A = xty_A − G_AA β_A
    let rhs = DVector::from_fn(a, |r, _| {
        let j = support[r];
        grad[j] - thresholds[j] * beta[j].signum()
    });
    let scale = support.iter().map(|&j| sys.diag[j]).fold(0.0, f64::max);
    let Some(step) = [0.0, 1e-10, 1e-6].iter().find_map(|shift| {
        let mut shifted = block.clone();
        for r in 0..a {
            shifted[(r, r)] += shift * scale;
        }
        shifted.cholesky().map(|c| c.solve(&rhs))
    }) else {
        return false;
    };
    let descent = rhs.dot(&step);
    let curvature = step.dot(&(&block * &step));
    if !(descent > 0.0 && curvature > 0.0) {
        return false;
    }
    let mut t = (descent / curvature).min(1.0);
    let mut hit = None;
    for (r, &j) in support.iter().enumerate() {
        let next = beta[j] + t * step[r];
        if next == 0.0 || next.signum() != beta[j].signum() {
            let tr = -beta[j] / step[r];
            if tr < t {
                t = tr;
                hit = Some(r);
            }
        }
    }
    for (r, &j) in support.iter().enumerate() {
        let delta = if hit == Some(r) { -beta[j] } else { t * step[r] };
        if delta == 0.0 {
            continue;
        }
        beta[j] = if hit == Some(r) { 0.0 } else { beta[j] + delta };
        for (g, c) in grad.iter_mut().zip(cols.column(r).iter()) {
            *g -= delta * c;
        }
    }
    true
}

/// One coefficient vector per grid value, warm-started down the grid.
#[derive(Clone)]
pub(crate) struct PathPoint {
    pub beta: Vec<f64>,
    /// Sweeps summed over the path so far.
    pub sweeps: usize,
    pub converged: bool,
    pub kkt: f64,
    pub explained: f64,
}

fn advance(
    sys: &mut GramSystem,
    weights: &[f64],
    lambda: f64,
    beta: &mut [f64],
    grad: &mut [f64],
    total: &mut usize,
    settings: CdSettings,
) -> PathPoint {
    let (sweeps, converged) = cd_solve(sys, weights, lambda, beta, grad, settings);
    *total += sweeps;
    PathPoint {
        kkt: sys.kkt(weights, lambda, beta, grad),
        explained: sys.explained(beta, grad),
        beta: beta.to_vec(),
        sweeps: *total,
        converged,
    }
}

/// Solves along `grid` (descending) up to and including index `last`,
/// calling `visit` at every point; `visit` returning false ends the path.
#[cfg(test)]
pub(crate) fn solve_path(
    sys: &mut GramSystem,
    weights: &[f64],
    grid: &[f64],
    last: usize,
    settings: CdSettings,
    mut visit: impl FnMut(usize, &PathPoint) -> bool,
) -> PathPoint {
    let m = sys.dim();
    let mut beta = vec![0.0; m];
    let mut grad: Vec<f64> = sys.xty.iter().copied().collect();
    let mut total = 0;
    let mut point = PathPoint {
        beta: Vec::new(),
        sweeps: 0,
        converged: true,
        kkt: 0.0,
        explained: 0.0,
    };
    for (idx, &lambda) in grid.iter().enumerate().take(last + 1) {
        point = advance(sys, weights, lambda, &mut beta, &mut grad, &mut total, settings);
        if !visit(idx, &point) {
            break;
        }
    }
    point
}

/// Fits the adaptive lasso at `prob.lambda` from a zero start.
pub fn adalasso_fit(prob: &AdaLassoProblem, tol: f64, max_iter: usize) -> Result<LassoFit> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut sys = GramSystem::single(
        NetGram::from_design(&prob.design),
        prob.design.tr_mul(&prob.response),
        prob.response.norm_squared(),
        prob.response.len(),
    );
    let mut beta = vec![0.0; sys.dim()];
    let mut grad: Vec<f64> = sys.xty.iter().copied().collect();
    let (iterations, converged) = cd_solve(
        &mut sys,
        &prob.weights,
        prob.lambda,
        &mut beta,
        &mut grad,
        CdSettings {
            tol,
            max_sweeps: max_iter.max(1),
        },
    );
    Ok(LassoFit {
        beta: DVector::from_vec(beta),
        iterations,
        converged,
    })
}

/// Largest violation of the optimality conditions at `beta`:
/// `|(2/n) z_jᵀr − λω_j sign β_j|` on the support and
/// `max(0, |(2/n) z_jᵀr| − λω_j)` off it.
pub fn kkt_residual(prob: &AdaLassoProblem, beta: &DVector<f64>) -> f64 {
    let n = prob.response.len() as f64;
    let r = &prob.response - &prob.design * beta;
    let score = prob.design.tr_mul(&r) * (2.0 / n);
    beta.iter()
        .zip(score.iter())
        .zip(&prob.weights)
        .map(|((&b, &s), &w)| {
            if b != 0.0 {
                (s - prob.lambda * w * b.signum()).abs()
            } else {
                (s.abs() - prob.lambda * w).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// `max_j 2|z_jᵀy| / (n ω_j)`: at or above this penalty the solution is 0.
pub fn null_threshold(design: &DMatrix<f64>, response: &DVector<f64>, weights: &[f64]) -> f64 {
    null_lambda(design.tr_mul(response).as_slice(), weights, response.len())
}

/// Rounded up until the solver's own thresholds cover every `|Zᵀy|`, so
/// the first coordinate pass at this value leaves `β = 0` exactly.
fn null_lambda(xty: &[f64], weights: &[f64], n: usize) -> f64 {
    let n = n as f64;
    let mut lambda = xty
        .iter()
        .zip(weights)
        .map(|(g, w)| 2.0 * g.abs() / (n * w))
        .fold(0.0, f64::max);
    while xty.iter().zip(weights).any(|(g, w)| n * lambda * w / 2.0 < g.abs()) {
        lambda = lambda.next_up();
    }
    lambda
}

/// `points` log-spaced penalties from `lambda_max` down to
/// `ratio · lambda_max`.
pub fn lambda_path(lambda_max: f64, points: usize, ratio: f64) -> Vec<f64> {
    if !(lambda_max > 0.0) {
        return vec![0.0];
    }
    log_space(lambda_max, lambda_max * ratio, points.max(1))
}

/// Assigns each of `n` rows to one of `folds` contiguous blocks of a seeded
/// shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of[row] = pos * folds / n;
    }
    fold_of
}

/// Held-out rows of one network in one fold. With `sign = Some(s)` the
/// coefficients are a stacked `[β⁺; β⁻]` and this block predicts with
/// `β⁺ + s·β⁻`.
pub(crate) struct TestBlock {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub sign: Option<f64>,
}

impl TestBlock {
    fn squared_error(&self, beta: &[f64]) -> f64 {
        let h = self.design.ncols();
        let coef = match self.sign {
            None => DVector::from_column_slice(beta),
            Some(s) => DVector::from_fn(h, |t, _| beta[t] + s * beta[h + t]),
        };
        (&self.response - &self.design * coef).norm_squared()
    }
}

pub(crate) struct CvTask {
    pub train: GramSystem,
    pub test: Vec<TestBlock>,
}

/// Training statistics and held-out rows of one network for one fold.
pub(crate) struct BlockSplit {
    pub gram: NetGram,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
    pub test_design: DMatrix<f64>,
    pub test_response: DVector<f64>,
}

/// Full-data statistics of one network block.
pub(crate) struct BlockStats<'a> {
    pub design: &'a DMatrix<f64>,
    pub response: &'a DVector<f64>,
    pub gram: &'a NetGram,
    pub xty: &'a DVector<f64>,
    pub yty: f64,
}

impl BlockStats<'_> {
    /// Removes the rows with `fold_of[r] == fold` from the statistics.
    pub(crate) fn split(&self, fold_of: &[usize], fold: usize) -> BlockSplit {
        let held: Vec<usize> = (0..fold_of.len()).filter(|&r| fold_of[r] == fold).collect();
        let test_design = self.design.select_rows(&held);
        let test_response = self.response.select_rows(&held);
        let n = fold_of.len() - held.len();
        let xty = self.xty - test_design.tr_mul(&test_response);
        let yty = self.yty - test_response.norm_squared();
        let gram = match self.gram {
            NetGram::Dense(g) => NetGram::Dense(g - test_design.tr_mul(&test_design)),
            NetGram::Lazy { .. } => {
                let train: Vec<usize> = (0..fold_of.len()).filter(|&r| fold_of[r] != fold).collect();
                NetGram::from_design(&self.design.select_rows(&train))
            }
        };
        BlockSplit {
            gram,
            xty,
            yty,
            n,
            test_design,
            test_response,
        }
    }
}

/// When to end a penalty path before the grid runs out.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathStop {
    /// Stop once the full-data fit's explained fraction grows by less than
    /// this relative amount between grid points (0 disables).
    pub min_gain: f64,
    /// Stop once the full-data fit explains more than this fraction.
    pub max_explained: f64,
    /// Stop once this many grid points pass without a new CV minimum
    /// (0 disables).
    pub patience: usize,
}

impl PathStop {
    pub(crate) const NEVER: PathStop = PathStop {
        min_gain: 0.0,
        max_explained: f64::INFINITY,
        patience: 0,
    };
}

pub(crate) struct CvPath {
    /// Mean held-out squared error at each grid point reached.
    pub curve: Vec<f64>,
    /// Full-data fits at the same points; empty without a full system.
    pub fits: Vec<PathPoint>,
}

struct Walker {
    sys: GramSystem,
    beta: Vec<f64>,
    grad: Vec<f64>,
    sweeps: usize,
    test: Vec<TestBlock>,
}

impl Walker {
    fn new(sys: GramSystem, test: Vec<TestBlock>) -> Self {
        Walker {
            beta: vec![0.0; sys.dim()],
            grad: sys.xty.iter().copied().collect(),
            sweeps: 0,
            sys,
            test,
        }
    }
}

/// Walks every fold, and optionally the full data, down `grid` in step so
/// that `stop` can end all of them at the same point.
pub(crate) fn cv_path(
    tasks: Vec<CvTask>,
    full: Option<GramSystem>,
    weights: &[f64],
    grid: &[f64],
    settings: CdSettings,
    stop: &PathStop,
) -> CvPath {
    let total_rows: usize = tasks
        .iter()
        .map(|t| t.test.iter().map(|b| b.response.len()).sum::<usize>())
        .sum();
    let folds = tasks.len();
    let walkers: Vec<Mutex<Walker>> = tasks
        .into_iter()
        .map(|t| Walker::new(t.train, t.test))
        .chain(full.map(|sys| Walker::new(sys, Vec::new())))
        .map(Mutex::new)
        .collect();
    let mut curve = Vec::with_capacity(grid.len());
    let mut fits = Vec::new();
    for (k, &lambda) in grid.iter().enumerate() {
        let mut out = par::map_range(walkers.len(), |u| {
            let mut guard = walkers[u].lock().unwrap();
            let w = &mut *guard;
            let pt = advance(&mut w.sys, weights, lambda, &mut w.beta, &mut w.grad, &mut w.sweeps, settings);
            // two-term sums stay exact under exchanging the blocks
            let err = w.test.iter().map(|b| b.squared_error(&pt.beta)).fold(0.0, |acc, e| acc + e);
            (err, pt)
        });
        let err = out[..folds].iter().fold(0.0, |acc, (e, _)| acc + e);
        curve.push(err / total_rows as f64);
        let mut done = false;
        if out.len() > folds {
            let (_, pt) = out.pop().expect("full fit");
            let prev = fits.last().map_or(0.0, |p: &PathPoint| p.explained);
            done |= pt.explained > stop.max_explained
                || (stop.min_gain > 0.0 && k > 0 && pt.explained - prev < stop.min_gain * pt.explained);
            fits.push(pt);
        }
        done |= stop.patience > 0 && k - argmin_curve(&curve) >= stop.patience;
        if done {
            break;
        }
    }
    CvPath { curve, fits }
}

pub(crate) fn argmin_curve(curve: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in curve.iter().enumerate() {
        if v < curve[best] || (curve[best].is_nan() && !v.is_nan()) {
            best = k;
        }
    }
    best
}

pub(crate) fn check_cv_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("penalty grid must be sorted descending".into()));
    }
    if grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("penalties must be finite and nonnegative".into()));
    }
    Ok(())
}

/// k-fold cross-validation of the penalty for a single design. Returns the
/// selected penalty and the mean held-out squared error along `grid`.
pub fn cv_select_lambda(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &[f64],
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    cv_select_lambda_with(design, response, weights, folds, grid, seed, CdSettings::default())
}

pub fn cv_select_lambda_with(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &[f64],
    folds: usize,
    grid: &[f64],
    seed: u64,
    settings: CdSettings,
) -> Result<(f64, Vec<f64>)> {
    let n = response.len();
    if design.nrows() != n || weights.len() != design.ncols() {
        return Err(Error::Dimension("design, response and weights disagree".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {folds} folds")));
    }
    check_cv_grid(grid)?;
    check_weights(weights)?;
    let gram = NetGram::from_design(design);
    let xty = design.tr_mul(response);
    let stats = BlockStats {
        design,
        response,
        gram: &gram,
        xty: &xty,
        yty: response.norm_squared(),
    };
    let fold_of = fold_assignment(n, folds, seed);
    let tasks = (0..folds)
        .map(|f| {
            let s = stats.split(&fold_of, f);
            CvTask {
                train: GramSystem::single(s.gram, s.xty, s.yty, s.n),
                test: vec![TestBlock {
                    design: s.test_design,
                    response: s.test_response,
                    sign: None,
                }],
            }
        })
        .collect();
    let curve = cv_path(tasks, None, weights, grid, settings, &PathStop::NEVER).curve;
    Ok((grid[argmin_curve(&curve)], curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ols_fit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let beta = DVector::from_fn(m, |j, _| if j % 2 == 0 { 1.0 } else { 0.0 });
        let y = &x * beta + DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
        (x, y)
    }

    #[test]
    fn weight_examples() {
        let w = adaptive_weights(&[1.0, 0.0], 0.01);
        assert_relative_eq!(w[0], 1.0 / 1.01, epsilon = 1e-15);
        assert_relative_eq!(w[1], 100.0, epsilon = 1e-12);
        assert!(adaptive_weights(&[0.0; 4], 0.5).iter().all(|&v| v == 2.0));
        let w = adaptive_weights(&[0.0, 0.1, -0.5, 2.0], 1e-3);
        assert!(w.windows(2).all(|p| p[1] < p[0]));
        assert_relative_eq!(default_epsilon(&[0.5, -2.0]), 2e-4, epsilon = 1e-15);
    }

    #[test]
    fn unpenalized_fit_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, y) = random_problem(&mut rng, 50, 5);
        let prob = AdaLassoProblem::new(x.clone(), y.clone(), vec![1.0; 5], 0.0).unwrap();
        let fit = adalasso_fit(&prob, 1e-12, 100_000).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.beta, ols_fit(&x, &y).unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn null_threshold_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (x, y) = random_problem(&mut rng, 40, 6);
        let w: Vec<f64> = (0..6).map(|j| 0.5 + j as f64).collect();
        let lmax = null_threshold(&x, &y, &w);
        for scale in [1.0, 1.5, 10.0] {
            let prob = AdaLassoProblem::new(x.clone(), y.clone(), w.clone(), lmax * scale).unwrap();
            let fit = adalasso_fit(&prob, 1e-9, 1000).unwrap();
            assert!(fit.beta.iter().all(|&b| b == 0.0));
            assert!(kkt_residual(&prob, &fit.beta) <= 1e-12);
        }
        let prob = AdaLassoProblem::new(x, y, w, lmax * 0.9).unwrap();
        assert!(adalasso_fit(&prob, 1e-9, 1000).unwrap().beta.iter().any(|&b| b != 0.0));
    }

    /// Orthogonal columns with `zᵀz = n`.
    fn orthonormal_design() -> DMatrix<f64> {
        let n = 4.0f64;
        DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0],
        ) * (n / 4.0).sqrt()
    }

    #[test]
    fn orthonormal_design_closed_form() {
        let x = orthonormal_design();
        let y = DVector::from_vec(vec![1.2, -0.4, 0.9, -1.5]);
        let w = vec![1.0, 2.0, 0.5];
        let lambda = 0.3;
        let prob = AdaLassoProblem::new(x.clone(), y.clone(), w.clone(), lambda).unwrap();
        let fit = adalasso_fit(&prob, 1e-12, 1000).unwrap();
        let xty = x.tr_mul(&y) / 4.0;
        for j in 0..3 {
            let closed = soft_threshold(xty[j], lambda * w[j] / 2.0);
            assert_relative_eq!(fit.beta[j], closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn kkt_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (x, y) = random_problem(&mut rng, 30, 4);
        let prob = AdaLassoProblem::new(x, y, vec![1.0, 2.0, 1.0, 0.5], 0.05).unwrap();
        let fit = adalasso_fit(&prob, 1e-10, 10_000).unwrap();
        assert!(kkt_residual(&prob, &fit.beta) <= 1e-6);
        let j = (0..4).find(|&j| fit.beta[j] != 0.0).unwrap();
        let mut bumped = fit.beta.clone();
        bumped[j] += 0.1;
        assert!(kkt_residual(&prob, &bumped) >= prob.lambda * prob.weights[j] * 0.05);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::identity(3, 2);
        let y = DVector::zeros(3);
        assert!(AdaLassoProblem::new(x.clone(), y.clone(), vec![1.0, 0.0], 1.0).is_err());
        assert!(AdaLassoProblem::new(x.clone(), y.clone(), vec![1.0, f64::INFINITY], 1.0).is_err());
        assert!(AdaLassoProblem::new(x.clone(), y.clone(), vec![1.0], 1.0).is_err());
        let prob = AdaLassoProblem::new(x.clone(), y.clone(), vec![1.0, 1.0], 1.0).unwrap();
        assert!(adalasso_fit(&prob, 0.0, 10).is_err());
        assert!(cv_select_lambda(&x, &y, &[1.0, 1.0], 1, &[1.0], 0).is_err());
        assert!(cv_select_lambda(&x, &y, &[1.0, 1.0], 5, &[1.0], 0).is_err());
        assert!(cv_select_lambda(&x, &y, &[1.0, 1.0], 2, &[0.1, 1.0], 0).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let base = DMatrix::from_fn(30, 1, |_, _| rng.random_range(-1.0..1.0));
        // two nearly identical columns converge slowly
        let x = DMatrix::from_fn(30, 2, |i, j| base[(i, 0)] + if j == 1 { 1e-3 * (i as f64).sin() } else { 0.0 });
        let y = base.column(0) * 2.0;
        let prob = AdaLassoProblem::new(x, y, vec![1.0, 1.0], 1e-6).unwrap();
        let fit = adalasso_fit(&prob, 1e-12, 3).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
    }

    #[test]
    fn cv_single_point_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (x, y) = random_problem(&mut rng, 40, 6);
        let w = vec![1.0; 6];
        let (l, curve) = cv_select_lambda(&x, &y, &w, 5, &[0.2], 1).unwrap();
        assert_eq!(l, 0.2);
        assert_eq!(curve.len(), 1);

        let grid = lambda_path(null_threshold(&x, &y, &w), 20, 1e-3);
        let a = cv_select_lambda(&x, &y, &w, 5, &grid, 99).unwrap();
        let b = cv_select_lambda(&x, &y, &w, 5, &grid, 99).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn cv_dense_split_matches_direct_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let (x, y) = random_problem(&mut rng, 30, 4);
        let w = vec![1.0; 4];
        let grid = lambda_path(null_threshold(&x, &y, &w), 8, 1e-2);
        let folds = 3;
        let fold_of = fold_assignment(30, folds, 5);
        let mut oracle = vec![0.0; grid.len()];
        for f in 0..folds {
            let train: Vec<usize> = (0..30).filter(|&r| fold_of[r] != f).collect();
            let test: Vec<usize> = (0..30).filter(|&r| fold_of[r] == f).collect();
            let xt = x.select_rows(&train);
            let yt = y.select_rows(&train);
            for (k, &l) in grid.iter().enumerate() {
                let prob = AdaLassoProblem::new(xt.clone(), yt.clone(), w.clone(), l).unwrap();
                let b = adalasso_fit(&prob, 1e-12, 100_000).unwrap().beta;
                oracle[k] += (y.select_rows(&test) - x.select_rows(&test) * b).norm_squared();
            }
        }
        let (_, curve) = cv_select_lambda_with(&x, &y, &w, folds, &grid, 5, CdSettings { tol: 1e-12, max_sweeps: 100_000 }).unwrap();
        for (c, o) in curve.iter().zip(&oracle) {
            assert_relative_eq!(*c, o / 30.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn fold_assignment_is_balanced() {
        let f = fold_assignment(23, 10, 3);
        let mut counts = vec![0; 10];
        for &k in &f {
            counts[k] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
        assert_eq!(f, fold_assignment(23, 10, 3));
    }

    #[test]
    fn lazy_and_dense_gram_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (x, y) = random_problem(&mut rng, 25, 6);
        let w: Vec<f64> = (0..6).map(|j| 1.0 + 0.1 * j as f64).collect();
        let lambda = 0.02;
        let xty = x.tr_mul(&y);
        let lazy = NetGram::Lazy {
            design: x.clone(),
            cache: vec![None; 6],
        };
        let mut a = GramSystem::single(lazy, xty.clone(), y.norm_squared(), 25);
        let mut b = GramSystem::single(NetGram::Dense(x.tr_mul(&x)), xty.clone(), y.norm_squared(), 25);
        let s = CdSettings { tol: 1e-12, max_sweeps: 10_000 };
        let (mut ba, mut ga) = (vec![0.0; 6], xty.as_slice().to_vec());
        let (mut bb, mut gb) = (vec![0.0; 6], xty.as_slice().to_vec());
        cd_solve(&mut a, &w, lambda, &mut ba, &mut ga, s);
        cd_solve(&mut b, &w, lambda, &mut bb, &mut gb, s);
        for j in 0..6 {
            assert_relative_eq!(ba[j], bb[j], epsilon = 1e-10);
        }
    }

    /// The stacked system reproduces an explicit `[[A, A], [B, −B]]` design.
    #[test]
    fn stacked_system_matches_explicit_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let h = 3;
        let a = DMatrix::from_fn(12, h, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(9, h, |_, _| rng.random_range(-1.0..1.0));
        let ya = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let yb = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let mut z = DMatrix::zeros(21, 2 * h);
        z.view_mut((0, 0), (12, h)).copy_from(&a);
        z.view_mut((0, h), (12, h)).copy_from(&a);
        z.view_mut((12, 0), (9, h)).copy_from(&b);
        z.view_mut((12, h), (9, h)).copy_from(&(-&b));
        let mut y = DVector::zeros(21);
        y.rows_mut(0, 12).copy_from(&ya);
        y.rows_mut(12, 9).copy_from(&yb);
        let w = vec![1.0, 0.5, 2.0, 1.5, 1.0, 0.8];
        let lambda = 0.01;

        let prob = AdaLassoProblem::new(z, y, w.clone(), lambda).unwrap();
        let direct = adalasso_fit(&prob, 1e-12, 100_000).unwrap();

        let mut sys = GramSystem::stacked(
            (NetGram::Dense(a.tr_mul(&a)), a.tr_mul(&ya), ya.norm_squared(), 12),
            (NetGram::Dense(b.tr_mul(&b)), b.tr_mul(&yb), yb.norm_squared(), 9),
        );
        let mut beta = vec![0.0; 2 * h];
        let mut grad = sys.xty.as_slice().to_vec();
        cd_solve(&mut sys, &w, lambda, &mut beta, &mut grad, CdSettings { tol: 1e-12, max_sweeps: 100_000 });
        for j in 0..2 * h {
            assert_relative_eq!(beta[j], direct.beta[j], epsilon = 1e-9);
        }
    }

    /// Exhaustive search over `[-2, 2]^m`, refined coarse to fine down to a
    /// `1e-3` lattice around the running best point.
    fn brute_force(prob: &AdaLassoProblem) -> DVector<f64> {
        let m = prob.design.ncols();
        let n = prob.response.len() as f64;
        let g = prob.design.tr_mul(&prob.design);
        let b = prob.design.tr_mul(&prob.response);
        let yty = prob.response.norm_squared();
        let obj = |v: &[f64]| {
            let mut quad = 0.0;
            let mut lin = 0.0;
            let mut pen = 0.0;
            for j in 0..m {
                lin += v[j] * b[j];
                pen += prob.weights[j] * v[j].abs();
                for k in 0..m {
                    quad += v[j] * g[(j, k)] * v[k];
                }
            }
            (yty - 2.0 * lin + quad) / n + prob.lambda * pen
        };
        let mut center = vec![0.0; m];
        let mut half: f64 = 2.0;
        for step in [0.1, 0.01, 1e-3] {
            let k = (2.0 * half / step).round() as usize + 1;
            let lo: Vec<f64> = center.iter().map(|c| c - half).collect();
            let mut idx = vec![0usize; m];
            let mut point = vec![0.0; m];
            let mut best = center.clone();
            let mut best_obj = f64::INFINITY;
            'outer: loop {
                for j in 0..m {
                    point[j] = (lo[j] + idx[j] as f64 * step).clamp(-2.0, 2.0);
                }
                let o = obj(&point);
                if o < best_obj {
                    best_obj = o;
                    best.copy_from_slice(&point);
                }
                let mut c = 0;
                loop {
                    if c == m {
                        break 'outer;
                    }
                    idx[c] += 1;
                    if idx[c] < k {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                }
            }
            center = best;
            half = step * 3.0;
        }
        DVector::from_vec(center)
    }

    #[test]
    fn agrees_with_brute_force_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = orthonormal_design();
        let y = DVector::from_vec(vec![1.2, -0.4, 0.9, -1.5]);
        let prob = AdaLassoProblem::new(x, y, vec![1.0, 2.0, 0.5], 0.3).unwrap();
        let fit = adalasso_fit(&prob, 1e-12, 1000).unwrap();
        assert!((fit.beta.clone() - brute_force(&prob)).amax() <= 2e-3);

        let mut checked = 0;
        for m in 1..=4 {
            for _ in 0..3 {
                let n = rng.random_range(m + 4..=20);
                let x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
                let prob = AdaLassoProblem::new(x, y, w, 0.05).unwrap();
                let fit = adalasso_fit(&prob, 1e-12, 100_000).unwrap();
                if fit.beta.amax() > 2.0 {
                    continue;
                }
                assert!((fit.beta.clone() - brute_force(&prob)).amax() <= 2e-3);
                checked += 1;
            }
        }
        assert!(checked >= 8);
    }
}
