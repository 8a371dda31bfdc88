//! Dense linear-algebra building blocks: column standardization, ridge and
//! least-squares fits, GCV for the ridge penalty, and the residual-maker
//! projection for anchor blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a design is treated as rank
/// deficient.
const RANK_TOL: f64 = 1e-10;

/// Scales every column to Euclidean norm `√n`.
///
/// Returns the scaled matrix and the factors that restore the input:
/// `x[:, j] = x_std[:, j] * scales[j]`.
pub fn standardize_columns(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroColumn { column: j });
        }
        let scale = norm / n.sqrt();
        col /= scale;
        scales.push(scale);
    }
    Ok((out, scales))
}

/// `k` log-spaced values from `first` to `last` (either order).
pub fn log_space(first: f64, last: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![first],
        _ => {
            let (a, b) = (first.ln(), last.ln());
            (0..k)
                .map(|i| {
                    if i == 0 {
                        first
                    } else if i == k - 1 {
                        last
                    } else {
                        (a + (b - a) * i as f64 / (k - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Default ridge grid: 50 log-spaced values on `[1e-4·n, 1e2·n]`.
pub fn default_ridge_grid(n: usize) -> Vec<f64> {
    let n = n as f64;
    log_space(1e-4 * n, 1e2 * n, 50)
}

/// Solves `(XᵀX + λI) β = Xᵀy`.
///
/// Cholesky first; if that fails the system is solved through a symmetric
/// eigendecomposition, which also tells a genuinely singular `λ = 0`
/// problem apart from a merely ill-conditioned one.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty must be nonnegative, got {lambda}"
        )));
    }
    let mut gram = x.tr_mul(x);
    for j in 0..gram.nrows() {
        gram[(j, j)] += lambda;
    }
    let rhs = x.tr_mul(y);
    solve_spd(gram, rhs).map_err(|e| match e {
        Error::Singular(_) if lambda == 0.0 => Error::Singular(
            "XᵀX is singular; use a positive ridge penalty (lambda > 0)".into(),
        ),
        other => other,
    })
}

/// Solves a symmetric positive (semi)definite system `a β = b`.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let sol = chol.solve(&b);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || eig.eigenvalues.iter().any(|&v| v <= RANK_TOL * max) {
        return Err(Error::Singular("matrix is not positive definite".into()));
    }
    let coords = eig.eigenvectors.tr_mul(&b);
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, s)| c / s),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Least squares through a QR factorization.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    if n != y.len() {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response has {}",
            y.len()
        )));
    }
    if d > n {
        return Err(Error::Singular(format!(
            "{d} columns exceed {n} rows; least squares is not unique"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = (0..d).fold(0.0f64, |m, j| m.max(r[(j, j)].abs()));
    if d > 0 && (0..d).any(|j| r[(j, j)].abs() <= RANK_TOL * rmax.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("design is rank deficient".into()));
    }
    let qty = qr.q().tr_mul(y);
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))
}

/// Spectral summary of a least-squares problem that makes ridge fits and
/// their GCV scores cheap for any penalty.
///
/// With `XᵀX = Σ s_j v_j v_jᵀ` the ridge solution is
/// `Σ v_j (v_jᵀXᵀy)/(s_j + λ)`. When `X` has more columns than rows the
/// same quantities come from `XXᵀ` instead.
#[derive(Debug, Clone)]
pub struct RidgeSpectrum {
    eigenvalues: Vec<f64>,
    /// Columns span the coefficient space: `v_j` (primal) or `Xᵀu_j` (dual).
    basis: DMatrix<f64>,
    coords: Vec<f64>,
    /// Squared length of the projection of `y` onto each left singular vector.
    energy: Vec<f64>,
    yty: f64,
    n: usize,
}

impl RidgeSpectrum {
    pub fn from_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n != y.len() {
            return Err(Error::Dimension(format!(
                "design has {n} rows, response has {}",
                y.len()
            )));
        }
        if d <= n {
            Ok(Self::from_gram(&x.tr_mul(x), &x.tr_mul(y), y.norm_squared(), n))
        } else {
            let kernel = x * x.transpose();
            let eig = kernel.symmetric_eigen();
            let cutoff = spectrum_cutoff(eig.eigenvalues.as_slice());
            let mut eigenvalues = Vec::new();
            let mut coords = Vec::new();
            let mut energy = Vec::new();
            let mut keep = Vec::new();
            for (j, &s) in eig.eigenvalues.iter().enumerate() {
                if s > cutoff {
                    let u = eig.eigenvectors.column(j);
                    let a = u.dot(y);
                    eigenvalues.push(s);
                    coords.push(a);
                    energy.push(a * a);
                    keep.push(j);
                }
            }
            let u = eig.eigenvectors.select_columns(&keep);
            Ok(RidgeSpectrum {
                eigenvalues,
                basis: x.tr_mul(&u),
                coords,
                energy,
                yty: y.norm_squared(),
                n,
            })
        }
    }

    /// Builds the spectrum from `XᵀX`, `Xᵀy` and `yᵀy`.
    pub fn from_gram(gram: &DMatrix<f64>, xty: &DVector<f64>, yty: f64, n: usize) -> Self {
        let eig = gram.clone().symmetric_eigen();
        let cutoff = spectrum_cutoff(eig.eigenvalues.as_slice());
        let coords_all = eig.eigenvectors.tr_mul(xty);
        let mut eigenvalues = Vec::with_capacity(gram.nrows());
        let mut coords = Vec::with_capacity(gram.nrows());
        let mut energy = Vec::with_capacity(gram.nrows());
        let mut keep = Vec::with_capacity(gram.nrows());
        for (j, &s) in eig.eigenvalues.iter().enumerate() {
            if s > cutoff {
                eigenvalues.push(s);
                coords.push(coords_all[j]);
                energy.push(coords_all[j] * coords_all[j] / s);
                keep.push(j);
            }
        }
        RidgeSpectrum {
            eigenvalues,
            basis: eig.eigenvectors.select_columns(&keep),
            coords,
            energy,
            yty,
            n,
        }
    }

    /// The same design with a new response, given `Xᵀy` and `yᵀy`. Only
    /// valid for spectra built by [`from_gram`](Self::from_gram), whose basis
    /// is orthonormal.
    pub(crate) fn retarget(&self, xty: &DVector<f64>, yty: f64) -> RidgeSpectrum {
        let coords: Vec<f64> = self.basis.tr_mul(xty).iter().copied().collect();
        let energy = coords
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, s)| c * c / s)
            .collect();
        RidgeSpectrum {
            eigenvalues: self.eigenvalues.clone(),
            basis: self.basis.clone(),
            coords,
            energy,
            yty,
            n: self.n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `‖y − X β(λ)‖²`.
    pub fn rss(&self, lambda: f64) -> f64 {
        let explained: f64 = self
            .eigenvalues
            .iter()
            .zip(&self.energy)
            .map(|(&s, &e)| {
                let shrink = lambda / (s + lambda);
                e * (1.0 - shrink * shrink)
            })
            .sum();
        (self.yty - explained).max(0.0)
    }

    /// Effective degrees of freedom `tr A(λ)`.
    pub fn dof(&self, lambda: f64) -> f64 {
        self.eigenvalues.iter().map(|&s| s / (s + lambda)).sum()
    }

    pub fn gcv(&self, lambda: f64) -> f64 {
        gcv_score(self.rss(lambda), self.dof(lambda), self.n)
    }

    pub fn coefficients(&self, lambda: f64) -> DVector<f64> {
        let w = DVector::from_iterator(
            self.coords.len(),
            self.coords
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, s)| c / (s + lambda)),
        );
        &self.basis * w
    }
}

fn spectrum_cutoff(eigenvalues: &[f64]) -> f64 {
    let max = eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    max * 1e-12
}

/// `GCV = (rss/n) / (1 − dof/n)²`; infinite when no residual degrees of
/// freedom remain.
pub fn gcv_score(rss: f64, dof: f64, n: usize) -> f64 {
    let n = n as f64;
    let denom = 1.0 - dof / n;
    if denom <= 1e-12 {
        f64::INFINITY
    } else {
        (rss / n) / (denom * denom)
    }
}

/// Index of the minimum score; ties go to the smaller penalty so the choice
/// does not depend on grid order.
pub(crate) fn argmin_grid(grid: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..grid.len() {
        let better = scores[k] < scores[best]
            || (scores[k] == scores[best] && grid[k] < grid[best])
            || (scores[best].is_nan() && !scores[k].is_nan());
        if better {
            best = k;
        }
    }
    best
}

/// Picks the ridge penalty minimizing GCV over `grid`. Scores are returned
/// in grid order.
pub fn gcv_select(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_grid(grid)?;
    let spectrum = RidgeSpectrum::from_design(x, y)?;
    Ok(select_from_spectrum(&spectrum, grid))
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid values must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

pub(crate) fn select_from_spectrum(spectrum: &RidgeSpectrum, grid: &[f64]) -> (f64, Vec<f64>) {
    let scores: Vec<f64> = grid.iter().map(|&l| spectrum.gcv(l)).collect();
    (grid[argmin_grid(grid, &scores)], scores)
}

/// Precomputed residual-maker for an anchor block `X_A`:
/// `H = I − X_A (X_AᵀX_A)⁻¹ X_Aᵀ`, applied without forming `H`.
#[derive(Debug, Clone)]
pub struct Annihilator {
    x_a: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Annihilator {
    pub fn new(x_a: &DMatrix<f64>) -> Result<Self> {
        let (n, a) = x_a.shape();
        if a == 0 {
            return Ok(Annihilator {
                x_a: x_a.clone(),
                chol: None,
            });
        }
        if a >= n {
            return Err(Error::Singular(format!(
                "{a} anchor columns leave no residual space with {n} rows"
            )));
        }
        let sv = x_a.clone().singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() <= RANK_TOL * max {
            return Err(Error::Singular("anchor columns are collinear".into()));
        }
        let chol = x_a
            .tr_mul(x_a)
            .cholesky()
            .ok_or_else(|| Error::Singular("anchor Gram matrix is not positive definite".into()))?;
        Ok(Annihilator {
            x_a: x_a.clone(),
            chol: Some(chol),
        })
    }

    /// `H · m` in `O(n·a·c)`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            None => m.clone(),
            Some(chol) => {
                let coef = chol.solve(&self.x_a.tr_mul(m));
                m - &self.x_a * coef
            }
        }
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            None => v.clone(),
            Some(chol) => {
                let coef = chol.solve(&self.x_a.tr_mul(v));
                v - &self.x_a * coef
            }
        }
    }
}

/// Materializes `H` for an anchor block. Use [`apply_annihilator`] on large
/// problems.
pub fn annihilator(x_a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x_a.nrows();
    Ok(Annihilator::new(x_a)?.apply(&DMatrix::identity(n, n)))
}

pub fn apply_annihilator(x_a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_a.nrows() != m.nrows() {
        return Err(Error::Dimension(format!(
            "anchor block has {} rows, target has {}",
            x_a.nrows(),
            m.nrows()
        )));
    }
    Ok(Annihilator::new(x_a)?.apply(m))
}
