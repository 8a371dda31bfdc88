//! Marginal screening of exogenous variables for one endogenous node.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::ridge_fit;

/// Exogenous columns kept for one `(node, network)`, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenSet {
    pub node: usize,
    /// 1 or 2.
    pub network: u8,
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ScreenSet {
    /// Selected indices in ascending column order.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut idx = self.selected.clone();
        idx.sort_unstable();
        idx
    }
}

/// `⌊n^0.9⌋`, at least 1.
pub fn default_screen_size(n: usize) -> usize {
    screen_size(n, 0.9)
}

pub fn screen_size(n: usize, exponent: f64) -> usize {
    ((n as f64).powf(exponent).floor() as usize).max(1)
}

/// Absolute marginal (Pearson) correlation of every column with `y`.
/// Constant columns, or a constant `y`, score zero.
pub fn marginal_scores(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let n = y.len() as f64;
    let ybar = y.sum() / n;
    let yc = y.map(|v| v - ybar);
    let ynorm = yc.norm();
    x.column_iter()
        .map(|col| {
            let mean = col.sum() / n;
            let mut dot = 0.0;
            let mut ss = 0.0;
            for (xv, yv) in col.iter().zip(yc.iter()) {
                let c = xv - mean;
                dot += c * yv;
                ss += c * c;
            }
            let denom = ss.sqrt() * ynorm;
            if denom > 0.0 {
                (dot / denom).abs()
            } else {
                0.0
            }
        })
        .collect()
}

/// Ranks all columns by marginal score, descending; ties go to the lower
/// column index.
pub fn sis_rank(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<(usize, f64)> {
    let scores = marginal_scores(x, y);
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Keeps the top `d` columns. When `q ≤ n` screening is skipped and every
/// column is kept.
pub fn sis_select(x: &DMatrix<f64>, y: &DVector<f64>, d: usize) -> Result<ScreenSet> {
    isis_select(x, y, d, 1)
}

/// Iterated screening: `rounds` passes, each re-ranking the unselected
/// columns against the residual of a fit on the columns chosen so far.
/// One round is plain screening.
pub fn isis_select(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    d: usize,
    rounds: usize,
) -> Result<ScreenSet> {
    let (n, q) = x.shape();
    if n != y.len() {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response has {}",
            y.len()
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("screen size must be at least 1".into()));
    }
    let ranked = sis_rank(x, y);
    if q <= n {
        let (selected, scores) = ranked.into_iter().unzip();
        return Ok(ScreenSet {
            node: 0,
            network: 0,
            selected,
            scores,
        });
    }
    if d > q {
        return Err(Error::InvalidArgument(format!(
            "screen size {d} exceeds the {q} available columns"
        )));
    }
    let rounds = rounds.max(1).min(d);
    if rounds == 1 {
        let (selected, scores) = ranked.into_iter().take(d).unzip();
        return Ok(ScreenSet {
            node: 0,
            network: 0,
            selected,
            scores,
        });
    }

    let mut selected: Vec<usize> = Vec::with_capacity(d);
    let mut scores: Vec<f64> = Vec::with_capacity(d);
    let mut taken = vec![false; q];
    let mut residual = y.clone();
    for round in 0..rounds {
        let want = (d - selected.len()).div_ceil(rounds - round);
        let mut pass = sis_rank(x, &residual);
        pass.retain(|(j, _)| !taken[*j]);
        for (j, s) in pass.into_iter().take(want) {
            taken[j] = true;
            selected.push(j);
            scores.push(s);
        }
        if round + 1 < rounds {
            let xs = x.select_columns(&selected);
            let lambda = 1e-6 * n as f64;
            let beta = ridge_fit(&xs, y, lambda)?;
            residual = y - xs * beta;
        }
    }
    Ok(ScreenSet {
        node: 0,
        network: 0,
        selected,
        scores,
    })
}
