//! Scoring estimated edges against ground truth, and bootstrap stability.

use std::fmt;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EdgeLabel, EdgeReport, ObservationPair};
use crate::par;
use crate::pipeline::{rednet_run, PipelineConfig};
use crate::synthgen::{TruthLabel, TruthLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Differential,
    Common,
    Average,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Differential, Category::Common, Category::Average];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Differential => "differential",
            Category::Common => "common",
            Category::Average => "average",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub category: Category,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn truth_positive(truth: &TruthLabels, s: usize, t: usize, category: Category) -> bool {
    match category {
        Category::Differential => truth.label(s, t).is_differential(),
        Category::Common => truth.label(s, t) == TruthLabel::Common,
        Category::Average => truth.gamma1[(s, t)] + truth.gamma2[(s, t)] != 0.0,
    }
}

fn estimated_positive(report: &EdgeReport, s: usize, t: usize, category: Category) -> bool {
    let e = report.get(s, t);
    match category {
        Category::Differential => e.label == EdgeLabel::Differential,
        Category::Common => e.label == EdgeLabel::Common,
        Category::Average => e.beta_plus.abs() > report.tolerance,
    }
}

/// Counts over ordered pairs. Unless `all_pairs`, only pairs with both ends
/// in the truth's scored node set take part.
pub fn confusion(
    estimated: &EdgeReport,
    truth: &TruthLabels,
    category: Category,
    all_pairs: bool,
) -> Result<ConfusionCounts> {
    let p = truth.p();
    if estimated.p != p || estimated.edges.len() != p * p.saturating_sub(1) {
        return Err(Error::Dimension(format!(
            "estimate covers {} nodes but the truth has {p}",
            estimated.p
        )));
    }
    let mut c = ConfusionCounts {
        category,
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for s in 0..p {
        for t in (0..p).filter(|&t| t != s) {
            if !all_pairs && !truth.is_scored(s, t) {
                continue;
            }
            match (estimated_positive(estimated, s, t, category), truth_positive(truth, s, t, category)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// Matthews correlation; `None` when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> Option<f64> {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return None;
    }
    Some((tp * tn - fp * fn_) / denom.sqrt())
}

/// `FP / (TP + FP)`; `None` with no positive calls.
pub fn fdr(c: &ConfusionCounts) -> Option<f64> {
    let called = c.tp + c.fp;
    (called > 0).then(|| c.fp as f64 / called as f64)
}

/// `TP / (TP + FN)`; `None` with no true positives to find.
pub fn power(c: &ConfusionCounts) -> Option<f64> {
    let real = c.tp + c.fn_;
    (real > 0).then(|| c.tp as f64 / real as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub mcc: Option<f64>,
    pub fdr: Option<f64>,
    pub power: Option<f64>,
}

impl Metrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        Metrics {
            mcc: mcc(&counts),
            fdr: fdr(&counts),
            power: power(&counts),
            counts,
        }
    }
}

/// Metrics for every category, in [`Category::ALL`] order.
pub fn evaluate(estimated: &EdgeReport, truth: &TruthLabels, all_pairs: bool) -> Result<Vec<Metrics>> {
    Category::ALL
        .iter()
        .map(|&c| confusion(estimated, truth, c, all_pairs).map(Metrics::from_counts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSummary {
    pub threshold: f64,
    /// Originally identified common edges found common in more than
    /// `threshold` of the replicates.
    pub common: usize,
    pub differential: usize,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Analysis of the full data; `boot_freq` holds the frequency of the
    /// edge's own label across replicates.
    pub original: EdgeReport,
    /// Per edge (report order), fraction of replicates labeling it
    /// differential / common.
    pub differential_freq: Vec<f64>,
    pub common_freq: Vec<f64>,
    pub succeeded: usize,
    pub failed: usize,
    pub summary: Vec<ThresholdSummary>,
}

/// Reruns the analysis on `n_boot` resampled data sets. Rows are drawn
/// with replacement within each network independently; replicate `b` uses
/// the seed derived from `(seed, b)`.
pub fn bootstrap_stability(
    pair: &ObservationPair,
    config: &PipelineConfig,
    n_boot: usize,
    thresholds: &[f64],
    seed: u64,
) -> Result<BootstrapResult> {
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be at least 1".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidArgument(format!("threshold {t} is outside [0, 1]")));
    }
    par::with_threads(config.threads, || {
        let inner = PipelineConfig {
            threads: 0,
            ..config.clone()
        };
        let mut original = rednet_run(pair, &inner)?.report;
        let replicates = par::map_range(n_boot, |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, b as u64));
            let nets = pair
                .networks()
                .iter()
                .map(|net| {
                    let n = net.n();
                    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    net.resample_rows(&rows)
                })
                .collect::<Result<Vec<_>>>()?;
            let [a, b]: [_; 2] = nets.try_into().expect("two networks");
            let boot = ObservationPair::from_networks([a, b], pair.node_names.clone(), pair.exo_names.clone());
            rednet_run(&boot, &inner).map(|r| r.report)
        });

        let m = original.edges.len();
        let mut diff = vec![0usize; m];
        let mut common = vec![0usize; m];
        let mut failed = 0;
        for (b, rep) in replicates.into_iter().enumerate() {
            match rep {
                Ok(rep) => {
                    for (e, edge) in rep.edges.iter().enumerate() {
                        match edge.label {
                            EdgeLabel::Differential => diff[e] += 1,
                            EdgeLabel::Common => common[e] += 1,
                            EdgeLabel::Absent => {}
                        }
                    }
                }
                Err(e) => {
                    log::debug!("replicate {b} failed: {e}");
                    failed += 1;
                }
            }
        }
        let succeeded = n_boot - failed;
        if succeeded == 0 {
            return Err(Error::NodeFailures {
                failed,
                summary: "every bootstrap replicate failed".into(),
            });
        }
        if failed as f64 > 0.05 * n_boot as f64 {
            warn!("{failed} of {n_boot} bootstrap replicates failed and were excluded");
        }
        let to_freq = |c: Vec<usize>| -> Vec<f64> { c.into_iter().map(|v| v as f64 / succeeded as f64).collect() };
        let differential_freq = to_freq(diff);
        let common_freq = to_freq(common);
        for (e, edge) in original.edges.iter_mut().enumerate() {
            edge.boot_freq = match edge.label {
                EdgeLabel::Differential => Some(differential_freq[e]),
                EdgeLabel::Common => Some(common_freq[e]),
                EdgeLabel::Absent => None,
            };
        }
        let summary = thresholds
            .iter()
            .map(|&threshold| {
                let count = |label: EdgeLabel, freq: &[f64]| {
                    original
                        .edges
                        .iter()
                        .zip(freq)
                        .filter(|(e, f)| e.label == label && **f > threshold)
                        .count()
                };
                ThresholdSummary {
                    threshold,
                    common: count(EdgeLabel::Common, &common_freq),
                    differential: count(EdgeLabel::Differential, &differential_freq),
                }
            })
            .collect();
        Ok(BootstrapResult {
            original,
            differential_freq,
            common_freq,
            succeeded,
            failed,
            summary,
        })
    })
}
