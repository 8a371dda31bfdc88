//! Network-exchange and identical-input invariants over many seeds.

use rednet_core::model::EdgeLabel;
use rednet_core::pipeline::{naive_run, rednet_run, PipelineConfig};
use rednet_core::synthgen::{simulate, PairConfig, SimulatedPair};

fn small(seed: u64) -> SimulatedPair {
    simulate(&PairConfig {
        p_total: 20,
        sub_p: 12,
        n_opposite: 2,
        n_unique_each: 2,
        n1: 120,
        n2: 140,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn swapping_networks_negates_differences_exactly() {
    let config = PipelineConfig {
        seed: 11,
        ..Default::default()
    };
    for seed in 0..20 {
        let pair = small(seed).pair;
        let a = rednet_run(&pair, &config).unwrap().estimate;
        let b = rednet_run(&pair.swapped(), &config).unwrap().estimate;
        assert_eq!(bits(a.beta_plus.as_slice()), bits(b.beta_plus.as_slice()), "seed {seed}");
        // exact equality; zeros come out as 0.0 in both runs
        assert!(a.beta_minus.iter().zip(b.beta_minus.iter()).all(|(x, y)| *x == -*y), "seed {seed}");
    }
}

#[test]
fn identical_networks_have_no_differential_edges() {
    let config = PipelineConfig::default();
    for seed in 0..20 {
        let pair = small(seed).pair.duplicated(0);
        let r = rednet_run(&pair, &config).unwrap();
        assert!(r.estimate.beta_minus.iter().all(|v| *v == 0.0), "seed {seed}");
        assert_eq!(r.report.count(EdgeLabel::Differential), 0);
        let n = naive_run(&pair, &config).unwrap();
        assert_eq!(n.report.count(EdgeLabel::Differential), 0, "seed {seed}");
    }
}

#[test]
fn converged_fits_satisfy_optimality() {
    for seed in 0..5 {
        let r = rednet_run(&small(seed).pair, &PipelineConfig::default()).unwrap();
        for t in &r.estimate.tuning {
            assert!(t.converged, "node {} did not converge", t.node);
            assert!(t.kkt <= 1e-6, "node {} kkt {}", t.node, t.kkt);
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let pair = small(3).pair;
    let run = |threads| {
        let config = PipelineConfig {
            threads,
            ..Default::default()
        };
        let e = rednet_run(&pair, &config).unwrap().estimate;
        (bits(e.beta_plus.as_slice()), bits(e.beta_minus.as_slice()))
    };
    assert_eq!(run(1), run(4));
}
