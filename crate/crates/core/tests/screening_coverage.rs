use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rednet_core::kernels::standardize_columns;
use rednet_core::screening::{default_screen_size, isis_select};
use rednet_core::synthgen::sample_genotypes;

fn covered(n: usize, q: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, _) = standardize_columns(&sample_genotypes(n, q, [0.25, 0.5, 0.25], &mut rng)).unwrap();
    let mut support = Vec::new();
    while support.len() < 5 {
        let j = rng.random_range(0..q);
        if !support.contains(&j) {
            support.push(j);
        }
    }
    let mut y = DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    for &j in &support {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        y += x.column(j) * (sign * rng.random_range(0.3..0.8));
    }
    let kept = isis_select(&x, &y, default_screen_size(n), 1).unwrap();
    support.iter().all(|j| kept.selected.contains(j))
}

#[test]
fn screening_keeps_true_support() {
    let hits = (0..100).filter(|&s| covered(400, 2000, s)).count();
    assert!(hits >= 95, "covered in {hits}/100");
}

#[test]
fn no_screening_when_columns_fit() {
    assert!((0..20).all(|s| covered(400, 20, s)));
}
