//! One worker against the full pool on the same problem. Build with
//! `--no-default-features` to time the purely sequential code path.

use std::hint::black_box;
use std::thread::available_parallelism;

use criterion::{criterion_group, criterion_main, Criterion};
use rednet_core::pipeline::{rednet_run, PipelineConfig};
use rednet_core::synthgen::{simulate, PairConfig};

fn workers(c: &mut Criterion) {
    let pair = simulate(&PairConfig {
        p_total: 40,
        sub_p: 15,
        n_opposite: 3,
        n_unique_each: 3,
        n1: 150,
        n2: 150,
        seed: 5,
        ..Default::default()
    })
    .expect("simulation")
    .pair;
    let all = available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group("rednet_run");
    group.sample_size(10);
    for (name, threads) in [("one_worker", 1), ("all_workers", all)] {
        let config = PipelineConfig {
            threads,
            ..Default::default()
        };
        group.bench_function(name, |b| b.iter(|| rednet_run(black_box(&pair), &config).expect("run")));
    }
    group.finish();
}

criterion_group!(benches, workers);
criterion_main!(benches);
