//! Parallel-versus-sequential timings of the three row-parallel hot paths:
//! per-row input gradients (elasticity/attack workload), per-delta model
//! fits (sweep workload), and Rademacher sign draws.
//!
//! `parallel::map_*` dispatches to rayon when the `parallel` feature is on
//! and to the plain loop otherwise; the `*_seq` arms always run the plain
//! loop, so with the feature disabled both arms coincide.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;

use tbresnet::dataset::{generate_synthetic, GenerateConfig};
use tbresnet::dcm::{DcmSpec, Scenario};
use tbresnet::model::{TbResNet, TrainConfig};
use tbresnet::parallel;
use tbresnet::rng::substream;

fn fitted_model(n: usize) -> (TbResNet, Array2<f64>, Array2<f64>) {
    let cfg = GenerateConfig {
        n: Some(n),
        ..GenerateConfig::new(Scenario::Mnl, 1)
    };
    let (ds, _) = generate_synthetic(&cfg).unwrap();
    let spec = DcmSpec::infer(Scenario::Mnl, ds.schema()).unwrap();
    let train_cfg = TrainConfig {
        hidden: vec![32, 32],
        iterations: 50,
        batch_size: 64,
        ..TrainConfig::new(0.5, 2)
    };
    let model = TbResNet::fit(&spec, &ds, &train_cfg).unwrap();
    let (x_std, z_std) = model.standardized_inputs(&ds).unwrap();
    (model, x_std, z_std)
}

fn bench_row_gradients(c: &mut Criterion) {
    let (model, x_std, z_std) = fitted_model(512);
    let n = x_std.nrows();
    let run = |mapper: fn(usize, &(dyn Fn(usize) -> f64 + Sync)) -> Vec<f64>| {
        let work = |i: usize| {
            let g = model
                .utility_input_gradients_row(
                    x_std.row(i).as_slice().unwrap(),
                    z_std.row(i).as_slice().unwrap(),
                )
                .unwrap();
            g.d_x[[0, 0]]
        };
        mapper(n, &work)
    };
    let mut group = c.benchmark_group("row_gradients");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(run(|n, f| parallel::map_range(n, f))))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(run(|n, f| parallel::map_range_seq(n, f))))
    });
    group.finish();
}

fn bench_sweep_fits(c: &mut Criterion) {
    let cfg = GenerateConfig {
        n: Some(400),
        ..GenerateConfig::new(Scenario::Mnl, 3)
    };
    let (ds, _) = generate_synthetic(&cfg).unwrap();
    let spec = DcmSpec::infer(Scenario::Mnl, ds.schema()).unwrap();
    let deltas = [0.0, 0.3, 0.7, 1.0];
    let fit_one = |&delta: &f64| {
        let train_cfg = TrainConfig {
            delta,
            hidden: vec![16],
            iterations: 30,
            batch_size: 50,
            ..TrainConfig::new(delta, 4)
        };
        TbResNet::fit(&spec, &ds, &train_cfg).unwrap().delta()
    };
    let mut group = c.benchmark_group("sweep_fits");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(parallel::map_items(&deltas, fit_one)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(parallel::map_items_seq(&deltas, fit_one)))
    });
    group.finish();
}

fn bench_rademacher_draws(c: &mut Criterion) {
    let class: Vec<Vec<f64>> = (0..64)
        .map(|j| {
            let mut rng = substream(5, "bench");
            (0..256).map(|i| rng.random::<f64>() + (i + j) as f64 * 1e-3).collect()
        })
        .collect();
    let n = class[0].len();
    let draws = 2000usize;
    let sup_for_draw = |d: usize| {
        let mut rng = tbresnet::rng::indexed_substream(7, "bench-draw", d as u64);
        let signs: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        class
            .iter()
            .map(|f| signs.iter().zip(f).map(|(s, v)| s * v).sum::<f64>() / n as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut group = c.benchmark_group("rademacher");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(parallel::map_range(draws, sup_for_draw)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(parallel::map_range_seq(draws, sup_for_draw)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_row_gradients,
    bench_sweep_fits,
    bench_rademacher_draws
);
criterion_main!(benches);
