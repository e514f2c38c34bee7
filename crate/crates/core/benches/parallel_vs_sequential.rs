use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hiersign_core::analysis::vote_error_experiment;
use hiersign_core::compress::TiePolicy;
use hiersign_core::config::{fork_rng, PartitionSpec, Purpose, Schedule, StreamLabel};
use hiersign_core::dataio::{partition, LabeledDataset};
use hiersign_core::engine::{run_hier_signsgd, EngineOptions, MlpWorkload};
use hiersign_core::model::{full_gradient, init_params, InitScheme, MlpShape};
use hiersign_core::par;
use rand::Rng;

fn images(n: usize) -> LabeledDataset {
    let mut r = fork_rng(0, StreamLabel::new(Purpose::Probe));
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..10u8);
        rows.push((0..784).map(|j| if j / 78 == c as usize || r.random::<f64>() < 0.15 { r.random::<f32>() } else { 0.0 }).collect::<Vec<f32>>());
        labels.push(c);
    }
    LabeledDataset::from_dense(&rows, labels, 10).unwrap()
}

/// `workers = 1` is the single-thread path; `0` uses the global rayon pool.
const MODES: [(&str, usize); 2] = [("sequential", 1), ("parallel", 0)];

fn engine_round(c: &mut Criterion) {
    let data = images(4000);
    let parts = partition(&data, &[5; 4], &PartitionSpec::iid(1), 10).unwrap();
    let shape = MlpShape::emnist_digits();
    let workload = MlpWorkload::new(&data, None, &parts, shape, 512, Some(512), 1);
    let w0 = init_params(shape, InitScheme::UniformFanIn, &mut fork_rng(1, StreamLabel::new(Purpose::Init))).values;
    let schedule = Schedule {
        global_rounds: 1,
        edge_rounds: 3,
        step_size: 5e-3,
        batch_size: 100,
        tie_policy: TiePolicy::Random,
        rng_seed: 1,
    };
    let mut group = c.benchmark_group("global_round_q4_m5");
    group.sample_size(10);
    for (name, workers) in MODES {
        let opts = EngineOptions {
            workers,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_hier_signsgd(&workload, &schedule, black_box(&w0), &opts).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let data = images(4096);
    let p = init_params(MlpShape::emnist_digits(), InitScheme::UniformFanIn, &mut fork_rng(2, StreamLabel::new(Purpose::Init)));
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut group = c.benchmark_group("full_gradient_4096");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || full_gradient(black_box(&p), &data, &idx)))
        });
    }
    group.finish();
}

fn vote(c: &mut Criterion) {
    let mut group = c.benchmark_group("vote_error_m7_200k");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || vote_error_experiment(0.3, 7, 200_000, TiePolicy::Random, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, engine_round, gradient, vote);
criterion_main!(benches);
