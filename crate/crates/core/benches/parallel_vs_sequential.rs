//! Data-parallel core against a single worker on the same workloads.
//!
//! "single" runs inside a one-thread rayon pool, "pool" on the global pool.
//! Building with `--no-default-features` makes both run the sequential
//! fallback, which gives the third comparison point.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fiberfield::eikonal::{solve_fim_many, ConductivityTensorField};
use fiberfield::experiment::{build_domain, generate, run_training, DomainConfig, ExperimentConfig};

fn planar(n: usize, iterations: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset_2d();
    cfg.domain = DomainConfig::Grid { n, half_width: 1.0 };
    cfg.training.iterations = iterations;
    cfg.training.history_every = iterations;
    cfg
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("single", single), ("pool", pool)]
}

fn multi_source_fim(c: &mut Criterion) {
    let cfg = planar(69, 1);
    let domain = build_domain(&cfg).unwrap();
    let field: ConductivityTensorField = domain.truth_field().unwrap();
    let n = domain.mesh.vertex_count();
    let sources: Vec<Vec<(usize, f64)>> = (0..8).map(|i| vec![(i * n / 8, 0.0)]).collect();
    let mut group = c.benchmark_group("fim_8_sources_69x69");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| solve_fim_many(&domain.mesh, &field, &sources).unwrap()))
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let cfg = planar(35, 1);
    let domain = build_domain(&cfg).unwrap();
    let mut group = c.benchmark_group("generate_planar");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| generate(&cfg, &domain).unwrap()))
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let cfg = planar(35, 50);
    let domain = build_domain(&cfg).unwrap();
    let data = generate(&cfg, &domain).unwrap();
    let mut group = c.benchmark_group("train_50_iterations");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| run_training(&cfg, &domain, &data.samples).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, multi_source_fim, generation, training);
criterion_main!(benches);
