use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icl_core::designs::DesignSpec;
use icl_core::estimators::{mc_risk_with, PgdWeights};
use icl_core::numerics::{Matrix, RngStream};
use icl_core::par::Exec;
use icl_core::theory::{mc_moment_oracle_with, MomentQuery};
use icl_core::training::{train_with, ModelKind, TrainConfig};

fn executors() -> Vec<(&'static str, Exec)> {
    let mut out = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    out.push(("parallel", Exec::Parallel));
    out
}

fn bench_mc_risk(c: &mut Criterion) {
    let spec = DesignSpec::isotropic(8, 16, 0.0).unwrap();
    let w = PgdWeights::scalar(8, 1.0 / 25.0);
    let rng = RngStream::new(1, 0);
    let mut group = c.benchmark_group("mc_risk_100k");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mc_risk_with(&w, &spec, 100_000, &rng, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_moments(c: &mut Criterion) {
    let q = MomentQuery::Octic { w: Matrix::identity(4), w2: Matrix::identity(4) };
    let rng = RngStream::new(2, 0);
    let mut group = c.benchmark_group("octic_oracle_1m");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mc_moment_oracle_with(&q, 1_000_000, &rng, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_restarts(c: &mut Criterion) {
    let spec = DesignSpec::isotropic(8, 16, 0.0).unwrap();
    let cfg = TrainConfig { iterations: 200, restarts: 4, eval_trials: 2000, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_4_restarts");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_with(&ModelKind::Attention, &spec, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mc_risk, bench_moments, bench_restarts);
criterion_main!(benches);
