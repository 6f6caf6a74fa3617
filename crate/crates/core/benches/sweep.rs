use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ehfl_core::analytics::estimate_participation_prob;
use ehfl_core::harness::{sweep, SweepSpec};
use ehfl_core::{Algorithm, Execution, ExperimentConfig};

fn small_grid() -> SweepSpec {
    let base = ExperimentConfig {
        num_clients: 40,
        epochs: 40,
        ..ExperimentConfig::default()
    };
    let mut spec = SweepSpec::new(base);
    spec.axes.algorithm = vec![Algorithm::Fedavg, Algorithm::Fedbacys, Algorithm::FedbacysOdd];
    spec.axes.groups = vec![2, 5];
    spec.axes.delta = vec![0.3, 1.0];
    spec.repeats = 2;
    spec
}

fn bench_sweep(c: &mut Criterion) {
    let spec = small_grid();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| sweep(&spec, exec))
        });
    }
    group.finish();
}

fn bench_monte_carlo(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        delta: 0.5,
        ..ExperimentConfig::default()
    };
    let mut group = c.benchmark_group("participation_monte_carlo");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| estimate_participation_prob(5, &cfg, 200_000, 7, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_monte_carlo);
criterion_main!(benches);
