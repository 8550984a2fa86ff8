//! Sequential vs. parallel executor on short stride and loss sweeps.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rotortrack::config::RunConfig;
use rotortrack::par::Executor;
use rotortrack::sweep::{ablate_loss, bench_strides, LossTerm};
use rotortrack::synth::ScenarioSpec;

fn short_specs(n: u64) -> Vec<ScenarioSpec> {
    (0..n)
        .map(|seed| ScenarioSpec {
            duration_s: 0.25,
            ..ScenarioSpec::preset("chirp", seed).unwrap()
        })
        .collect()
}

fn executors() -> [(&'static str, Executor); 2] {
    [
        ("sequential", Executor::Sequential),
        ("parallel", Executor::Parallel),
    ]
}

fn strides(c: &mut Criterion) {
    let specs = short_specs(4);
    let cfg = RunConfig::default();
    let mut g = c.benchmark_group("bench_strides");
    g.sample_size(10);
    for (name, exec) in executors() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| bench_strides(&specs, &[1, 2, 3, 4], &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn loss(c: &mut Criterion) {
    let specs = short_specs(2);
    let cfg = RunConfig::default();
    let mut g = c.benchmark_group("ablate_loss");
    g.sample_size(10);
    for (name, exec) in executors() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| ablate_loss(&specs, &LossTerm::ALL, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, strides, loss);
criterion_main!(benches);
