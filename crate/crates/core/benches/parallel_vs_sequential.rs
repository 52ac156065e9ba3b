use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dwelltime::dwell::{default_bloch, min_coherent_model_with, sweep_od_with, ModelSpec};
use dwelltime::estimator::bin_campaign;
use dwelltime::medium::{MediumSpec, PulseSpec};
use dwelltime::par::Execution;
use dwelltime::shots::{ExperimentConfig, ShotGenerator, CHUNK_SHOTS};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn campaign(c: &mut Criterion) {
    let gen = ShotGenerator::new(&ExperimentConfig::default(), 1).unwrap();
    let n = 8 * CHUNK_SHOTS;
    let mut g = c.benchmark_group("bin_campaign");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
            b.iter(|| black_box(bin_campaign(&gen, n, exec)))
        });
    }
    g.finish();
}

fn min_coherent(c: &mut Criterion) {
    let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
    let m = MediumSpec::new(4.0, 26.5e-9).unwrap();
    let bloch = default_bloch(&p, &m).unwrap();
    let mut g = c.benchmark_group("min_coherent_64_slices");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(min_coherent_model_with(&p, &m, 64, &bloch, exec).unwrap()))
        });
    }
    g.finish();
}

fn egalitarian_sweep(c: &mut Criterion) {
    let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
    let m = MediumSpec::default();
    let grid: Vec<f64> = (1..=32).map(|k| 0.25 * k as f64).collect();
    let mut g = c.benchmark_group("egalitarian_sweep_32");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(sweep_od_with(ModelSpec::Egalitarian, &p, &grid, &m, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, campaign, min_coherent, egalitarian_sweep);
criterion_main!(benches);
