//! Kernel timings in a single-thread pool against the full pool.
//!
//! Build with `--no-default-features` to time the sequential fallback without
//! rayon at all.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modpulse::amplitude::strang_evolve;
use modpulse::coupling::coupling_table;
use modpulse::harness::{preset, run_bands, Pipeline};
use modpulse::nls::{NlsSolver, WaveField};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let full = rayon::current_num_threads().max(2);
    [1, full]
        .into_iter()
        .map(|n| (format!("{n}-thread"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

fn kernels(c: &mut Criterion) {
    let single = Pipeline::build(&preset("mathieu_single_mode").unwrap()).unwrap();
    let three = Pipeline::build(&preset("three_pulse").unwrap()).unwrap();
    let mut bands = preset("mathieu_single_mode").unwrap();
    bands.bands.points_per_segment = 256;

    let fine = single.fine_grid(16).unwrap();
    let u0 = single.ansatz(0).unwrap().leading_order_field(&single.initial, &single.macro_grid, &fine).unwrap();
    let nls = NlsSolver::new(fine, &single.potential, 1.0).unwrap();
    let init = WaveField { t: 0.0, u: u0 };
    let dt = 0.05 * nls.eps();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("band_sweep", &name), |b| b.iter(|| pool.install(|| run_bands(&bands).unwrap())));
        g.bench_function(BenchmarkId::new("coupling_table", &name), |b| {
            b.iter(|| pool.install(|| coupling_table(&three.system, &three.solver, 1.0, None).unwrap()))
        });
        g.bench_function(BenchmarkId::new("amplitude_strang_100", &name), |b| {
            b.iter(|| pool.install(|| strang_evolve(&three.amplitude, &three.macro_grid, &three.initial, 0.1, 1e-3, 0).unwrap()))
        });
        g.bench_function(BenchmarkId::new("nls_split_step_100", &name), |b| {
            b.iter(|| pool.install(|| nls.evolve(&init, 100.0 * dt, dt, 0).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
