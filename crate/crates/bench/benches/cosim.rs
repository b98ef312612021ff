use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wrcosim::cosim::zero_start;
use wrcosim::waveform::uniform_grid;
use wrcosim::{corpus, monolithic_solve, parse_netlist, predict, wr_solve, wr_window, Scheme, WrConfig};
use wrcosim_bench::{circuit_a, config};

fn topology(c: &mut Criterion) {
    let g = parse_netlist(corpus::CIRCUIT_B).unwrap();
    c.bench_function("predict circuit_b", |b| b.iter(|| predict(black_box(&g)).unwrap()));
}

fn window(c: &mut Criterion) {
    let sys = circuit_a();
    let start = zero_start(sys.field.as_ref(), &sys.mna).unwrap();
    let grid = uniform_grid(0.0, 1e-3, 500);
    for scheme in [Scheme::GaussSeidel, Scheme::Jacobi] {
        let cfg = WrConfig { scheme, k_max: 20, ..WrConfig::default() };
        c.bench_function(&format!("wr_window {scheme:?} H=0.5"), |b| {
            b.iter(|| wr_window(sys.field.as_ref(), &sys.mna, &start, black_box(&grid), &cfg, None).unwrap())
        });
    }
}

fn solves(c: &mut Criterion) {
    let sys = circuit_a();
    let cfg = config(1.0);
    let mut group = c.benchmark_group("one second of circuit_a");
    group.sample_size(20);
    group.bench_function("wr_solve GS", |b| b.iter(|| wr_solve(sys.field.as_ref(), &sys.mna, black_box(&cfg)).unwrap()));
    group.bench_function("monolithic", |b| b.iter(|| monolithic_solve(&sys, black_box(1e-3), 1.0).unwrap()));
    group.finish();
}

criterion_group!(benches, topology, window, solves);
criterion_main!(benches);
