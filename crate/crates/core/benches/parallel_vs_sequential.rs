use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fblq_core::blocklength::{figure1_curves, log_spaced, pauli_source, bounds_curve, Task, XiGrid};
use fblq_core::hierarchy::{default_suite, run_suite};
use fblq_core::par::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn hierarchy_slice(c: &mut Criterion) {
    // Every tenth entry keeps all instance kinds in the slice.
    let entries: Vec<_> = default_suite().into_iter().step_by(10).collect();
    let mut g = c.benchmark_group("hierarchy_suite_slice");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_suite(&entries, exec).unwrap())
        });
    }
    g.finish();
}

fn figure1_sweep(c: &mut Criterion) {
    let ns = log_spaced(10_000, 100_000_000, 40);
    let mut g = c.benchmark_group("figure1_40_points");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| figure1_curves(0.05, 1e-6, &ns, XiGrid::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn general_bounds_sweep(c: &mut Criterion) {
    let src = pauli_source(0.05).unwrap();
    let ns = log_spaced(1_000, 10_000_000, 200);
    let mut g = c.benchmark_group("compression_bounds_200_points");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| bounds_curve(&src, Task::Compression, 0.1, &ns, XiGrid::default(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, hierarchy_slice, figure1_sweep, general_bounds_sweep);
criterion_main!(benches);
