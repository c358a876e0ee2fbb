use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quench_bench::{closed, grid};
use quench_core::kernels::{build_gram, compute_states, KernelSpec};

fn bench_build(c: &mut Criterion) {
    let rows = grid(16);
    let scenario = closed(3);
    let mut group = c.benchmark_group("build_gram");
    group.sample_size(10);
    for (name, spec) in [("gsk", KernelSpec::gsk_default()), ("dsk", KernelSpec::dsk_default())] {
        let states = compute_states(&rows, &scenario, &spec, 0).unwrap().states;
        for workers in [1, 0] {
            group.bench_with_input(BenchmarkId::new(name, workers), &workers, |b, &w| {
                b.iter(|| build_gram(black_box(&states), &spec, "", w).unwrap().meta().min_eigenvalue)
            });
        }
    }
    group.finish();
}

fn bench_states(c: &mut Criterion) {
    let rows = grid(10);
    let scenario = closed(3);
    c.bench_function("gsk_states_100", |b| {
        b.iter(|| compute_states(black_box(&rows), &scenario, &KernelSpec::gsk_default(), 1).unwrap())
    });
}

criterion_group!(benches, bench_build, bench_states);
criterion_main!(benches);
