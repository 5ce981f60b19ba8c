use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mtfl_bench::{bench_hyper, fixture, initial_problem};
use mtfl_core::active_set::fit_state;
use mtfl_core::inner::solve_inner;
use mtfl_core::kernel::GramMode;

fn inner(c: &mut Criterion) {
    let hyper = bench_hyper();
    let mut group = c.benchmark_group("inner_solve");
    for mode in [GramMode::Explicit, GramMode::ImplicitLinear] {
        let (data, kernels) = fixture(6, 30, 40);
        let (cache, set) = initial_problem(&data, &kernels, &hyper, mode);
        let gamma = vec![1.0 / set.len() as f64; set.len()];
        let name = if matches!(mode, GramMode::Explicit) { "explicit" } else { "implicit" };
        group.bench_function(name, |b| b.iter(|| solve_inner(&cache, &set, &gamma, &hyper, None).unwrap()));
    }
    group.finish();
}

fn full_fit(c: &mut Criterion) {
    let hyper = bench_hyper();
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for tasks in [4, 6, 8] {
        let (data, kernels) = fixture(tasks, 20, 30);
        group.bench_with_input(BenchmarkId::from_parameter(tasks), &tasks, |b, _| {
            b.iter(|| fit_state(&data, &kernels, &hyper).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, inner, full_fit);
criterion_main!(benches);
