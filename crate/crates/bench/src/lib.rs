//! Shared fixtures for the solver benchmarks.

use mtfl_core::data::{standardize, DatasetBundle};
use mtfl_core::hyper::Hyperparams;
use mtfl_core::inner::GroupSet;
use mtfl_core::kernel::{per_feature_kernels, GramCache, GramMode, KernelSpec};
use mtfl_core::lattice::{Lattice, Orientation};
use mtfl_core::synthetic::{generate_synthetic, SyntheticSpec};

/// A standardized planted-structure training set and its per-feature kernels.
pub fn fixture(num_tasks: usize, dim: usize, m: usize) -> (DatasetBundle, Vec<KernelSpec>) {
    let half = num_tasks / 2;
    let groups = if half == 0 { vec![num_tasks] } else { vec![half, num_tasks - half] };
    let spec = SyntheticSpec { num_tasks, groups, dim, k_shared: dim.min(5), m, m_test: 1, ..Default::default() };
    let (train, _, _) = generate_synthetic(&spec).expect("valid fixture spec");
    (standardize(&train).0, per_feature_kernels(dim))
}

/// Gram cache and starting group set of `data`, as the driver builds them.
pub fn initial_problem(data: &DatasetBundle, kernels: &[KernelSpec], hyper: &Hyperparams, mode: GramMode) -> (GramCache, GroupSet) {
    let cache = GramCache::build(data, kernels, mode).expect("valid kernels");
    let lattice = Lattice::new(data.num_tasks(), Orientation::Normal).expect("task count in range");
    let set = GroupSet::new(lattice, lattice.initial_active_set().into_iter().collect(), &hyper.weights).expect("valid set");
    (cache, set)
}

/// Planted-recovery hyperparameters with a loose gap target, for timing.
pub fn bench_hyper() -> Hyperparams {
    Hyperparams { c: 0.01, mu: 0.01, eps: 1e-2, ..Default::default() }
}
