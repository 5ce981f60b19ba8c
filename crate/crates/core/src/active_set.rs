//! The active-set driver: solve the restricted problem, test the optimality
//! certificate on the sources of the complement, grow, repeat.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::inner::{solve_inner, GroupSet, InnerSolution, InnerWarm};
use crate::kernel::{certificate_building_blocks, GramCache, GramMode, KernelSpec};
use crate::lattice::{CertificateBlocks, Lattice, TaskGroup};
use crate::model::TrainedModel;
use crate::outer::{solve_outer, OuterSolution, OuterWarm};

/// One source node whose certificate sum exceeds the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violator {
    pub group: TaskGroup,
    pub lhs: f64,
}

/// Per-round log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub active_size: usize,
    pub objective: f64,
    pub theta_hat: f64,
    pub violators: usize,
    pub max_lhs: f64,
    /// Wall-clock time; left out of model files so they stay reproducible.
    #[serde(skip)]
    pub elapsed_secs: f64,
    pub active: Vec<TaskGroup>,
}

impl IterationRecord {
    /// `key=value` rendering for structured logs, without the timing.
    pub fn to_kv(&self) -> String {
        format!(
            "iteration={} active={} objective={} theta_hat={} violators={} max_lhs={}",
            self.iteration, self.active_size, self.objective, self.theta_hat, self.violators, self.max_lhs
        )
    }
}

/// Certificate sum of every source of the complement of `active`.
pub fn certificate_sums(
    lattice: &Lattice,
    active: &BTreeSet<TaskGroup>,
    blocks: &CertificateBlocks,
    hyper: &Hyperparams,
) -> Result<Vec<Violator>> {
    let sources = lattice.sources_of_complement(active)?;
    sources
        .par_iter()
        .map(|&s| {
            let lhs = match hyper.weights.power_form() {
                Ok(_) => lattice.descendant_certificate_sum(s, blocks, &hyper.weights)?,
                Err(_) => crate::oracles::enumerated_certificate_sum(lattice, s, blocks, &hyper.weights)?,
            };
            Ok(Violator { group: s, lhs })
        })
        .collect()
}

/// Sources whose certificate sum exceeds `Θ̂ + 2ε`, largest first, and the largest sum overall.
pub fn certificate_violators(
    cache: &GramCache,
    set: &GroupSet,
    beta: &[f64],
    theta_hat: f64,
    hyper: &Hyperparams,
) -> Result<(Vec<Violator>, f64)> {
    let active: BTreeSet<TaskGroup> = set.groups().iter().copied().collect();
    let lattice = set.lattice();
    if !lattice.is_hull(&active) {
        return Err(Error::Lattice("active set is not hull-closed".into()));
    }
    let blocks = certificate_building_blocks(&cache.task_pair_quadratics(beta)?, hyper.mu);
    let sums = certificate_sums(&lattice, &active, &blocks, hyper)?;
    let max_lhs = sums.iter().map(|v| v.lhs).fold(0.0f64, f64::max);
    let threshold = theta_hat + 2.0 * hyper.eps;
    let mut out: Vec<Violator> = sums.into_iter().filter(|v| v.lhs > threshold).collect();
    out.sort_by(|a, b| b.lhs.total_cmp(&a.lhs).then(a.group.cmp(&b.group)));
    Ok((out, max_lhs))
}

/// Everything the driver produces before it is turned into a predictor.
#[derive(Clone, Debug)]
pub struct FitState {
    /// Original task index of each lattice task.
    pub kept_tasks: Vec<usize>,
    /// Tasks excluded from the lattice because they have a single label.
    pub degenerate_tasks: Vec<usize>,
    pub cache: Option<GramCache>,
    pub set: Option<GroupSet>,
    pub solution: Option<OuterSolution>,
    pub log: Vec<IterationRecord>,
    pub certified: bool,
    /// `max(0, (max LHS - Θ̂) / 2)` at the final state.
    pub gap_bound: f64,
}

impl FitState {
    pub fn inner(&self) -> Option<&InnerSolution> {
        self.solution.as_ref().map(|s| &s.inner)
    }

    pub fn objective(&self) -> f64 {
        self.solution.as_ref().map_or(0.0, |s| s.objective)
    }
}

/// Splits tasks into those with both labels and the rest.
pub fn partition_degenerate(data: &DatasetBundle) -> (Vec<usize>, Vec<usize>) {
    (0..data.num_tasks()).partition(|&t| data.tasks[t].has_both_labels())
}

fn remap_warm(old: &GroupSet, sol: &OuterSolution, new: &GroupSet, n: usize) -> OuterWarm {
    let nw = new.len();
    let added = new.groups().iter().filter(|g| old.index_of(**g).is_none()).count();
    let keep = 1.0 - added as f64 / nw as f64;
    let mut gamma = vec![1.0 / nw as f64; nw];
    let mut theta = vec![0.0; nw * n];
    for (i, g) in new.groups().iter().enumerate() {
        if let Some(o) = old.index_of(*g) {
            gamma[i] = sol.gamma[o] * keep;
            theta[i * n..(i + 1) * n].copy_from_slice(&sol.inner.theta[o * n..(o + 1) * n]);
        }
    }
    OuterWarm { gamma, inner: InnerWarm { beta: sol.inner.beta.clone(), theta } }
}

/// Runs the driver over a fixed starting set.
pub fn fit_state(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<FitState> {
    fit_state_from(data, specs, hyper, None)
}

/// Like [`fit_state`], but with `fixed` the active set is never expanded.
pub fn fit_state_from(
    data: &DatasetBundle,
    specs: &[KernelSpec],
    hyper: &Hyperparams,
    fixed: Option<Vec<TaskGroup>>,
) -> Result<FitState> {
    hyper.validate()?;
    data.validate()?;
    let start = Instant::now();
    let (kept, degenerate) = partition_degenerate(data);
    if !degenerate.is_empty() {
        log::warn!("tasks {degenerate:?} have a single label; they get a constant predictor");
    }
    let mut state = FitState {
        kept_tasks: kept.clone(),
        degenerate_tasks: degenerate,
        cache: None,
        set: None,
        solution: None,
        log: Vec::new(),
        certified: true,
        gap_bound: 0.0,
    };
    if kept.is_empty() {
        return Ok(state);
    }
    let sub = data.select_tasks(&kept);
    let cache = GramCache::build(&sub, specs, GramMode::Auto { budget_bytes: hyper.memory_budget })?;
    let lattice = Lattice::new(kept.len(), hyper.orientation)?;
    let n = cache.num_kernels();
    let expand = fixed.is_none();
    let mut active: BTreeSet<TaskGroup> = match fixed {
        Some(groups) => groups.into_iter().collect(),
        None => lattice.initial_active_set(),
    };
    let mut set = GroupSet::new(lattice, active.iter().copied().collect(), &hyper.weights)?;
    let mut warm: Option<OuterWarm> = None;
    let mut certified = false;
    let mut round = 0;
    let (solution, gap_bound) = loop {
        round += 1;
        let mut sol = solve_outer(&cache, &set, hyper, warm.as_ref())?;
        let (mut violators, mut max_lhs) = certificate_violators(&cache, &set, &sol.inner.beta, sol.inner.theta_hat, hyper)?;
        if violators.is_empty() || !expand {
            // tighter inner solve at the chosen γ before trusting the certificate
            let tight = hyper.tightened(1e-2);
            let inner_warm = InnerWarm { beta: sol.inner.beta.clone(), theta: sol.inner.theta.clone() };
            let refined = solve_inner(&cache, &set, &sol.gamma, &tight, Some(&inner_warm))?;
            let (v, m) = certificate_violators(&cache, &set, &refined.beta, refined.theta_hat, hyper)?;
            violators = v;
            max_lhs = m;
            sol.objective = refined.objective;
            sol.inner = refined;
        }
        debug_assert!(lattice.is_hull(&active));
        let record = IterationRecord {
            iteration: round,
            active_size: set.len(),
            objective: sol.objective,
            theta_hat: sol.inner.theta_hat,
            violators: violators.len(),
            max_lhs,
            elapsed_secs: start.elapsed().as_secs_f64(),
            active: set.groups().to_vec(),
        };
        log::info!("{} elapsed_secs={:.3}", record.to_kv(), record.elapsed_secs);
        state.log.push(record);
        let gap = ((max_lhs - sol.inner.theta_hat) / 2.0).max(0.0);
        if !expand {
            certified = violators.is_empty();
            break (sol, gap);
        }
        if violators.is_empty() {
            certified = true;
            break (sol, gap);
        }
        if let Some(k) = hyper.top_k {
            violators.truncate(k);
        }
        if round >= hyper.max_rounds || active.len() + violators.len() > hyper.max_active {
            log::warn!("active-set cap reached after {round} rounds with |W| = {}; model is not certified", active.len());
            break (sol, gap);
        }
        for v in &violators {
            active.insert(v.group);
        }
        let next = GroupSet::new(lattice, active.iter().copied().collect(), &hyper.weights)?;
        warm = Some(remap_warm(&set, &sol, &next, n));
        set = next;
    };
    state.certified = certified;
    state.gap_bound = gap_bound;
    state.cache = Some(cache);
    state.set = Some(set);
    state.solution = Some(solution);
    Ok(state)
}

/// Trains a model with the active-set method.
pub fn fit(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<TrainedModel> {
    let state = fit_state(data, specs, hyper)?;
    TrainedModel::from_state(data, specs, hyper, &state, "mtfl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::default_kernels;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};

    fn small(seed: u64) -> DatasetBundle {
        let spec = SyntheticSpec { num_tasks: 3, groups: vec![2, 1], dim: 3, k_shared: 1, m: 10, seed, ..Default::default() };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn huge_eps_certifies_immediately() {
        let data = small(0);
        let hp = Hyperparams { eps: 1e9, ..Default::default() };
        let st = fit_state(&data, &default_kernels(3), &hp).unwrap();
        assert!(st.certified);
        assert_eq!(st.log.len(), 1);
        assert_eq!(st.log[0].active_size, 3);
    }

    #[test]
    fn zero_box_has_no_violators() {
        let data = small(1);
        let hp = Hyperparams { c: 0.0, ..Default::default() };
        let st = fit_state(&data, &default_kernels(3), &hp).unwrap();
        assert!(st.certified);
        assert_eq!(st.log[0].max_lhs, 0.0);
    }

    #[test]
    fn log_sets_are_hulls_and_grow() {
        let data = small(2);
        let hp = Hyperparams { c: 10.0, mu: 0.01, ..Default::default() };
        let st = fit_state(&data, &default_kernels(3), &hp).unwrap();
        let lat = Lattice::normal(3).unwrap();
        for r in &st.log {
            assert!(lat.is_hull(&r.active.iter().copied().collect()));
        }
        for w in st.log.windows(2) {
            assert!(w[1].active_size > w[0].active_size);
        }
    }

    #[test]
    fn single_label_tasks_are_set_aside() {
        let mut data = small(3);
        data.tasks[1].y.iter_mut().for_each(|y| *y = 1.0);
        let st = fit_state(&data, &default_kernels(3), &Hyperparams::default()).unwrap();
        assert_eq!(st.degenerate_tasks, vec![1]);
        assert_eq!(st.kept_tasks, vec![0, 2]);
    }
}
