//! The restricted inner problem for fixed `γ`:
//! `max_β sum(β) - ½ Θ̂(β)` with
//! `Θ̂ = (Σ_w λ_w (Σ_j Q_wj^p̄)^{q̄/p̄})^{1/q̄}` and `Q_wj = βᵀ K_w^j β`.
//!
//! `Θ̂` is a norm of the nonnegative vector `Q`, so `Θ̂(Q) = max_θ <θ, Q>` over
//! the unit ball of its dual norm. The solver alternates a closed-form `θ`
//! update with SMO on the `θ`-weighted kernel `Σ θ_wj K_w^j`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::kernel::{block_multipliers, group_quadratic_form, GramCache, GroupQuadratics};
use crate::lattice::{group_weight, GroupWeightScheme, Lattice, TaskGroup};
use crate::smo::{smo_solve, SmoOptions, SmoProblem};

const Q_FLOOR: f64 = 1e-12;

/// A hull-closed set of groups with precomputed order relations.
#[derive(Clone, Debug)]
pub struct GroupSet {
    lattice: Lattice,
    groups: Vec<TaskGroup>,
    /// Indices of `A(w) ∩ W` (including `w`).
    ancestors: Vec<Vec<usize>>,
    /// Indices of `D(w) ∩ W` (including `w`).
    descendants: Vec<Vec<usize>>,
    d: Vec<f64>,
}

impl GroupSet {
    pub fn new(lattice: Lattice, groups: Vec<TaskGroup>, scheme: &GroupWeightScheme) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidParam("active set is empty".into()));
        }
        let set: BTreeSet<TaskGroup> = groups.iter().copied().collect();
        if set.len() != groups.len() {
            return Err(Error::Lattice("active set contains duplicates".into()));
        }
        if !lattice.is_hull(&set) {
            return Err(Error::Lattice("active set is not hull-closed".into()));
        }
        let ancestors = groups
            .iter()
            .map(|&w| (0..groups.len()).filter(|&v| lattice.is_ancestor(groups[v], w)).collect())
            .collect();
        let descendants = groups
            .iter()
            .map(|&w| (0..groups.len()).filter(|&v| lattice.is_ancestor(w, groups[v])).collect())
            .collect();
        let d = groups.iter().map(|&w| group_weight(w, scheme)).collect();
        Ok(GroupSet { lattice, groups, ancestors, descendants, d })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn groups(&self) -> &[TaskGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn index_of(&self, w: TaskGroup) -> Option<usize> {
        self.groups.iter().position(|&g| g == w)
    }

    pub fn ancestors(&self, i: usize) -> &[usize] {
        &self.ancestors[i]
    }

    pub fn descendants(&self, i: usize) -> &[usize] {
        &self.descendants[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.d[i]
    }
}

/// `λ_w = (Σ_{v ∈ A(w)} d_v^q γ_v^{1-q})^{1/(1-q)}`; zero when an ancestor sits at the floor.
pub fn compute_lambda(gamma: &[f64], set: &GroupSet, q: f64, floor: f64) -> Vec<f64> {
    (0..set.len())
        .map(|w| {
            let anc = set.ancestors(w);
            if anc.iter().any(|&v| gamma[v] <= floor) {
                return 0.0;
            }
            let s: f64 = anc.iter().map(|&v| set.weight(v).powf(q) * gamma[v].powf(1.0 - q)).sum();
            s.powf(1.0 / (1.0 - q))
        })
        .collect()
}

/// `Q_wj` for every group and kernel, row-major `|W| x n`.
pub fn group_forms(quads: &GroupQuadratics, groups: &[TaskGroup], mu: f64) -> Result<Vec<f64>> {
    let n = quads.num_kernels;
    let mut out = Vec::with_capacity(groups.len() * n);
    for &w in groups {
        for j in 0..n {
            out.push(group_quadratic_form(w, j, quads, mu)?);
        }
    }
    Ok(out)
}

/// `R_w = (Σ_j Q_wj^p̄)^{q̄/p̄}` per group.
pub fn group_norms(q: &[f64], n: usize, p_bar: f64, q_bar: f64) -> Vec<f64> {
    q.chunks(n)
        .map(|row| {
            let s: f64 = row.iter().map(|v| v.powf(p_bar)).sum();
            s.powf(q_bar / p_bar)
        })
        .collect()
}

/// `Θ̂ = (Σ_w λ_w R_w)^{1/q̄}`.
pub fn theta_hat(q: &[f64], lambda: &[f64], n: usize, p_bar: f64, q_bar: f64) -> f64 {
    let s: f64 = group_norms(q, n, p_bar, q_bar).iter().zip(lambda).map(|(r, l)| l * r).sum();
    if s > 0.0 {
        s.powf(1.0 / q_bar)
    } else {
        0.0
    }
}

/// Point of the dual-norm sphere maximizing `<θ, Q>`: the gradient of `Θ̂` at `Q`.
fn norm_gradient(q: &[f64], lambda: &[f64], n: usize, p_bar: f64, q_bar: f64) -> Vec<f64> {
    let floored: Vec<f64> = q.iter().map(|v| v.max(Q_FLOOR)).collect();
    let mut active_q = floored.clone();
    for (w, l) in lambda.iter().enumerate() {
        if *l <= 0.0 {
            active_q[w * n..(w + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let s: f64 = group_norms(&active_q, n, p_bar, q_bar).iter().zip(lambda).map(|(r, l)| l * r).sum();
    let mut out = vec![0.0; q.len()];
    if s <= 0.0 {
        return out;
    }
    let outer = s.powf(1.0 / q_bar - 1.0);
    for (w, &l) in lambda.iter().enumerate() {
        if l <= 0.0 {
            continue;
        }
        let row = &floored[w * n..(w + 1) * n];
        let pw: f64 = row.iter().map(|v| v.powf(p_bar)).sum();
        let mid = pw.powf(q_bar / p_bar - 1.0);
        for j in 0..n {
            out[w * n + j] = outer * l * mid * row[j].powf(p_bar - 1.0);
        }
    }
    out
}

/// Closed-form kernel-weight update.
///
/// With primal block norms `r_wj = θ_wj sqrt(Q_wj)`, returns the `θ` on the unit
/// sphere of the dual norm of `Θ̂` minimizing `Σ r_wj² / θ_wj`. Groups with
/// `λ_w = 0` get `θ_w = 0`; groups whose previous weights are all zero are
/// seeded from the gradient of `Θ̂`.
pub fn kernel_weight_update(q: &[f64], lambda: &[f64], theta_old: &[f64], n: usize, p: f64, qexp: f64) -> Vec<f64> {
    let groups = lambda.len();
    assert_eq!(q.len(), groups * n);
    assert_eq!(theta_old.len(), groups * n);
    let p_bar = p / (2.0 * (p - 1.0));
    let q_bar = qexp / (2.0 * (qexp - 1.0));

    let mut start = theta_old.to_vec();
    let seed = norm_gradient(q, lambda, n, p_bar, q_bar);
    for w in 0..groups {
        let row = &mut start[w * n..(w + 1) * n];
        if lambda[w] <= 0.0 {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else if row.iter().all(|&v| v <= 0.0) {
            row.copy_from_slice(&seed[w * n..(w + 1) * n]);
        }
    }
    let top = start.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut theta = vec![0.0; groups * n];
    if top <= 0.0 {
        return theta;
    }

    // per-group block norms and within-group directions
    let mut z_tilde = vec![0.0; groups];
    let mut eta = vec![0.0; groups * n];
    for w in 0..groups {
        if lambda[w] <= 0.0 {
            continue;
        }
        let r: Vec<f64> = (0..n)
            .map(|j| start[w * n + j].max(1e-12 * top) * q[w * n + j].max(Q_FLOOR).sqrt())
            .collect();
        let z = r.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p);
        for j in 0..n {
            eta[w * n + j] = (r[j] / z).powf(2.0 - p);
        }
        z_tilde[w] = lambda[w].powf((1.0 - qexp) / qexp) * z;
    }
    let zq = z_tilde.iter().map(|v| v.powf(qexp)).sum::<f64>().powf(1.0 / qexp);
    for w in 0..groups {
        if lambda[w] <= 0.0 {
            continue;
        }
        let zeta = (z_tilde[w] / zq).powf(2.0 - qexp);
        let scale = zeta * lambda[w].powf(1.0 / q_bar);
        let any_positive = q[w * n..(w + 1) * n].iter().any(|&v| v > 0.0);
        for j in 0..n {
            theta[w * n + j] = if any_positive && q[w * n + j] == 0.0 { 0.0 } else { scale * eta[w * n + j] };
        }
    }
    theta
}

/// `s^j_{t1 t2} = Σ_{w ∋ t1, t2} θ_wj m(t1, t2)`, laid out like [`GroupQuadratics::c`].
pub fn effective_coefficients(groups: &[TaskGroup], theta: &[f64], n: usize, num_tasks: usize, mu: f64) -> Vec<f64> {
    let (dm, cm) = block_multipliers(mu);
    let mut s = vec![0.0; n * num_tasks * num_tasks];
    for (w, &g) in groups.iter().enumerate() {
        for j in 0..n {
            let th = theta[w * n + j];
            if th == 0.0 {
                continue;
            }
            for t1 in g.members() {
                for t2 in g.members() {
                    let m = if t1 == t2 { dm } else { cm };
                    s[(j * num_tasks + t1) * num_tasks + t2] += th * m;
                }
            }
        }
    }
    s
}

/// One entry of the label-scaled effective kernel between flat samples `p` and `q`.
pub fn effective_kernel_entry(cache: &GramCache, coeff: &[f64], p: usize, q: usize) -> f64 {
    let t = cache.num_tasks();
    let (tp, tq) = (cache.sample_task(p), cache.sample_task(q));
    (0..cache.num_kernels()).map(|j| coeff[(j * t + tp) * t + tq] * cache.entry(j, p, q)).sum()
}

/// Dense effective kernel, row-major `N x N`.
pub fn effective_kernel(cache: &GramCache, coeff: &[f64]) -> Vec<f64> {
    let n = cache.num_samples();
    let mut out = vec![0.0; n * n];
    cache.weighted_sum(coeff, &mut out);
    out
}

/// Warm start carried between solves.
#[derive(Clone, Debug, Default)]
pub struct InnerWarm {
    pub beta: Vec<f64>,
    /// Aligned with the current group set; may be empty.
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub beta: Vec<f64>,
    /// Kernel weights used for the final SMO solve, `|W| x n`.
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `Q_wj` at `beta`, `|W| x n`.
    pub forms: Vec<f64>,
    pub theta_hat: f64,
    /// `sum(β) - ½ Θ̂`.
    pub objective: f64,
    /// `sum(β) - ½ Σ θ Q`, the weighted-kernel SVM value.
    pub upper: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub smo_converged: bool,
    pub degenerate_tasks: Vec<usize>,
    /// `upper` after each alternation.
    pub upper_trace: Vec<f64>,
    /// `objective` after each alternation.
    pub objective_trace: Vec<f64>,
}

/// Solves the inner problem at `gamma` over the groups of `set`.
pub fn solve_inner(
    cache: &GramCache,
    set: &GroupSet,
    gamma: &[f64],
    hyper: &Hyperparams,
    warm: Option<&InnerWarm>,
) -> Result<InnerSolution> {
    let groups = set.groups();
    let n = cache.num_kernels();
    let nw = groups.len();
    let total = cache.num_samples();
    if gamma.len() != nw {
        return Err(Error::InvalidParam(format!("γ has {} entries for {nw} groups", gamma.len())));
    }
    if set.lattice().num_tasks() != cache.num_tasks() {
        return Err(Error::InvalidParam("lattice and data disagree on the task count".into()));
    }
    let (p_bar, q_bar) = (hyper.p_bar(), hyper.q_bar());
    let lambda = compute_lambda(gamma, set, hyper.q, hyper.gamma_floor);
    let ranges: Vec<_> = (0..cache.num_tasks()).map(|t| cache.task_range(t)).collect();

    let degenerate = |beta: Vec<f64>, lambda: Vec<f64>| InnerSolution {
        beta,
        theta: vec![0.0; nw * n],
        lambda,
        forms: vec![0.0; nw * n],
        theta_hat: 0.0,
        objective: 0.0,
        upper: 0.0,
        gap: 0.0,
        iterations: 0,
        converged: true,
        smo_converged: true,
        degenerate_tasks: Vec::new(),
        upper_trace: Vec::new(),
        objective_trace: Vec::new(),
    };
    if hyper.c == 0.0 || lambda.iter().all(|&l| l <= 0.0) {
        return Ok(degenerate(vec![0.0; total], lambda));
    }

    let mut beta = warm.map(|w| w.beta.clone()).filter(|b| b.len() == total).unwrap_or_else(|| vec![0.0; total]);
    let forms0 = group_forms(&cache.task_pair_quadratics(&beta)?, groups, hyper.mu)?;
    let warm_theta = warm.map(|w| w.theta.clone()).filter(|t| t.len() == nw * n).unwrap_or_else(|| vec![0.0; nw * n]);
    let mut theta = kernel_weight_update(&forms0, &lambda, &warm_theta, n, hyper.p, hyper.q);

    let smo_opts = SmoOptions { tol: hyper.smo_tol, max_iter: hyper.smo_max_iter, trace: false };
    let mut sol = degenerate(beta.clone(), lambda.clone());
    sol.converged = false;
    for it in 1..=hyper.inner_max_iter {
        let coeff = effective_coefficients(groups, &theta, n, cache.num_tasks(), hyper.mu);
        let kernel = effective_kernel(cache, &coeff);
        let smo = smo_solve(
            &SmoProblem { kernel: &kernel, tasks: &ranges, labels: cache.labels(), c: hyper.c },
            Some(&beta),
            &smo_opts,
        )?;
        beta = smo.beta;
        let forms = group_forms(&cache.task_pair_quadratics(&beta)?, groups, hyper.mu)?;
        let th = theta_hat(&forms, &lambda, n, p_bar, q_bar);
        let sum_beta: f64 = beta.iter().sum();
        let weighted: f64 = theta.iter().zip(&forms).map(|(a, b)| a * b).sum();
        let objective = sum_beta - 0.5 * th;
        let upper = sum_beta - 0.5 * weighted;
        let gap = (upper - objective).max(0.0);

        sol.upper_trace.push(upper);
        sol.objective_trace.push(objective);
        sol.beta = beta.clone();
        sol.theta = theta.clone();
        sol.forms = forms.clone();
        sol.theta_hat = th;
        sol.objective = objective;
        sol.upper = upper;
        sol.gap = gap;
        sol.iterations = it;
        sol.smo_converged = smo.converged;
        sol.degenerate_tasks = smo.degenerate_tasks;
        if gap <= hyper.inner_tol * objective.abs().max(1.0) {
            sol.converged = true;
            break;
        }
        theta = kernel_weight_update(&forms, &lambda, &theta, n, hyper.p, hyper.q);
    }
    if !sol.converged {
        log::warn!("inner alternation stopped after {} iterations with gap {:e}", sol.iterations, sol.gap);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetBundle, TaskData};
    use crate::kernel::{default_kernels, GramMode, KernelSpec};
    use crate::lattice::Orientation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bundle(tasks: usize, m: usize, dim: usize, seed: u64) -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..tasks)
            .map(|t| {
                let x: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
                let y = x.iter().enumerate().map(|(i, r)| if r[0] + 0.3 * (i % 3) as f64 - 0.3 > 0.0 { 1.0 } else { -1.0 }).collect();
                TaskData { name: format!("t{t}"), x, y }
            })
            .collect();
        DatasetBundle::new(dim, tasks).unwrap()
    }

    fn full_set(t: usize, a: f64) -> GroupSet {
        let groups: Vec<TaskGroup> = (1u64..(1 << t)).map(|m| TaskGroup::from_mask(m).unwrap()).collect();
        GroupSet::new(Lattice::new(t, Orientation::Normal).unwrap(), groups, &GroupWeightScheme::power(a)).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let single = GroupSet::new(
            Lattice::normal(1).unwrap(),
            vec![TaskGroup::singleton(0)],
            &GroupWeightScheme::power(1.0),
        )
        .unwrap();
        assert!((compute_lambda(&[0.4], &single, 1.5, 1e-9)[0] - 0.4).abs() < 1e-15);
        let set = full_set(2, 1.0);
        let third = 1.0 / 3.0;
        let lam = compute_lambda(&[third, third, third], &set, 1.5, 1e-9);
        let pair = set.index_of(TaskGroup::from_mask(3).unwrap()).unwrap();
        assert!((lam[pair] - 1.0 / 27.0).abs() < 1e-15);
        let lam = compute_lambda(&[1e-9, 0.5, 0.5 - 1e-9], &set, 1.5, 1e-9);
        assert_eq!(lam[0], 0.0);
        assert_eq!(lam[pair], 0.0);
        assert!(lam[1] > 0.0);
    }

    #[test]
    fn non_hull_rejected() {
        let r = GroupSet::new(Lattice::normal(2).unwrap(), vec![TaskGroup::from_mask(3).unwrap()], &GroupWeightScheme::power(1.5));
        assert!(r.is_err());
    }

    #[test]
    fn weight_update_symmetry_and_zeros() {
        let q = vec![1.0, 1.0, 1.0, 2.0, 0.5, 0.0];
        let theta = kernel_weight_update(&q, &[0.7, 0.0], &[0.0; 6], 3, 1.5, 1.5);
        assert!((theta[0] - theta[1]).abs() < 1e-15 && (theta[1] - theta[2]).abs() < 1e-15);
        assert_eq!(&theta[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn weights_lie_on_dual_sphere() {
        // Σ θ Q ≤ Θ̂ for every Q, with equality at the fixed point
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, q) = (1.3, 1.7);
        let hp = Hyperparams { p, q, ..Default::default() };
        let forms: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let lambda = [0.3, 0.9];
        let mut theta = kernel_weight_update(&forms, &lambda, &[0.0; 8], 4, p, q);
        for _ in 0..200 {
            theta = kernel_weight_update(&forms, &lambda, &theta, 4, p, q);
        }
        let th = theta_hat(&forms, &lambda, 4, hp.p_bar(), hp.q_bar());
        let dot: f64 = theta.iter().zip(&forms).map(|(a, b)| a * b).sum();
        assert!((dot - th).abs() < 1e-8 * th);
        for _ in 0..20 {
            let other: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let d: f64 = theta.iter().zip(&other).map(|(a, b)| a * b).sum();
            assert!(d <= theta_hat(&other, &lambda, 4, hp.p_bar(), hp.q_bar()) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn effective_entry_examples() {
        let data = bundle(1, 4, 2, 3);
        let cache = GramCache::build(&data, &[KernelSpec::LinearAll], GramMode::Explicit).unwrap();
        let g = [TaskGroup::singleton(0)];
        let zero = effective_coefficients(&g, &[0.0], 1, 1, 1.0);
        assert_eq!(effective_kernel_entry(&cache, &zero, 0, 1), 0.0);
        let one = effective_coefficients(&g, &[1.0], 1, 1, 1.0);
        assert!((effective_kernel_entry(&cache, &one, 0, 1) - 2.0 * cache.entry(0, 0, 1)).abs() < 1e-15);
    }

    #[test]
    fn zero_box_is_trivial() {
        let data = bundle(2, 5, 2, 4);
        let cache = GramCache::build(&data, &default_kernels(2), GramMode::Explicit).unwrap();
        let set = full_set(2, 1.5);
        let hp = Hyperparams { c: 0.0, ..Default::default() };
        let s = solve_inner(&cache, &set, &[1.0 / 3.0; 3], &hp, None).unwrap();
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.theta_hat, 0.0);
    }

    #[test]
    fn identical_tasks_get_identical_duals() {
        let one = bundle(1, 8, 2, 5);
        let data = DatasetBundle::new(2, vec![one.tasks[0].clone(), one.tasks[0].clone()]).unwrap();
        let cache = GramCache::build(&data, &default_kernels(2), GramMode::Explicit).unwrap();
        let set = full_set(2, 1.5);
        let hp = Hyperparams { inner_tol: 1e-10, smo_tol: 1e-10, ..Default::default() };
        let s = solve_inner(&cache, &set, &[0.3, 0.3, 0.4], &hp, None).unwrap();
        assert!(s.converged);
        for i in 0..8 {
            assert!((s.beta[i] - s.beta[8 + i]).abs() < 1e-5);
        }
    }

    #[test]
    fn alternation_upper_value_decreases() {
        let data = bundle(3, 8, 3, 6);
        let cache = GramCache::build(&data, &default_kernels(3), GramMode::Explicit).unwrap();
        let set = full_set(3, 1.5);
        let hp = Hyperparams { inner_tol: 1e-9, smo_tol: 1e-9, ..Default::default() };
        let s = solve_inner(&cache, &set, &[1.0 / 7.0; 7], &hp, None).unwrap();
        assert!(s.converged, "gap {}", s.gap);
        for w in s.upper_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0));
        }
        assert!(s.upper >= s.objective - 1e-12);
        // recomputing θ at the final β barely moves the value
        let again = kernel_weight_update(&s.forms, &s.lambda, &s.theta, cache.num_kernels(), hp.p, hp.q);
        let weighted: f64 = again.iter().zip(&s.forms).map(|(a, b)| a * b).sum();
        let sum_beta: f64 = s.beta.iter().sum();
        assert!(((sum_beta - 0.5 * weighted) - s.upper).abs() <= 1e-8 * s.objective.abs().max(1.0));
    }
}
