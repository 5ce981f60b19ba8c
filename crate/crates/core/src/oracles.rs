//! Slow, independent reference computations used to check the solvers:
//! literal enumerations of the lattice sums, materialized block kernels, a
//! dense QP solver, a flat multiple-kernel solver, finite differences,
//! full-lattice solves and a primal solver working on explicit weights.

use std::ops::Range;

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::inner::{compute_lambda, group_forms, group_norms, GroupSet};
use crate::kernel::{block_multipliers, group_quadratic_form, GramCache, GramMode, GroupQuadratics, KernelSpec};
use crate::lattice::{group_weight, CertificateBlocks, GroupWeightScheme, Lattice, Orientation, TaskGroup};
use crate::outer::{floor_simplex, solve_outer, OuterSolution};

fn all_groups(lattice: &Lattice) -> Vec<TaskGroup> {
    let t = lattice.num_tasks();
    assert!(t <= 20, "enumeration oracles are limited to 20 tasks");
    (1u64..(1u64 << t)).map(|m| TaskGroup::from_mask(m).expect("nonzero mask")).collect()
}

/// `Σ_{v ∈ D(upper) ∩ A(lower)} d_v` by scanning the whole lattice.
pub fn interval_weight_sum_enum(lattice: &Lattice, upper: TaskGroup, lower: TaskGroup, scheme: &GroupWeightScheme) -> f64 {
    all_groups(lattice)
        .into_iter()
        .filter(|&v| lattice.is_ancestor(upper, v) && lattice.is_ancestor(v, lower))
        .map(|v| group_weight(v, scheme))
        .sum()
}

/// Certificate sum for source `s` by literal enumeration of `D(s)`.
pub fn enumerated_certificate_sum(lattice: &Lattice, s: TaskGroup, blocks: &CertificateBlocks, scheme: &GroupWeightScheme) -> Result<f64> {
    if blocks.num_tasks() != lattice.num_tasks() {
        return Err(Error::Lattice("certificate blocks do not match the lattice".into()));
    }
    let groups = all_groups(lattice);
    let mut total = 0.0;
    for &w in groups.iter().filter(|&&w| lattice.is_ancestor(s, w)) {
        let denom: f64 = groups
            .iter()
            .filter(|&&v| lattice.is_ancestor(s, v) && lattice.is_ancestor(v, w))
            .map(|&v| group_weight(v, scheme))
            .sum();
        total += blocks.group_numerator(w) / (denom * denom);
    }
    Ok(total)
}

/// Certificate sum at `beta` with numerators from the per-group quadratic forms.
pub fn enumerated_certificate(cache: &GramCache, beta: &[f64], s: TaskGroup, lattice: &Lattice, hyper: &Hyperparams) -> Result<f64> {
    let quads = cache.task_pair_quadratics(beta)?;
    let groups = all_groups(lattice);
    let mut total = 0.0;
    for &w in groups.iter().filter(|&&w| lattice.is_ancestor(s, w)) {
        let mut numer = 0.0;
        for j in 0..cache.num_kernels() {
            numer += group_quadratic_form(w, j, &quads, hyper.mu)?;
        }
        let denom: f64 = groups
            .iter()
            .filter(|&&v| lattice.is_ancestor(s, v) && lattice.is_ancestor(v, w))
            .map(|&v| group_weight(v, &hyper.weights))
            .sum();
        total += numer / (denom * denom);
    }
    Ok(total)
}

/// Dense `K_w^j` over all samples (label-scaled), row-major `N x N`.
pub fn materialize_block_kernel(cache: &GramCache, w: TaskGroup, j: usize, mu: f64) -> Vec<f64> {
    let n = cache.num_samples();
    let (dm, cm) = block_multipliers(mu);
    let mut k = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            let (tp, tq) = (cache.sample_task(p), cache.sample_task(q));
            if w.contains(tp) && w.contains(tq) {
                let m = if tp == tq { dm } else { cm };
                k[p * n + q] = m * cache.entry(j, p, q);
            }
        }
    }
    k
}

/// `Σ_{w, j} θ_wj K_w^j` assembled from materialized block kernels.
pub fn materialize_effective_kernel(cache: &GramCache, groups: &[TaskGroup], theta: &[f64], mu: f64) -> Vec<f64> {
    let n = cache.num_samples();
    let nk = cache.num_kernels();
    let mut out = vec![0.0; n * n];
    for (w, &g) in groups.iter().enumerate() {
        for j in 0..nk {
            let th = theta[w * nk + j];
            if th != 0.0 {
                for (o, v) in out.iter_mut().zip(materialize_block_kernel(cache, g, j, mu)) {
                    *o += th * v;
                }
            }
        }
    }
    out
}

/// `vᵀ M v` for a row-major square matrix.
pub fn quadratic(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    (0..n).map(|p| v[p] * (0..n).map(|q| m[p * n + q] * v[q]).sum::<f64>()).sum()
}

/// `c^j_{t1 t2}` from explicit double sums over samples.
pub fn task_pair_quadratics_enum(cache: &GramCache, beta: &[f64]) -> GroupQuadratics {
    let t = cache.num_tasks();
    let mut q = GroupQuadratics::zeros(cache.num_kernels(), t);
    for j in 0..cache.num_kernels() {
        for t1 in 0..t {
            for t2 in 0..t {
                let mut s = 0.0;
                for p in cache.task_range(t1) {
                    for r in cache.task_range(t2) {
                        s += beta[p] * cache.entry(j, p, r) * beta[r];
                    }
                }
                q.set(j, t1, t2, s);
            }
        }
    }
    q
}

/// Euclidean projection onto `{0 <= β <= C, y_tᵀβ_t = 0 for every task}`.
pub fn project_feasible(v: &[f64], tasks: &[Range<usize>], labels: &[f64], c: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for r in tasks {
        let at = |nu: f64, out: &mut [f64]| -> f64 {
            let mut s = 0.0;
            for p in r.clone() {
                out[p] = (v[p] - nu * labels[p]).clamp(0.0, c);
                s += labels[p] * out[p];
            }
            s
        };
        let spread = r.clone().map(|p| v[p].abs()).fold(0.0f64, f64::max) + c + 1.0;
        let (mut lo, mut hi) = (-spread, spread);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid, &mut out) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi), &mut out);
    }
    out
}

/// Minimizes a smooth convex `f` over the dual feasible set by accelerated
/// projected gradient with backtracking and adaptive restart.
fn accelerated_projected<F>(mut f: F, n: usize, tasks: &[Range<usize>], labels: &[f64], c: f64, iters: usize) -> Vec<f64>
where
    F: FnMut(&[f64], bool) -> (f64, Vec<f64>),
{
    let mut x = vec![0.0; n];
    let mut y = x.clone();
    let mut fx = f(&x, false).0;
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut stall = 0;
    for _ in 0..iters {
        let (fy, gy) = f(&y, true);
        let (next, fnext) = loop {
            let step: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
            let cand = project_feasible(&step, tasks, labels, c);
            let fc = f(&cand, false).0;
            let diff: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let lin: f64 = gy.iter().zip(&diff).map(|(g, d)| g * d).sum();
            let sq: f64 = diff.iter().map(|d| d * d).sum();
            if fc <= fy + lin + 0.5 * lip * sq + 1e-15 * fy.abs().max(1.0) || lip > 1e18 {
                break (cand, fc);
            }
            lip *= 2.0;
        };
        let moved: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if fnext > fx {
            // restart momentum
            t = 1.0;
            y = x.clone();
            lip *= 2.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        x = next;
        t = t_next;
        fx = fnext;
        lip *= 0.95;
        stall = if moved < 1e-15 { stall + 1 } else { 0 };
        if stall > 50 {
            break;
        }
    }
    x
}

/// `max sum(β) - ½ βᵀKβ` over the dual feasible set; returns `(β, value)`.
pub fn dense_qp(kernel: &[f64], tasks: &[Range<usize>], labels: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = labels.len();
    let f = |b: &[f64], want_grad: bool| {
        let kb: Vec<f64> = (0..n).map(|p| (0..n).map(|q| kernel[p * n + q] * b[q]).sum()).collect();
        let val = 0.5 * b.iter().zip(&kb).map(|(a, k)| a * k).sum::<f64>() - b.iter().sum::<f64>();
        let grad = if want_grad { kb.iter().map(|k| k - 1.0).collect() } else { Vec::new() };
        (val, grad)
    };
    let beta = accelerated_projected(f, n, tasks, labels, c, iters);
    let value = beta.iter().sum::<f64>() - 0.5 * quadratic(kernel, &beta);
    (beta, value)
}

/// Flat multiple-kernel dual `max sum(β) - ½ ‖(κ_k βᵀK_kβ)_k‖_r`; returns `(β, value)`.
pub fn flat_mkl(kernels: &[Vec<f64>], kappa: &[f64], r: f64, tasks: &[Range<usize>], labels: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = labels.len();
    let value_of = |b: &[f64]| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let kbs: Vec<Vec<f64>> = kernels.iter().map(|k| (0..n).map(|p| (0..n).map(|q| k[p * n + q] * b[q]).sum()).collect()).collect();
        let v: Vec<f64> = kbs.iter().zip(kappa).map(|(kb, w)| w * b.iter().zip(kb).map(|(a, x)| a * x).sum::<f64>()).collect();
        let norm = v.iter().map(|x| x.max(0.0).powf(r)).sum::<f64>().powf(1.0 / r);
        (norm, v, kbs)
    };
    let f = |b: &[f64], want_grad: bool| {
        let (norm, v, kbs) = value_of(b);
        let val = 0.5 * norm - b.iter().sum::<f64>();
        let mut grad = Vec::new();
        if want_grad {
            grad = vec![-1.0; n];
            if norm > 0.0 {
                for (k, kb) in kbs.iter().enumerate() {
                    let w = (v[k].max(0.0) / norm).powf(r - 1.0) * kappa[k];
                    for p in 0..n {
                        grad[p] += w * kb[p];
                    }
                }
            }
        }
        (val, grad)
    };
    let beta = accelerated_projected(f, n, tasks, labels, c, iters);
    let value = beta.iter().sum::<f64>() - 0.5 * value_of(&beta).0;
    (beta, value)
}

/// Central differences of `f` along `e_i - point` for every coordinate `i`.
///
/// On the simplex this is the derivative toward vertex `i`; for a
/// differentiable `f` it equals `g_i - <g, point>`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], step: f64) -> Vec<f64> {
    let n = point.len();
    (0..n)
        .map(|i| {
            let shifted = |sign: f64| -> Vec<f64> {
                (0..n).map(|k| point[k] + sign * step * ((if k == i { 1.0 } else { 0.0 }) - point[k])).collect()
            };
            (f(&shifted(1.0)) - f(&shifted(-1.0))) / (2.0 * step)
        })
        .collect()
}

/// All `2^T - 1` nodes of the lattice as a group set.
pub fn full_group_set(num_tasks: usize, hyper: &Hyperparams) -> Result<GroupSet> {
    let lattice = Lattice::new(num_tasks, hyper.orientation)?;
    GroupSet::new(lattice, all_groups(&lattice), &hyper.weights)
}

/// The outer problem over the complete lattice, bypassing the active set.
pub struct FullLatticeResult {
    pub cache: GramCache,
    pub set: GroupSet,
    pub solution: OuterSolution,
}

pub fn full_lattice_solve(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<FullLatticeResult> {
    hyper.validate()?;
    if data.num_tasks() > 4 {
        return Err(Error::InvalidParam("the full-lattice oracle is limited to 4 tasks".into()));
    }
    let cache = GramCache::build(data, specs, GramMode::Explicit)?;
    let set = full_group_set(data.num_tasks(), hyper)?;
    let solution = solve_outer(&cache, &set, hyper, None)?;
    Ok(FullLatticeResult { cache, set, solution })
}

/// `Θ̂(γ, β)` at fixed `β` and its gradient in `γ`.
fn theta_hat_and_grad(forms: &[f64], gamma: &[f64], set: &GroupSet, hyper: &Hyperparams, n: usize) -> (f64, Vec<f64>) {
    let (p_bar, q_bar, q) = (hyper.p_bar(), hyper.q_bar(), hyper.q);
    let lambda = compute_lambda(gamma, set, q, 0.0);
    let r = group_norms(forms, n, p_bar, q_bar);
    let s: f64 = r.iter().zip(&lambda).map(|(a, l)| a * l).sum();
    if s <= 0.0 {
        return (0.0, vec![0.0; gamma.len()]);
    }
    let grad = (0..set.len())
        .map(|i| {
            let partial: f64 = set.descendants(i).iter().map(|&w| lambda[w].powf(q) * r[w]).sum();
            set.weight(i).powf(q) * gamma[i].powf(-q) / q_bar * s.powf(1.0 / q_bar - 1.0) * partial
        })
        .collect();
    (s.powf(1.0 / q_bar), grad)
}

/// A certified lower bound on the full-lattice dual objective at `beta`:
/// `sum(β) - ½ U` where `U >= max_γ Θ̂(γ, β)` is a Frank-Wolfe bound for the
/// concave maximization over the simplex.
pub fn exact_dual_value(cache: &GramCache, beta: &[f64], hyper: &Hyperparams, iters: usize) -> Result<f64> {
    let set = full_group_set(cache.num_tasks(), hyper)?;
    let n = cache.num_kernels();
    let forms = group_forms(&cache.task_pair_quadratics(beta)?, set.groups(), hyper.mu)?;
    let mut gamma = vec![1.0 / set.len() as f64; set.len()];
    let mut upper = f64::INFINITY;
    let mut eta0 = 0.0;
    for k in 1..=iters {
        let (val, g) = theta_hat_and_grad(&forms, &gamma, &set, hyper, n);
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dot: f64 = g.iter().zip(&gamma).map(|(a, b)| a * b).sum();
        upper = upper.min(val + gmax - dot);
        if val <= 0.0 {
            upper = 0.0;
            break;
        }
        if k == 1 {
            eta0 = 1.0 / (g.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-12);
        }
        let eta = eta0 / (k as f64).sqrt();
        let shift = gmax;
        let mut next: Vec<f64> = gamma.iter().zip(&g).map(|(x, gi)| x * (eta * (gi - shift)).exp()).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        floor_simplex(&mut next, 1e-300);
        gamma = next;
    }
    Ok(beta.iter().sum::<f64>() - 0.5 * upper)
}

/// Explicit primal weights over the complete lattice (normal orientation).
#[derive(Clone, Debug)]
pub struct PrimalReference {
    pub groups: Vec<TaskGroup>,
    /// `h0[w][j]`, a vector in the feature space of kernel `j`.
    pub h0: Vec<Vec<Vec<f64>>>,
    /// `h[w][j][k]` for the `k`-th member task of `w`.
    pub h: Vec<Vec<Vec<Vec<f64>>>>,
    pub biases: Vec<f64>,
    /// `Ω` at the returned weights.
    pub omega: f64,
    /// `½ Ω² + C Σ hinge` at the returned weights.
    pub objective: f64,
}

#[derive(Clone)]
struct PrimalProblem<'a> {
    groups: Vec<TaskGroup>,
    /// `D(v)` index lists.
    desc: Vec<Vec<usize>>,
    d: Vec<f64>,
    /// Per kernel feature dimension.
    width: Vec<usize>,
    /// `φ^j(x)` per task, sample, kernel.
    phi: Vec<Vec<Vec<Vec<f64>>>>,
    y: Vec<Vec<f64>>,
    hyper: &'a Hyperparams,
    num_params: usize,
    offsets: Vec<Vec<usize>>,
}

impl PrimalProblem<'_> {
    fn group_offset(&self, w: usize, j: usize) -> usize {
        self.offsets[w][j]
    }

    fn bias_offset(&self) -> usize {
        self.num_params - self.y.len()
    }

    fn omega(&self, x: &[f64]) -> f64 {
        let hp = Hyperparams { c: 0.0, ..self.hyper.clone() };
        let probe = PrimalProblem { hyper: &hp, ..self.clone() };
        (2.0 * probe.eval(x, 1.0, 1.0, false).2).sqrt()
    }

    /// Smoothed objective (`delta` in the norms, Huber width `tau` on the hinge), its
    /// gradient, and the exact objective.
    fn eval(&self, x: &[f64], delta: f64, tau: f64, want_grad: bool) -> (f64, Vec<f64>, f64) {
        let (p, q, mu, c) = (self.hyper.p, self.hyper.q, self.hyper.mu, self.hyper.c);
        let nk = self.width.len();
        let ng = self.groups.len();
        // Θ_w^j exact and smoothed
        let mut th = vec![vec![0.0; nk]; ng];
        let mut ths = vec![vec![0.0; nk]; ng];
        for w in 0..ng {
            let members = self.groups[w].len();
            for j in 0..nk {
                let o = self.group_offset(w, j);
                let e = self.width[j];
                let mut s = mu * x[o..o + e].iter().map(|v| v * v).sum::<f64>();
                for k in 0..members {
                    let ok = o + e * (k + 1);
                    s += x[ok..ok + e].iter().map(|v| v * v).sum::<f64>();
                }
                th[w][j] = s.sqrt();
                ths[w][j] = (s + delta * delta).sqrt();
            }
        }
        let pnorm = |row: &[f64]| row.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p);
        let tw: Vec<f64> = th.iter().map(|r| pnorm(r)).collect();
        let tws: Vec<f64> = ths.iter().map(|r| pnorm(r)).collect();
        let node = |t: &[f64], v: usize| self.desc[v].iter().map(|&w| t[w].powf(q)).sum::<f64>().powf(1.0 / q);
        let omega: f64 = (0..ng).map(|v| self.d[v] * node(&tw, v)).sum();
        let ms: Vec<f64> = (0..ng).map(|v| node(&tws, v)).collect();
        let omega_s: f64 = (0..ng).map(|v| self.d[v] * ms[v]).sum();

        // per-task effective weights u_t^j
        let ntasks = self.y.len();
        let mut u = vec![vec![Vec::new(); nk]; ntasks];
        for t in 0..ntasks {
            for j in 0..nk {
                u[t][j] = vec![0.0; self.width[j]];
            }
        }
        for (w, g) in self.groups.iter().enumerate() {
            for (k, t) in g.members().enumerate() {
                for j in 0..nk {
                    let o = self.group_offset(w, j);
                    let e = self.width[j];
                    for f in 0..e {
                        u[t][j][f] += x[o + f] + x[o + e * (k + 1) + f];
                    }
                }
            }
        }
        let bo = self.bias_offset();
        let mut loss = 0.0;
        let mut loss_s = 0.0;
        let mut gu = vec![vec![Vec::new(); nk]; ntasks];
        let mut gb = vec![0.0; ntasks];
        for t in 0..ntasks {
            for j in 0..nk {
                gu[t][j] = vec![0.0; self.width[j]];
            }
            for (i, &yi) in self.y[t].iter().enumerate() {
                let mut score = -x[bo + t];
                for j in 0..nk {
                    score += u[t][j].iter().zip(&self.phi[t][i][j]).map(|(a, b)| a * b).sum::<f64>();
                }
                let z = 1.0 - yi * score;
                loss += z.max(0.0);
                let (ls, dl) = if z <= 0.0 {
                    (0.0, 0.0)
                } else if z < tau {
                    (z * z / (2.0 * tau), z / tau)
                } else {
                    (z - 0.5 * tau, 1.0)
                };
                loss_s += ls;
                if want_grad && dl != 0.0 {
                    // dz/dscore = -y
                    for j in 0..nk {
                        for (g, ph) in gu[t][j].iter_mut().zip(&self.phi[t][i][j]) {
                            *g -= c * dl * yi * ph;
                        }
                    }
                    gb[t] += c * dl * yi;
                }
            }
        }
        let exact = 0.5 * omega * omega + c * loss;
        let smooth = 0.5 * omega_s * omega_s + c * loss_s;
        if !want_grad {
            return (smooth, Vec::new(), exact);
        }

        let mut grad = vec![0.0; self.num_params];
        // regularizer: dΩ/dΘ_w = Σ_{v ∈ A(w)} d_v M_v^{1-q} Θ_w^{q-1}
        let mut d_tw = vec![0.0; ng];
        for v in 0..ng {
            let factor = self.d[v] * ms[v].powf(1.0 - q);
            for &w in &self.desc[v] {
                d_tw[w] += factor * tws[w].powf(q - 1.0);
            }
        }
        for w in 0..ng {
            let members = self.groups[w].len();
            for j in 0..nk {
                let dth = omega_s * d_tw[w] * (ths[w][j] / tws[w]).powf(p - 1.0) / ths[w][j];
                let o = self.group_offset(w, j);
                let e = self.width[j];
                for f in 0..e {
                    grad[o + f] += dth * mu * x[o + f];
                }
                for k in 0..members {
                    let ok = o + e * (k + 1);
                    for f in 0..e {
                        grad[ok + f] += dth * x[ok + f];
                    }
                }
            }
        }
        // loss through u_t^j
        for (w, g) in self.groups.iter().enumerate() {
            for (k, t) in g.members().enumerate() {
                for j in 0..nk {
                    let o = self.group_offset(w, j);
                    let e = self.width[j];
                    for f in 0..e {
                        grad[o + f] += gu[t][j][f];
                        grad[o + e * (k + 1) + f] += gu[t][j][f];
                    }
                }
            }
        }
        grad[bo..].copy_from_slice(&gb);
        (smooth, grad, exact)
    }
}

fn feature_map(spec: &KernelSpec, x: &[f64], norm: f64) -> Vec<f64> {
    let s = 1.0 / norm.sqrt();
    match *spec {
        KernelSpec::LinearFeature { feature } => vec![x[feature] * s],
        KernelSpec::LinearAll => x.iter().map(|v| v * s).collect(),
        KernelSpec::Gaussian { .. } => unreachable!("checked by the caller"),
    }
}

/// Minimizes `½ Ω² + C Σ hinge` over explicit weights on the complete lattice.
///
/// Accelerated gradient descent on a smoothed objective (norms smoothed by
/// `δ`, hinge by a Huber width `τ`), with `δ = τ` decreased in stages; the best
/// exact objective seen is returned.
pub fn primal_reference_solve(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams, budget: usize) -> Result<PrimalReference> {
    hyper.validate()?;
    let t = data.num_tasks();
    if t > 4 {
        return Err(Error::InvalidParam("the primal oracle is limited to 4 tasks".into()));
    }
    if specs.iter().any(|k| !k.is_linear()) {
        return Err(Error::Unsupported("the primal oracle needs linear kernels".into()));
    }
    let lattice = Lattice::new(t, Orientation::Normal)?;
    let groups = all_groups(&lattice);
    let norms = crate::kernel::trace_normalizers(data, specs);
    let width: Vec<usize> = specs
        .iter()
        .map(|k| match k {
            KernelSpec::LinearFeature { .. } => 1,
            _ => data.dim,
        })
        .collect();
    let mut offsets = Vec::new();
    let mut next = 0;
    for g in &groups {
        let mut row = Vec::new();
        for &e in &width {
            row.push(next);
            next += e * (g.len() + 1);
        }
        offsets.push(row);
    }
    let num_params = next + t;
    let phi = data
        .tasks
        .iter()
        .map(|task| task.x.iter().map(|x| specs.iter().zip(&norms).map(|(k, &c)| feature_map(k, x, c)).collect()).collect())
        .collect();
    let desc = groups.iter().map(|&v| (0..groups.len()).filter(|&w| lattice.is_ancestor(v, groups[w])).collect()).collect();
    let problem = PrimalProblem {
        d: groups.iter().map(|&v| group_weight(v, &hyper.weights)).collect(),
        groups: groups.clone(),
        desc,
        width,
        phi,
        y: data.tasks.iter().map(|t| t.y.clone()).collect(),
        hyper,
        num_params,
        offsets,
    };

    let mut x = vec![0.0; num_params];
    let (_, _, mut best) = problem.eval(&x, 1.0, 1.0, false);
    let mut best_x = x.clone();
    let stages = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let per_stage = (budget / stages.len()).max(1);
    for &smooth in &stages {
        let mut y = x.clone();
        let mut tk = 1.0f64;
        let mut lip = 1.0f64;
        let (mut fx, _, _) = problem.eval(&x, smooth, smooth, false);
        for _ in 0..per_stage {
            let (fy, gy, _) = problem.eval(&y, smooth, smooth, true);
            let gsq: f64 = gy.iter().map(|g| g * g).sum();
            let (cand, fc, exact) = loop {
                let cand: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
                let (fc, _, exact) = problem.eval(&cand, smooth, smooth, false);
                if fc <= fy - 0.5 * gsq / lip + 1e-15 * fy.abs() || lip > 1e18 {
                    break (cand, fc, exact);
                }
                lip *= 2.0;
            };
            if exact < best {
                best = exact;
                best_x = cand.clone();
            }
            if fc > fx {
                tk = 1.0;
                y = x.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            y = cand.iter().zip(&x).map(|(a, b)| a + (tk - 1.0) / t_next * (a - b)).collect();
            x = cand;
            fx = fc;
            tk = t_next;
            lip *= 0.9;
        }
    }

    // unpack
    let nk = specs.len();
    let mut h0 = Vec::new();
    let mut h = Vec::new();
    for (w, g) in groups.iter().enumerate() {
        let mut r0 = Vec::new();
        let mut rt = Vec::new();
        for j in 0..nk {
            let o = problem.group_offset(w, j);
            let e = problem.width[j];
            r0.push(best_x[o..o + e].to_vec());
            rt.push((0..g.len()).map(|k| best_x[o + e * (k + 1)..o + e * (k + 2)].to_vec()).collect());
        }
        h0.push(r0);
        h.push(rt);
    }
    let biases = best_x[problem.bias_offset()..].to_vec();
    let omega = problem.omega(&best_x);
    Ok(PrimalReference { groups, h0, h, biases, omega, objective: best })
}

/// Restricted-problem objective `H(γ)` over the complete lattice, solved to `tol`.
pub fn h_value(cache: &GramCache, set: &GroupSet, gamma: &[f64], hyper: &Hyperparams) -> Result<f64> {
    Ok(crate::inner::solve_inner(cache, set, gamma, hyper, None)?.objective)
}

/// Simplex grid with `steps` subdivisions per axis (3 coordinates).
pub fn simplex_grid3(steps: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let k = steps - i - j;
            out.push([i as f64 / steps as f64, j as f64 / steps as f64, k as f64 / steps as f64]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_exact_on_quadratic() {
        // f = Σ a_i x_i², g = 2 a x
        let a = [1.0, 2.0, 3.0];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(v, c)| c * v * v).sum::<f64>();
        let p = [0.2, 0.3, 0.5];
        let fd = fd_gradient(f, &p, 1e-5);
        let g: Vec<f64> = p.iter().zip(&a).map(|(v, c)| 2.0 * c * v).collect();
        let gp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        for i in 0..3 {
            assert!((fd[i] - (g[i] - gp)).abs() < 1e-8);
        }
        let fd = fd_gradient(|_| 4.0, &p, 1e-5);
        assert!(fd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_feasible() {
        let v = [0.7, -0.2, 1.5, 0.3];
        let y = [1.0, -1.0, 1.0, -1.0];
        let b = project_feasible(&v, &[0..4], &y, 1.0);
        assert!(b.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(b.iter().zip(&y).map(|(a, c)| a * c).sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid3(20).len(), 231);
    }
}
