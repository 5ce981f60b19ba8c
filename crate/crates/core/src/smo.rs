//! Sequential minimal optimization for
//! `max sum(β) - ½ βᵀKβ` s.t. `0 <= β <= C` and `y_tᵀβ_t = 0` for every task.
//!
//! `K` is label-scaled (`K[p][q] = y_p y_q k(x_p, x_q)`), as in libsvm's `Q`.

use std::ops::Range;

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SmoOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record the objective after every pair update.
    pub trace: bool,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions { tol: 1e-5, max_iter: 10_000_000, trace: false }
    }
}

#[derive(Clone, Debug)]
pub struct SmoResult {
    pub beta: Vec<f64>,
    /// `Kβ - 1`.
    pub gradient: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    /// Tasks whose labels are all equal; their β stays at zero.
    pub degenerate_tasks: Vec<usize>,
    pub trace: Vec<f64>,
}

/// Dense row-major N x N kernel with task ranges and labels.
pub struct SmoProblem<'a> {
    pub kernel: &'a [f64],
    pub tasks: &'a [Range<usize>],
    pub labels: &'a [f64],
    pub c: f64,
}

fn objective(beta: &[f64], grad: &[f64]) -> f64 {
    // sum(β) - ½ βᵀKβ with Kβ = grad + 1
    beta.iter().zip(grad).map(|(b, g)| 0.5 * b * (1.0 - g)).sum()
}

/// Maximal violating pair `(i, j, violation)` inside one task.
fn select_pair(range: Range<usize>, beta: &[f64], grad: &[f64], y: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let (mut gmax, mut gmax2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut i, mut j) = (usize::MAX, usize::MAX);
    for t in range {
        let up = if y[t] > 0.0 { beta[t] < c } else { beta[t] > 0.0 };
        let low = if y[t] > 0.0 { beta[t] > 0.0 } else { beta[t] < c };
        let v = -y[t] * grad[t];
        if up && v > gmax {
            gmax = v;
            i = t;
        }
        if low && -v > gmax2 {
            gmax2 = -v;
            j = t;
        }
    }
    (i != usize::MAX && j != usize::MAX).then_some((i, j, gmax + gmax2))
}

pub fn smo_solve(problem: &SmoProblem<'_>, warm: Option<&[f64]>, opts: &SmoOptions) -> Result<SmoResult> {
    let n = problem.labels.len();
    if problem.kernel.len() != n * n {
        return Err(Error::InvalidParam(format!("kernel has {} entries, expected {}", problem.kernel.len(), n * n)));
    }
    if problem.tasks.iter().map(|r| r.len()).sum::<usize>() != n {
        return Err(Error::InvalidParam("task ranges do not cover the samples".into()));
    }
    let c = problem.c;
    let y = problem.labels;
    let k = problem.kernel;

    let degenerate_tasks: Vec<usize> = problem
        .tasks
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty() && (*r).clone().all(|p| y[p] == y[r.start]))
        .map(|(t, _)| t)
        .collect();
    if !degenerate_tasks.is_empty() {
        log::warn!("tasks {degenerate_tasks:?} have a single label; their dual variables are fixed at zero");
    }

    let mut beta = match warm {
        Some(w) if w.len() == n && is_feasible(w, problem) => w.to_vec(),
        Some(_) => {
            log::debug!("infeasible warm start discarded");
            vec![0.0; n]
        }
        None => vec![0.0; n],
    };
    if c == 0.0 {
        beta.iter_mut().for_each(|b| *b = 0.0);
    }
    let mut grad = vec![-1.0; n];
    for (p, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            let row = &k[p * n..(p + 1) * n];
            for (g, kv) in grad.iter_mut().zip(row) {
                *g += b * kv;
            }
        }
    }

    let mut trace = Vec::new();
    if opts.trace {
        trace.push(objective(&beta, &grad));
    }
    let ntasks = problem.tasks.len();
    let mut cursor = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut max_violation = 0.0;
    while iterations < opts.max_iter {
        // next task (round-robin) with a violation above tolerance
        let mut chosen = None;
        max_violation = 0.0f64;
        for off in 0..ntasks {
            let t = (cursor + off) % ntasks;
            if let Some((i, j, v)) = select_pair(problem.tasks[t].clone(), &beta, &grad, y, c) {
                max_violation = max_violation.max(v);
                if v > opts.tol && chosen.is_none() {
                    chosen = Some((t, i, j));
                }
            }
        }
        let Some((t, i, j)) = chosen else {
            converged = true;
            break;
        };
        cursor = (t + 1) % ntasks;
        iterations += 1;

        let (qi, qj) = (&k[i * n..(i + 1) * n], &k[j * n..(j + 1) * n]);
        let (old_i, old_j) = (beta[i], beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let quad = (qi[i] + qj[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qi[i] + qj[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        beta[i] = ai;
        beta[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for ((g, a), b) in grad.iter_mut().zip(qi).zip(qj) {
            *g += a * di + b * dj;
        }
        if opts.trace {
            trace.push(objective(&beta, &grad));
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations with KKT violation {max_violation:e}");
    }
    Ok(SmoResult {
        objective: objective(&beta, &grad),
        beta,
        gradient: grad,
        iterations,
        converged,
        max_violation,
        degenerate_tasks,
        trace,
    })
}

fn is_feasible(beta: &[f64], problem: &SmoProblem<'_>) -> bool {
    let box_ok = beta.iter().all(|&b| (0.0..=problem.c).contains(&b));
    box_ok
        && problem.tasks.iter().all(|r| {
            let s: f64 = r.clone().map(|p| beta[p] * problem.labels[p]).sum();
            s.abs() <= 1e-9 * problem.c.max(1.0) * r.len().max(1) as f64
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_kernel(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let d: f64 = x[p].iter().zip(&x[q]).map(|(a, b)| a * b).sum();
                k[p * n + q] = y[p] * y[q] * d;
            }
        }
        k
    }

    #[test]
    fn zero_box_gives_zero() {
        let x = vec![vec![1.0], vec![-1.0]];
        let y = vec![1.0, -1.0];
        let k = linear_kernel(&x, &y);
        let tasks = [0..2];
        let r = smo_solve(&SmoProblem { kernel: &k, tasks: &tasks, labels: &y, c: 0.0 }, None, &SmoOptions::default()).unwrap();
        assert_eq!(r.beta, vec![0.0, 0.0]);
        assert!(r.converged);
    }

    #[test]
    fn single_label_task_flagged() {
        let x = vec![vec![1.0], vec![2.0], vec![1.0], vec![-1.0]];
        let y = vec![1.0, 1.0, 1.0, -1.0];
        let k = linear_kernel(&x, &y);
        let tasks = [0..2, 2..4];
        let r = smo_solve(&SmoProblem { kernel: &k, tasks: &tasks, labels: &y, c: 1.0 }, None, &SmoOptions::default()).unwrap();
        assert_eq!(r.degenerate_tasks, vec![0]);
        assert_eq!(&r.beta[..2], &[0.0, 0.0]);
    }

    #[test]
    fn two_point_closed_form() {
        // points at ±1: optimum β = (0.5, 0.5) for C >= 0.5
        let x = vec![vec![1.0], vec![-1.0]];
        let y = vec![1.0, -1.0];
        let k = linear_kernel(&x, &y);
        let tasks = [0..2];
        let r = smo_solve(&SmoProblem { kernel: &k, tasks: &tasks, labels: &y, c: 10.0 }, None, &SmoOptions::default()).unwrap();
        assert!((r.beta[0] - 0.5).abs() < 1e-9 && (r.beta[1] - 0.5).abs() < 1e-9);
        assert!((r.objective - 0.5).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn feasible_and_monotone(seed in 0u64..1000, c in 0.1f64..5.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
            let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let k = linear_kernel(&x, &y);
            let tasks = [0..5, 5..12];
            let opts = SmoOptions { tol: 1e-8, trace: true, ..Default::default() };
            let r = smo_solve(&SmoProblem { kernel: &k, tasks: &tasks, labels: &y, c }, None, &opts).unwrap();
            prop_assert!(r.converged);
            for r_ in &tasks {
                let s: f64 = r_.clone().map(|p| r.beta[p] * y[p]).sum();
                prop_assert!(s.abs() < 1e-10);
            }
            prop_assert!(r.beta.iter().all(|&b| (0.0..=c).contains(&b)));
            for w in r.trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-10);
            }
        }
    }
}
