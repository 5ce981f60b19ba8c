//! Entropic mirror descent over the simplex for `min_γ H(γ)`, with the gradient
//! of `H` taken at the inner solution (Danskin).

use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::inner::{group_norms, solve_inner, GroupSet, InnerSolution, InnerWarm};
use crate::kernel::GramCache;

/// Gradient of `H` at `gamma` given the inner solution computed there.
///
/// `g_i = -(d_i^q γ_i^{-q}) / (2 q̄) * S^{1/q̄ - 1} * Σ_{w ∈ D(i) ∩ W} λ_w^q R_w`
/// with `S = Σ_w λ_w R_w`. Coordinates below the floor are evaluated at the floor.
pub fn grad_h(gamma: &[f64], set: &GroupSet, inner: &InnerSolution, hyper: &Hyperparams, num_kernels: usize) -> Vec<f64> {
    let (p_bar, q_bar, q) = (hyper.p_bar(), hyper.q_bar(), hyper.q);
    let r = group_norms(&inner.forms, num_kernels, p_bar, q_bar);
    let s: f64 = r.iter().zip(&inner.lambda).map(|(a, l)| a * l).sum();
    if s <= 0.0 {
        return vec![0.0; gamma.len()];
    }
    let outer = s.powf(1.0 / q_bar - 1.0);
    (0..set.len())
        .map(|i| {
            let partial: f64 = set.descendants(i).iter().map(|&w| inner.lambda[w].powf(q) * r[w]).sum();
            if partial == 0.0 {
                return 0.0;
            }
            let g = gamma[i].max(hyper.gamma_floor);
            -(set.weight(i).powf(q) * g.powf(-q)) / (2.0 * q_bar) * outer * partial
        })
        .collect()
}

/// Clamps coordinates to at least `floor` and rescales the rest so the sum is 1.
pub fn floor_simplex(gamma: &mut [f64], floor: f64) {
    let n = gamma.len();
    let mut pinned = vec![false; n];
    loop {
        let pinned_mass = floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free: f64 = gamma.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(g, _)| *g).sum();
        if free <= 0.0 {
            let v = 1.0 / n as f64;
            gamma.iter_mut().for_each(|g| *g = v);
            return;
        }
        let scale = (1.0 - pinned_mass) / free;
        let mut changed = false;
        for i in 0..n {
            if pinned[i] {
                gamma[i] = floor;
            } else {
                gamma[i] *= scale;
                if gamma[i] < floor {
                    pinned[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// `γ'_i ∝ γ_i exp(-η g_i)`, then floored.
pub fn mirror_step(gamma: &[f64], g: &[f64], eta: f64, floor: f64) -> Vec<f64> {
    let shift = g.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = gamma.iter().zip(g).map(|(x, gi)| x * (-eta * (gi - shift)).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    floor_simplex(&mut out, floor);
    out
}

#[derive(Clone, Debug, Default)]
pub struct OuterWarm {
    pub gamma: Vec<f64>,
    pub inner: InnerWarm,
}

#[derive(Clone, Debug)]
pub struct OuterSolution {
    /// Best iterate.
    pub gamma: Vec<f64>,
    pub inner: InnerSolution,
    /// `H` at the best iterate.
    pub objective: f64,
    /// Best lower bound `H(γ) + min g - <g, γ>` over the iterates.
    pub lower_bound: f64,
    /// Best-so-far `H` after every iteration.
    pub best_trace: Vec<f64>,
    pub iterations: usize,
    /// Stopped by the improvement criterion rather than the iteration cap.
    pub converged: bool,
    /// Every inner solve reached its tolerance.
    pub inner_converged: bool,
    /// Warm start for a follow-up solve.
    pub last: OuterWarm,
}

pub fn uniform_gamma(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

pub fn solve_outer(cache: &GramCache, set: &GroupSet, hyper: &Hyperparams, warm: Option<&OuterWarm>) -> Result<OuterSolution> {
    let nw = set.len();
    if nw == 0 {
        return Err(Error::InvalidParam("active set is empty".into()));
    }
    let mut gamma = match warm {
        Some(w) if w.gamma.len() == nw => {
            let mut g = w.gamma.clone();
            let s: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= s);
            floor_simplex(&mut g, hyper.gamma_floor);
            g
        }
        _ => uniform_gamma(nw),
    };
    let mut inner_warm = warm.map(|w| w.inner.clone());
    let n = cache.num_kernels();

    let mut best: Option<(Vec<f64>, InnerSolution)> = None;
    let mut best_trace = Vec::new();
    let mut lower_bound = f64::NEG_INFINITY;
    let mut inner_converged = true;
    let mut converged = false;
    let mut eta0 = 0.0;
    let mut iterations = 0;
    for k in 1..=hyper.mirror_max_iter {
        iterations = k;
        let inner = solve_inner(cache, set, &gamma, hyper, inner_warm.as_ref())?;
        inner_converged &= inner.converged && inner.smo_converged;
        let h = inner.objective;
        let g = grad_h(&gamma, set, &inner, hyper, n);
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let dot: f64 = g.iter().zip(&gamma).map(|(a, b)| a * b).sum();
        lower_bound = lower_bound.max(h + gmin - dot);
        inner_warm = Some(InnerWarm { beta: inner.beta.clone(), theta: inner.theta.clone() });
        if best.as_ref().is_none_or(|(_, b)| h < b.objective) {
            best = Some((gamma.clone(), inner));
        }
        let best_h = best.as_ref().map(|(_, b)| b.objective).unwrap_or(h);
        best_trace.push(best_h);
        if nw == 1 {
            converged = true;
            break;
        }
        if k > hyper.mirror_patience {
            let before = best_trace[k - 1 - hyper.mirror_patience];
            if before - best_h < hyper.mirror_tol * best_h.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        if k == 1 {
            let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            eta0 = 1.0 / (gnorm + 1e-12);
        }
        gamma = mirror_step(&gamma, &g, eta0 / (k as f64).sqrt(), hyper.gamma_floor);
    }
    let last = OuterWarm { gamma: gamma.clone(), inner: inner_warm.unwrap_or_default() };
    let (gamma, inner) = best.expect("at least one iteration");
    Ok(OuterSolution {
        objective: inner.objective,
        gamma,
        inner,
        lower_bound,
        best_trace,
        iterations,
        converged,
        inner_converged,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_step_examples() {
        let g = [0.5, 0.5];
        assert_eq!(mirror_step(&g, &[0.0, 0.0], 1.0, 1e-9), vec![0.5, 0.5]);
        let s = mirror_step(&[0.2, 0.8], &[3.0, 3.0], 0.7, 1e-9);
        assert!((s[0] - 0.2).abs() < 1e-15 && (s[1] - 0.8).abs() < 1e-15);
        let s = mirror_step(&g, &[0.0, 4f64.ln()], 0.5, 1e-9);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn huge_gradients_do_not_overflow() {
        let s = mirror_step(&[0.5, 0.5], &[-1e6, 0.0], 1.0, 1e-9);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s[1], 1e-9);
    }

    #[test]
    fn floor_keeps_simplex() {
        let mut g = vec![1.0 - 2e-12, 1e-12, 1e-12];
        floor_simplex(&mut g, 1e-9);
        assert_eq!(&g[1..], &[1e-9, 1e-9]);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
