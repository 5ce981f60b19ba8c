//! Trained predictors, bias recovery, linear-weight extraction, baselines and
//! the model file format.
//!
//! Scores follow `F_t(x) = <f_t, φ(x)> - b_t`; a positive score predicts `+1`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active_set::{fit_state, fit_state_from, FitState, IterationRecord};
use crate::data::{standardize, AffineTransform, DatasetBundle};
use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::inner::{effective_coefficients, effective_kernel};
use crate::kernel::{block_multipliers, KernelSpec};
use crate::lattice::{Orientation, TaskGroup};
use crate::FORMAT_VERSION;

const MAGIC: &str = "# mtfl-model v";
const CHECKSUM: &str = "# sha256: ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub task: usize,
    /// Index of the sample inside its task's training data.
    pub index: usize,
    pub beta: f64,
    pub label: f64,
    /// Features after the model's input transform.
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    /// `mtfl`, `stl` or `mtl`.
    pub method: String,
    pub hyper: Hyperparams,
    pub kernels: Vec<KernelSpec>,
    pub kernel_norms: Vec<f64>,
    pub transform: AffineTransform,
    pub dim: usize,
    pub task_names: Vec<String>,
    /// Active groups over model task indices.
    pub groups: Vec<TaskGroup>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Row-major `|W| x n`.
    pub theta: Vec<f64>,
    pub support_vectors: Vec<SupportVector>,
    pub biases: Vec<f64>,
    pub degenerate_tasks: Vec<usize>,
    pub certified: bool,
    pub gap_bound: f64,
    pub objective: f64,
    pub theta_hat: f64,
    pub seed: Option<u64>,
    pub log: Vec<IterationRecord>,
}

/// `b_t` from the training residuals of one task.
///
/// `f` holds the bias-free scores of the task's samples.
pub fn recover_bias(f: &[f64], y: &[f64], beta: &[f64], c: f64) -> f64 {
    let tol = 1e-9 * c.max(1e-300);
    let free: Vec<f64> = (0..f.len()).filter(|&i| beta[i] > tol && beta[i] < c - tol).map(|i| f[i] - y[i]).collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..f.len() {
        let r = f[i] - y[i];
        let at_zero = beta[i] <= tol;
        let raises_lower = (y[i] < 0.0 && at_zero) || (y[i] > 0.0 && !at_zero);
        if raises_lower {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

/// Pieces of a fitted state mapped into model task indices.
struct Piece<'a> {
    /// Model task index of each task in the piece's data.
    task_map: Vec<usize>,
    state: &'a FitState,
}

impl TrainedModel {
    /// Builds a model from one driver run on `data`.
    pub fn from_state(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams, state: &FitState, method: &str) -> Result<Self> {
        let piece = Piece { task_map: (0..data.num_tasks()).collect(), state };
        Self::assemble(data, specs, hyper, &[piece], method)
    }

    fn assemble(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams, pieces: &[Piece<'_>], method: &str) -> Result<Self> {
        let t_total = data.num_tasks();
        if t_total > crate::lattice::MAX_TASKS {
            return Err(Error::Model(format!("at most {} tasks are supported", crate::lattice::MAX_TASKS)));
        }
        let mut model = TrainedModel {
            format_version: FORMAT_VERSION,
            method: method.to_string(),
            hyper: hyper.clone(),
            kernels: specs.to_vec(),
            kernel_norms: crate::kernel::trace_normalizers(data, specs),
            transform: AffineTransform::identity(data.dim),
            dim: data.dim,
            task_names: data.task_names(),
            groups: Vec::new(),
            gamma: Vec::new(),
            lambda: Vec::new(),
            theta: Vec::new(),
            support_vectors: Vec::new(),
            biases: vec![0.0; t_total],
            degenerate_tasks: Vec::new(),
            certified: pieces.iter().all(|p| p.state.certified),
            gap_bound: pieces.iter().map(|p| p.state.gap_bound).fold(0.0, f64::max),
            objective: pieces.iter().map(|p| p.state.objective()).sum(),
            theta_hat: 0.0,
            seed: None,
            log: Vec::new(),
        };
        if let [piece] = pieces {
            if let Some(cache) = &piece.state.cache {
                model.kernel_norms = cache.norms().to_vec();
            }
        }
        for piece in pieces {
            let st = piece.state;
            model.log.extend(st.log.iter().cloned());
            for &t in &st.degenerate_tasks {
                let task = piece.task_map[t];
                model.degenerate_tasks.push(task);
                model.biases[task] = -data.tasks[task].majority_label();
            }
            let (Some(cache), Some(set), Some(sol)) = (&st.cache, &st.set, &st.solution) else {
                continue;
            };
            let inner = &sol.inner;
            model.theta_hat = model.theta_hat.max(inner.theta_hat);
            // lattice task -> model task
            let lt: Vec<usize> = st.kept_tasks.iter().map(|&k| piece.task_map[k]).collect();
            let n = cache.num_kernels();
            for (w, g) in set.groups().iter().enumerate() {
                model.groups.push(TaskGroup::from_tasks(g.members().map(|m| lt[m]))?);
                model.gamma.push(sol.gamma[w]);
                model.lambda.push(inner.lambda[w]);
                // re-express θ against the model's kernel normalizers
                for j in 0..n {
                    model.theta.push(inner.theta[w * n + j] * (model.kernel_norms[j] / cache.norms()[j]));
                }
            }
            // biases from the effective kernel used by the final SMO solve
            let coeff = effective_coefficients(set.groups(), &inner.theta, n, cache.num_tasks(), hyper.mu);
            let kernel = effective_kernel(cache, &coeff);
            let total = cache.num_samples();
            let labels = cache.labels();
            for task in 0..cache.num_tasks() {
                let range = cache.task_range(task);
                let f: Vec<f64> = range
                    .clone()
                    .map(|p| {
                        let row = &kernel[p * total..(p + 1) * total];
                        labels[p] * row.iter().zip(&inner.beta).map(|(k, b)| k * b).sum::<f64>()
                    })
                    .collect();
                let beta = &inner.beta[range.clone()];
                model.biases[lt[task]] = recover_bias(&f, &labels[range.clone()], beta, hyper.c);
                for (i, p) in range.enumerate() {
                    if inner.beta[p] > 0.0 {
                        model.support_vectors.push(SupportVector {
                            task: lt[task],
                            index: i,
                            beta: inner.beta[p],
                            label: labels[p],
                            x: cache.features(p).to_vec(),
                        });
                    }
                }
            }
        }
        model.degenerate_tasks.sort_unstable();
        Ok(model)
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    /// `s^j_{t1 t2}` over model tasks, laid out `(j * T + t1) * T + t2`.
    pub fn coefficients(&self) -> Vec<f64> {
        effective_coefficients(&self.groups, &self.theta, self.kernels.len(), self.num_tasks(), self.hyper.mu)
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor { model: self, coeff: self.coefficients() }
    }

    pub fn predict(&self, task: usize, x: &[f64]) -> Result<f64> {
        self.predictor().score(task, x)
    }

    /// Groups with `γ` above ten times the floor.
    pub fn selected_groups(&self) -> Vec<(TaskGroup, f64)> {
        self.groups
            .iter()
            .zip(&self.gamma)
            .filter(|(_, &g)| g > 10.0 * self.hyper.gamma_floor)
            .map(|(w, g)| (*w, *g))
            .collect()
    }

    /// Features whose single-feature kernels carry more than `1e-3` of a group's `θ` mass.
    pub fn selected_features(&self) -> Vec<(TaskGroup, Vec<usize>)> {
        let n = self.kernels.len();
        let mut out = Vec::new();
        for (w, g) in self.groups.iter().enumerate() {
            if self.gamma[w] <= 10.0 * self.hyper.gamma_floor {
                continue;
            }
            let row = &self.theta[w * n..(w + 1) * n];
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let mut per_feature = vec![0.0; self.dim];
            for (j, k) in self.kernels.iter().enumerate() {
                if let KernelSpec::LinearFeature { feature } = k {
                    per_feature[*feature] += row[j];
                }
            }
            let feats = (0..self.dim).filter(|&f| per_feature[f] > 1e-3 * mass).collect();
            out.push((*g, feats));
        }
        out
    }

    /// Per-task weights `w_t` and offsets `b_t` in raw input space with
    /// `score(t, x) = w_t · x - b_t`.
    pub fn extract_linear_weights(&self) -> Result<LinearWeights> {
        if let Some(k) = self.kernels.iter().find(|k| !k.is_linear()) {
            return Err(Error::Unsupported(format!("linear weights need linear kernels, found {k:?}")));
        }
        let t = self.num_tasks();
        let coeff = self.coefficients();
        let mut weights = vec![vec![0.0; self.dim]; t];
        for sv in &self.support_vectors {
            let a = sv.beta * sv.label;
            for (task, w) in weights.iter_mut().enumerate() {
                for (j, k) in self.kernels.iter().enumerate() {
                    let s = coeff[(j * t + sv.task) * t + task];
                    if s == 0.0 {
                        continue;
                    }
                    let s = a * s / self.kernel_norms[j];
                    match *k {
                        KernelSpec::LinearFeature { feature } => w[feature] += s * sv.x[feature],
                        KernelSpec::LinearAll => w.iter_mut().zip(&sv.x).for_each(|(wf, xf)| *wf += s * xf),
                        KernelSpec::Gaussian { .. } => unreachable!(),
                    }
                }
            }
        }
        let mut biases = self.biases.clone();
        for (task, w) in weights.iter_mut().enumerate() {
            for f in 0..self.dim {
                w[f] /= self.transform.scale[f];
                biases[task] += w[f] * self.transform.shift[f];
            }
        }
        Ok(LinearWeights { weights, biases })
    }

    pub fn to_text(&self) -> Result<String> {
        let payload = serde_json::to_string_pretty(self)?;
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        Ok(format!("{MAGIC}{}\n{CHECKSUM}{digest}\n{payload}\n", self.format_version))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').ok_or_else(|| Error::Model("truncated model file".into()))?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Model("not a model file".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let (second, payload) = rest.split_once('\n').ok_or_else(|| Error::Model("truncated model file".into()))?;
        let expected = second.strip_prefix(CHECKSUM).ok_or_else(|| Error::Model("missing checksum line".into()))?;
        let payload = payload.strip_suffix('\n').unwrap_or(payload);
        if hex::encode(Sha256::digest(payload.as_bytes())) != expected.trim() {
            return Err(Error::Checksum);
        }
        let model: TrainedModel = serde_json::from_str(payload)?;
        if model.format_version != version {
            return Err(Error::Version { found: model.format_version, expected: FORMAT_VERSION });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Raw-space linear predictors.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearWeights {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LinearWeights {
    pub fn score(&self, task: usize, x: &[f64]) -> f64 {
        crate::kernel::dot(&self.weights[task], x) - self.biases[task]
    }
}

/// A model with its coupling coefficients precomputed.
pub struct Predictor<'a> {
    model: &'a TrainedModel,
    coeff: Vec<f64>,
}

impl Predictor<'_> {
    pub fn score(&self, task: usize, x: &[f64]) -> Result<f64> {
        let m = self.model;
        let t = m.num_tasks();
        if task >= t {
            return Err(Error::Data(format!("unknown task {task} (model has {t} tasks)")));
        }
        if x.len() != m.dim {
            return Err(Error::Data(format!("feature dimension {} does not match the model's {}", x.len(), m.dim)));
        }
        let z = m.transform.apply(x);
        let mut acc = 0.0;
        for sv in &m.support_vectors {
            let mut k = 0.0;
            for (j, spec) in m.kernels.iter().enumerate() {
                let s = self.coeff[(j * t + sv.task) * t + task];
                if s != 0.0 {
                    k += s * spec.eval(&sv.x, &z) / m.kernel_norms[j];
                }
            }
            acc += sv.beta * sv.label * k;
        }
        Ok(acc - m.biases[task])
    }
}

/// Multiplier of the block kernel between two tasks of one group.
pub fn task_multiplier(mu: f64, same: bool) -> f64 {
    let (d, c) = block_multipliers(mu);
    if same {
        d
    } else {
        c
    }
}

/// Standardizes `data`, fits, and stores the transform in the model.
pub fn fit_standardized(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<TrainedModel> {
    let (z, transform) = standardize(data);
    let mut model = crate::active_set::fit(&z, specs, hyper)?;
    model.transform = transform;
    Ok(model)
}

/// Independent single-task solves.
pub fn baseline_stl(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<TrainedModel> {
    data.validate()?;
    let hp = Hyperparams { orientation: Orientation::Normal, ..hyper.clone() };
    let states = (0..data.num_tasks())
        .map(|t| fit_state(&data.select_tasks(&[t]), specs, &hp))
        .collect::<Result<Vec<_>>>()?;
    let pieces: Vec<Piece<'_>> = states.iter().enumerate().map(|(t, s)| Piece { task_map: vec![t], state: s }).collect();
    TrainedModel::assemble(data, specs, &hp, &pieces, "stl")
}

/// One group holding every task with both labels; no expansion.
pub fn baseline_single_group_mtl(data: &DatasetBundle, specs: &[KernelSpec], hyper: &Hyperparams) -> Result<TrainedModel> {
    data.validate()?;
    let hp = Hyperparams { orientation: Orientation::Inverted, ..hyper.clone() };
    let kept = data.tasks.iter().filter(|t| t.has_both_labels()).count();
    let fixed = (kept > 0).then(|| vec![TaskGroup::full(kept)]);
    let state = fit_state_from(data, specs, &hp, fixed)?;
    TrainedModel::from_state(data, specs, &hp, &state, "mtl")
}
