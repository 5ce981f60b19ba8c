//! Base kernels, cached label-scaled Gram blocks, and the quadratic forms of
//! the block multi-task kernels.
//!
//! For group `w` and base kernel `j` the multi-task kernel couples samples of
//! tasks `t1, t2 ∈ w` with weight `(μ+1)/μ` when `t1 == t2` and `1/μ`
//! otherwise. Its quadratic form is never materialized: it is assembled from
//! the per-task-pair scalars `c^j_{t1 t2} = β_{t1}ᵀ G^j(t1,t2) β_{t2}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::lattice::{CertificateBlocks, TaskGroup};

/// Kind of base kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelSpec {
    /// `x_f * x'_f`.
    LinearFeature { feature: usize },
    /// `<x, x'>`.
    LinearAll,
    /// `exp(-|x - x'|^2 / (2 width^2))`.
    Gaussian { width: f64 },
}

impl KernelSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            KernelSpec::LinearFeature { feature } if feature >= dim => {
                Err(Error::Kernel(format!("feature index {feature} out of range for dimension {dim}")))
            }
            KernelSpec::Gaussian { width } if !(width > 0.0 && width.is_finite()) => {
                Err(Error::Kernel(format!("gaussian width must be positive, got {width}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, KernelSpec::Gaussian { .. })
    }

    /// Unnormalized kernel value.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::LinearFeature { feature } => a[feature] * b[feature],
            KernelSpec::LinearAll => dot(a, b),
            KernelSpec::Gaussian { width } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }
        }
    }
}

/// One linear kernel per input feature.
pub fn per_feature_kernels(dim: usize) -> Vec<KernelSpec> {
    (0..dim).map(|feature| KernelSpec::LinearFeature { feature }).collect()
}

/// One linear kernel per input feature plus the linear kernel on all features.
pub fn default_kernels(dim: usize) -> Vec<KernelSpec> {
    (0..dim)
        .map(|feature| KernelSpec::LinearFeature { feature })
        .chain(std::iter::once(KernelSpec::LinearAll))
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How Gram information is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramMode {
    /// Dense label-scaled Gram matrices, one per kernel.
    Explicit,
    /// Raw features only; entries computed on demand. Linear kernels only.
    ImplicitLinear,
    /// Explicit when `n * N^2` doubles fit in `budget_bytes`, implicit otherwise.
    Auto { budget_bytes: usize },
}

#[derive(Clone, Debug)]
enum GramRepr {
    Explicit { grams: Vec<Vec<f64>> },
    ImplicitLinear,
}

/// Immutable per-dataset kernel information.
///
/// Samples are laid out task by task; `offsets[t]..offsets[t + 1]` indexes task `t`.
#[derive(Clone, Debug)]
pub struct GramCache {
    specs: Vec<KernelSpec>,
    norms: Vec<f64>,
    offsets: Vec<usize>,
    labels: Vec<f64>,
    features: Vec<Vec<f64>>,
    sample_task: Vec<usize>,
    repr: GramRepr,
}

/// Trace normalizers `trace(K^j) / N` (1 when the trace vanishes).
pub fn trace_normalizers(data: &DatasetBundle, specs: &[KernelSpec]) -> Vec<f64> {
    let n = data.total_samples().max(1) as f64;
    specs
        .iter()
        .map(|k| {
            let tr: f64 = data.tasks.iter().flat_map(|t| &t.x).map(|x| k.eval(x, x)).sum();
            if tr > 0.0 {
                tr / n
            } else {
                1.0
            }
        })
        .collect()
}

impl GramCache {
    pub fn build(data: &DatasetBundle, specs: &[KernelSpec], mode: GramMode) -> Result<Self> {
        for k in specs {
            k.validate(data.dim)?;
        }
        let norms = trace_normalizers(data, specs);
        Self::build_with_norms(data, specs, norms, mode)
    }

    /// Builds with externally supplied normalizers.
    pub fn build_with_norms(data: &DatasetBundle, specs: &[KernelSpec], norms: Vec<f64>, mode: GramMode) -> Result<Self> {
        data.validate()?;
        if specs.is_empty() {
            return Err(Error::Kernel("at least one base kernel is required".into()));
        }
        for k in specs {
            k.validate(data.dim)?;
        }
        if norms.len() != specs.len() {
            return Err(Error::Kernel("one normalizer per kernel is required".into()));
        }
        let mut offsets = vec![0];
        let mut labels = Vec::new();
        let mut features = Vec::new();
        let mut sample_task = Vec::new();
        for (t, task) in data.tasks.iter().enumerate() {
            labels.extend_from_slice(&task.y);
            features.extend(task.x.iter().cloned());
            sample_task.extend(std::iter::repeat(t).take(task.len()));
            offsets.push(labels.len());
        }
        let n = labels.len();
        let all_linear = specs.iter().all(KernelSpec::is_linear);
        let explicit = match mode {
            GramMode::Explicit => true,
            GramMode::ImplicitLinear => false,
            GramMode::Auto { budget_bytes } => {
                let need = specs.len().saturating_mul(n * n).saturating_mul(8);
                if need <= budget_bytes {
                    true
                } else if all_linear {
                    false
                } else {
                    return Err(Error::Kernel(format!(
                        "explicit Gram storage needs {need} bytes (budget {budget_bytes}) and non-linear kernels cannot use implicit mode"
                    )));
                }
            }
        };
        if !explicit && !all_linear {
            return Err(Error::Kernel("implicit-linear mode supports only linear kernels".into()));
        }
        let repr = if explicit {
            let grams = specs
                .par_iter()
                .zip(&norms)
                .map(|(k, &c)| {
                    let mut g = vec![0.0; n * n];
                    for p in 0..n {
                        for q in p..n {
                            let v = labels[p] * labels[q] * k.eval(&features[p], &features[q]) / c;
                            g[p * n + q] = v;
                            g[q * n + p] = v;
                        }
                    }
                    g
                })
                .collect();
            GramRepr::Explicit { grams }
        } else {
            GramRepr::ImplicitLinear
        };
        Ok(GramCache { specs: specs.to_vec(), norms, offsets, labels, features, sample_task, repr })
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn num_kernels(&self) -> usize {
        self.specs.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn task_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sample_task(&self, p: usize) -> usize {
        self.sample_task[p]
    }

    pub fn features(&self, p: usize) -> &[f64] {
        &self.features[p]
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.repr, GramRepr::Explicit { .. })
    }

    /// `y_p y_q k^j(x_p, x_q) / c_j` for flat sample indices.
    #[inline]
    pub fn entry(&self, j: usize, p: usize, q: usize) -> f64 {
        match &self.repr {
            GramRepr::Explicit { grams } => grams[j][p * self.labels.len() + q],
            GramRepr::ImplicitLinear => {
                self.labels[p] * self.labels[q] * self.specs[j].eval(&self.features[p], &self.features[q]) / self.norms[j]
            }
        }
    }

    /// `c^j_{t1 t2}` for every kernel and ordered task pair.
    pub fn task_pair_quadratics(&self, beta: &[f64]) -> Result<GroupQuadratics> {
        let n = self.num_samples();
        if beta.len() != n {
            return Err(Error::Kernel(format!("dual vector has length {}, expected {n}", beta.len())));
        }
        let tasks = self.num_tasks();
        let nk = self.num_kernels();
        let mut c = vec![0.0; nk * tasks * tasks];
        match &self.repr {
            GramRepr::Explicit { grams } => {
                let per_kernel: Vec<Vec<f64>> = grams
                    .par_iter()
                    .map(|g| {
                        let mut out = vec![0.0; tasks * tasks];
                        for t1 in 0..tasks {
                            for p in self.task_range(t1) {
                                if beta[p] == 0.0 {
                                    continue;
                                }
                                let row = &g[p * n..(p + 1) * n];
                                for t2 in 0..tasks {
                                    let r = self.task_range(t2);
                                    let s: f64 = row[r.clone()].iter().zip(&beta[r]).map(|(a, b)| a * b).sum();
                                    out[t1 * tasks + t2] += beta[p] * s;
                                }
                            }
                        }
                        out
                    })
                    .collect();
                for (j, block) in per_kernel.into_iter().enumerate() {
                    c[j * tasks * tasks..(j + 1) * tasks * tasks].copy_from_slice(&block);
                }
            }
            GramRepr::ImplicitLinear => {
                let dim = self.dim();
                let u: Vec<Vec<f64>> = (0..tasks)
                    .map(|t| {
                        let mut acc = vec![0.0; dim];
                        for p in self.task_range(t) {
                            let s = beta[p] * self.labels[p];
                            if s != 0.0 {
                                for (a, x) in acc.iter_mut().zip(&self.features[p]) {
                                    *a += s * x;
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                for (j, spec) in self.specs.iter().enumerate() {
                    for t1 in 0..tasks {
                        for t2 in 0..tasks {
                            let v = match *spec {
                                KernelSpec::LinearFeature { feature } => u[t1][feature] * u[t2][feature],
                                KernelSpec::LinearAll => dot(&u[t1], &u[t2]),
                                KernelSpec::Gaussian { .. } => unreachable!("implicit mode is linear-only"),
                            };
                            c[(j * tasks + t1) * tasks + t2] = v / self.norms[j];
                        }
                    }
                }
            }
        }
        // exact symmetry
        for j in 0..nk {
            for t1 in 0..tasks {
                for t2 in (t1 + 1)..tasks {
                    let a = (j * tasks + t1) * tasks + t2;
                    let b = (j * tasks + t2) * tasks + t1;
                    let v = 0.5 * (c[a] + c[b]);
                    c[a] = v;
                    c[b] = v;
                }
            }
        }
        Ok(GroupQuadratics { num_kernels: nk, num_tasks: tasks, c })
    }

    /// Writes `K[p, q] = sum_j coeff[j][t(p)][t(q)] * G^j[p, q]` into `out` (row-major N x N).
    ///
    /// `coeff` is laid out like [`GroupQuadratics::c`].
    pub fn weighted_sum(&self, coeff: &[f64], out: &mut [f64]) {
        let n = self.num_samples();
        let tasks = self.num_tasks();
        let nk = self.num_kernels();
        assert_eq!(coeff.len(), nk * tasks * tasks);
        assert_eq!(out.len(), n * n);
        match &self.repr {
            GramRepr::Explicit { grams } => {
                out.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
                    let tp = self.sample_task[p];
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (j, g) in grams.iter().enumerate() {
                        let grow = &g[p * n..(p + 1) * n];
                        for tq in 0..tasks {
                            let s = coeff[(j * tasks + tp) * tasks + tq];
                            if s == 0.0 {
                                continue;
                            }
                            let r = self.task_range(tq);
                            for (o, gv) in row[r.clone()].iter_mut().zip(&grow[r]) {
                                *o += s * gv;
                            }
                        }
                    }
                });
            }
            GramRepr::ImplicitLinear => {
                let dim = self.dim();
                // per task pair: diagonal feature weights
                let mut dw = vec![0.0; tasks * tasks * dim];
                for (j, spec) in self.specs.iter().enumerate() {
                    for tp in 0..tasks {
                        for tq in 0..tasks {
                            let s = coeff[(j * tasks + tp) * tasks + tq] / self.norms[j];
                            if s == 0.0 {
                                continue;
                            }
                            let d = &mut dw[(tp * tasks + tq) * dim..(tp * tasks + tq + 1) * dim];
                            match *spec {
                                KernelSpec::LinearFeature { feature } => d[feature] += s,
                                KernelSpec::LinearAll => d.iter_mut().for_each(|v| *v += s),
                                KernelSpec::Gaussian { .. } => unreachable!("implicit mode is linear-only"),
                            }
                        }
                    }
                }
                out.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
                    let tp = self.sample_task[p];
                    let xp = &self.features[p];
                    for (q, o) in row.iter_mut().enumerate() {
                        let tq = self.sample_task[q];
                        let d = &dw[(tp * tasks + tq) * dim..(tp * tasks + tq + 1) * dim];
                        let xq = &self.features[q];
                        let mut s = 0.0;
                        for f in 0..dim {
                            s += d[f] * xp[f] * xq[f];
                        }
                        *o = self.labels[p] * self.labels[q] * s;
                    }
                });
            }
        }
    }
}

/// Per-kernel, per-task-pair quadratic scalars `c^j_{t1 t2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupQuadratics {
    pub num_kernels: usize,
    pub num_tasks: usize,
    /// Index `(j * T + t1) * T + t2`.
    pub c: Vec<f64>,
}

impl GroupQuadratics {
    pub fn zeros(num_kernels: usize, num_tasks: usize) -> Self {
        GroupQuadratics { num_kernels, num_tasks, c: vec![0.0; num_kernels * num_tasks * num_tasks] }
    }

    #[inline]
    pub fn get(&self, j: usize, t1: usize, t2: usize) -> f64 {
        self.c[(j * self.num_tasks + t1) * self.num_tasks + t2]
    }

    pub fn set(&mut self, j: usize, t1: usize, t2: usize, v: f64) {
        self.c[(j * self.num_tasks + t1) * self.num_tasks + t2] = v;
    }
}

/// Multipliers of the block kernel: `(diagonal, cross-task)`.
#[inline]
pub fn block_multipliers(mu: f64) -> (f64, f64) {
    ((mu + 1.0) / mu, 1.0 / mu)
}

fn clamp_form(v: f64, magnitude: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-12 * magnitude.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Kernel(format!("quadratic form is negative ({v:e}); base kernel is not PSD")))
    }
}

/// `βᵀ K_w^j β`.
pub fn group_quadratic_form(w: TaskGroup, j: usize, q: &GroupQuadratics, mu: f64) -> Result<f64> {
    let (dm, cm) = block_multipliers(mu);
    let (mut diag, mut cross, mut mag) = (0.0, 0.0, 0.0);
    for t1 in w.members() {
        diag += q.get(j, t1, t1);
        mag += q.get(j, t1, t1).abs();
        for t2 in w.members() {
            if t1 != t2 {
                cross += q.get(j, t1, t2);
                mag += q.get(j, t1, t2).abs();
            }
        }
    }
    clamp_form(dm * diag + cm * cross, (dm + cm) * mag)
}

/// Per-task `A_t` and per-pair `B_{t1 t2}` feeding the certificate sum.
pub fn certificate_building_blocks(q: &GroupQuadratics, mu: f64) -> CertificateBlocks {
    let (dm, cm) = block_multipliers(mu);
    let t = q.num_tasks;
    let mut diag = vec![0.0; t];
    let mut pair = vec![0.0; t * t];
    for j in 0..q.num_kernels {
        for t1 in 0..t {
            diag[t1] += dm * q.get(j, t1, t1);
            for t2 in 0..t {
                if t1 != t2 {
                    pair[t1 * t + t2] += cm * q.get(j, t1, t2);
                }
            }
        }
    }
    CertificateBlocks { diag, pair }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bundle(tasks: usize, m: usize, dim: usize, seed: u64) -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..tasks)
            .map(|t| TaskData {
                name: format!("t{t}"),
                x: (0..m).map(|_| (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect(),
                y: (0..m).map(|i| if (i + t) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            })
            .collect();
        DatasetBundle::new(dim, tasks).unwrap()
    }

    fn unnormalized(data: &DatasetBundle, specs: &[KernelSpec], mode: GramMode) -> GramCache {
        GramCache::build_with_norms(data, specs, vec![1.0; specs.len()], mode).unwrap()
    }

    #[test]
    fn single_feature_block() {
        let data = DatasetBundle::new(
            1,
            vec![TaskData { name: "a".into(), x: vec![vec![1.0], vec![2.0]], y: vec![1.0, 1.0] }],
        )
        .unwrap();
        let g = unnormalized(&data, &[KernelSpec::LinearFeature { feature: 0 }], GramMode::Explicit);
        assert_eq!([g.entry(0, 0, 0), g.entry(0, 0, 1), g.entry(0, 1, 0), g.entry(0, 1, 1)], [1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn all_features_signed() {
        let data = DatasetBundle::new(
            2,
            vec![TaskData { name: "a".into(), x: vec![vec![1.0, 2.0], vec![3.0, 4.0]], y: vec![1.0, -1.0] }],
        )
        .unwrap();
        for mode in [GramMode::Explicit, GramMode::ImplicitLinear] {
            let g = unnormalized(&data, &[KernelSpec::LinearAll], mode);
            assert_eq!([g.entry(0, 0, 0), g.entry(0, 0, 1), g.entry(0, 1, 1)], [5.0, -11.0, 25.0]);
        }
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let data = random_bundle(2, 3, 2, 0);
        let g = GramCache::build(&data, &[KernelSpec::Gaussian { width: 0.7 }], GramMode::Explicit).unwrap();
        assert_eq!(g.norms()[0], 1.0);
        for p in 0..g.num_samples() {
            assert!((g.entry(0, p, p) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn build_errors() {
        let data = random_bundle(1, 2, 2, 0);
        assert!(GramCache::build(&data, &[KernelSpec::LinearFeature { feature: 5 }], GramMode::Explicit).is_err());
        assert!(GramCache::build(&data, &[KernelSpec::Gaussian { width: 1.0 }], GramMode::ImplicitLinear).is_err());
        assert!(GramCache::build(&data, &[KernelSpec::Gaussian { width: 0.0 }], GramMode::Explicit).is_err());
        let tiny = GramMode::Auto { budget_bytes: 8 };
        assert!(GramCache::build(&data, &[KernelSpec::Gaussian { width: 1.0 }], tiny).is_err());
        assert!(!GramCache::build(&data, &[KernelSpec::LinearAll], tiny).unwrap().is_explicit());
    }

    #[test]
    fn trace_normalization_unit_mean_diagonal() {
        let data = random_bundle(2, 5, 3, 4);
        let g = GramCache::build(&data, &default_kernels(3), GramMode::Explicit).unwrap();
        for j in 0..g.num_kernels() {
            let tr: f64 = (0..g.num_samples()).map(|p| g.entry(j, p, p)).sum();
            assert!((tr / g.num_samples() as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratics_small_cases() {
        let data = random_bundle(2, 3, 2, 1);
        let g = GramCache::build(&data, &default_kernels(2), GramMode::Explicit).unwrap();
        let q = g.task_pair_quadratics(&[0.0; 6]).unwrap();
        assert!(q.c.iter().all(|&v| v == 0.0));
        assert!(g.task_pair_quadratics(&[0.0; 5]).is_err());

        let one = DatasetBundle::new(1, vec![TaskData { name: "a".into(), x: vec![vec![2.0]], y: vec![1.0] }]).unwrap();
        let g = unnormalized(&one, &[KernelSpec::LinearFeature { feature: 0 }], GramMode::Explicit);
        assert_eq!(g.task_pair_quadratics(&[1.0]).unwrap().c, vec![4.0]);
    }

    #[test]
    fn implicit_matches_explicit() {
        let data = random_bundle(3, 4, 3, 9);
        let specs = default_kernels(3);
        let e = GramCache::build(&data, &specs, GramMode::Explicit).unwrap();
        let i = GramCache::build(&data, &specs, GramMode::ImplicitLinear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let qe = e.task_pair_quadratics(&beta).unwrap();
        let qi = i.task_pair_quadratics(&beta).unwrap();
        for (a, b) in qe.c.iter().zip(&qi.c) {
            assert!((a - b).abs() < 1e-10);
        }
        let coeff: Vec<f64> = (0..qe.c.len()).map(|_| rng.random::<f64>()).collect();
        let mut ke = vec![0.0; 144];
        let mut ki = vec![0.0; 144];
        e.weighted_sum(&coeff, &mut ke);
        i.weighted_sum(&coeff, &mut ki);
        for (a, b) in ke.iter().zip(&ki) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cache_is_reproducible() {
        let data = random_bundle(2, 4, 3, 5);
        let a = GramCache::build(&data, &default_kernels(3), GramMode::Explicit).unwrap();
        let b = GramCache::build(&data, &default_kernels(3), GramMode::Explicit).unwrap();
        for j in 0..a.num_kernels() {
            for p in 0..8 {
                for q in 0..8 {
                    assert_eq!(a.entry(j, p, q).to_bits(), b.entry(j, p, q).to_bits());
                }
            }
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let mut q = GroupQuadratics::zeros(1, 2);
        q.set(0, 0, 0, 1.0);
        q.set(0, 1, 1, 1.0);
        q.set(0, 0, 1, 0.5);
        q.set(0, 1, 0, 0.5);
        let w0 = TaskGroup::singleton(0);
        let w01 = TaskGroup::from_tasks([0, 1]).unwrap();
        assert!((group_quadratic_form(w0, 0, &q, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((group_quadratic_form(w01, 0, &q, 1.0).unwrap() - 5.0).abs() < 1e-15);
        let big = group_quadratic_form(w01, 0, &q, 1e6).unwrap();
        assert!((big - 2.000003).abs() < 1e-9);
    }

    #[test]
    fn negative_form_rejected() {
        let mut q = GroupQuadratics::zeros(1, 1);
        q.set(0, 0, 0, -1.0);
        assert!(group_quadratic_form(TaskGroup::singleton(0), 0, &q, 1.0).is_err());
        q.set(0, 0, 0, -1e-15);
        assert_eq!(group_quadratic_form(TaskGroup::singleton(0), 0, &q, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn building_blocks_examples() {
        let q = GroupQuadratics::zeros(2, 3);
        let b = certificate_building_blocks(&q, 0.5);
        assert!(b.diag.iter().chain(&b.pair).all(|&v| v == 0.0));
        let mut q = GroupQuadratics::zeros(1, 1);
        q.set(0, 0, 0, 1.0);
        assert_eq!(certificate_building_blocks(&q, 1.0).diag, vec![2.0]);
    }

    #[test]
    fn building_blocks_reproduce_group_forms() {
        let data = random_bundle(4, 3, 2, 17);
        let g = GramCache::build(&data, &default_kernels(2), GramMode::Explicit).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let q = g.task_pair_quadratics(&beta).unwrap();
        let blocks = certificate_building_blocks(&q, 0.3);
        for mask in 1u64..16 {
            let w = TaskGroup::from_mask(mask).unwrap();
            let direct: f64 = (0..g.num_kernels()).map(|j| group_quadratic_form(w, j, &q, 0.3).unwrap()).sum();
            assert!((blocks.group_numerator(w) - direct).abs() < 1e-12 * direct.max(1.0));
        }
    }
}
