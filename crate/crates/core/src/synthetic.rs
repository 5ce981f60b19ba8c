//! Synthetic multi-task data with planted task groups that share sparse features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, TaskData};
use crate::error::{Error, Result};

/// Recipe for a planted-structure dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    /// Sizes of the planted groups; consecutive task indices form each group.
    pub groups: Vec<usize>,
    pub dim: usize,
    /// Features shared inside each group.
    pub k_shared: usize,
    /// Training samples per task.
    pub m: usize,
    /// Test samples per task.
    pub m_test: usize,
    /// Std-dev of the per-task perturbation of the group weight vector.
    pub sigma_w: f64,
    /// Label flip probability.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_tasks: 6,
            groups: vec![3, 3],
            dim: 30,
            k_shared: 5,
            m: 40,
            m_test: 200,
            sigma_w: 0.1,
            rho: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.iter().sum::<usize>() != self.num_tasks || self.groups.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "group sizes {:?} must be positive and sum to the task count {}",
                self.groups, self.num_tasks
            )));
        }
        if self.k_shared == 0 || self.k_shared > self.dim {
            return Err(Error::InvalidParam(format!("k_shared must lie in 1..={}, got {}", self.dim, self.k_shared)));
        }
        if self.m == 0 {
            return Err(Error::InvalidParam("m must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.rho) {
            return Err(Error::InvalidParam(format!("rho must lie in [0, 0.5), got {}", self.rho)));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidParam("sigma_w must be nonnegative".into()));
        }
        Ok(())
    }
}

/// What was planted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Task indices per planted group.
    pub groups: Vec<Vec<usize>>,
    /// Support (feature indices) of each group's weight vector.
    pub feature_masks: Vec<Vec<usize>>,
    /// Per-task weight vectors.
    pub weights: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Key=value manifest text.
    pub fn to_manifest(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "format=mtfl-ground-truth");
        let _ = writeln!(s, "version={}", crate::FORMAT_VERSION);
        let _ = writeln!(s, "num_groups={}", self.groups.len());
        for (g, (tasks, feats)) in self.groups.iter().zip(&self.feature_masks).enumerate() {
            let _ = writeln!(s, "group.{g}.tasks={}", join(tasks));
            let _ = writeln!(s, "group.{g}.features={}", join(feats));
        }
        s
    }

    /// Parses [`GroundTruth::to_manifest`] output; weights are not stored there and come back empty.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("ground truth: {msg}"));
        let mut num_groups = None;
        let mut tasks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut feats: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let list = || -> Result<Vec<usize>> {
                v.split_whitespace().map(|x| x.parse().map_err(|_| bad(format!("cannot parse {line:?}")))).collect()
            };
            match k {
                "format" if v != "mtfl-ground-truth" => return Err(bad(format!("unexpected format {v:?}"))),
                "version" if v != crate::FORMAT_VERSION.to_string() => {
                    return Err(Error::Version { found: v.parse().unwrap_or(0), expected: crate::FORMAT_VERSION })
                }
                "num_groups" => num_groups = Some(v.parse::<usize>().map_err(|_| bad(format!("cannot parse {line:?}")))?),
                _ => {
                    let parts: Vec<&str> = k.split('.').collect();
                    if let ["group", g, field] = parts[..] {
                        let g: usize = g.parse().map_err(|_| bad(format!("bad group index in {line:?}")))?;
                        match field {
                            "tasks" => tasks.insert(g, list()?),
                            "features" => feats.insert(g, list()?),
                            _ => None,
                        };
                    }
                }
            }
        }
        let n = num_groups.ok_or_else(|| bad("missing num_groups".into()))?;
        if tasks.len() != n || tasks.keys().copied().ne(0..n) {
            return Err(bad(format!("expected task lists for groups 0..{n}")));
        }
        Ok(GroundTruth {
            groups: tasks.into_values().collect(),
            feature_masks: (0..n).map(|g| feats.remove(&g).unwrap_or_default()).collect(),
            weights: Vec::new(),
        })
    }
}

fn sample_x(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn label(w: &[f64], x: &[f64], rho: f64, rng: &mut ChaCha8Rng) -> f64 {
    let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    let y = if s >= 0.0 { 1.0 } else { -1.0 };
    if rng.random::<f64>() < rho {
        -y
    } else {
        y
    }
}

/// Draws train and test bundles; a pure function of `spec`.
///
/// Group supports are disjoint whenever `groups.len() * k_shared <= dim`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DatasetBundle, DatasetBundle, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features: Vec<usize> = (0..spec.dim).collect();
    features.shuffle(&mut rng);
    let disjoint = spec.groups.len() * spec.k_shared <= spec.dim;

    let mut truth = GroundTruth { groups: Vec::new(), feature_masks: Vec::new(), weights: Vec::new() };
    let mut next_task = 0;
    for (g, &size) in spec.groups.iter().enumerate() {
        let mut support: Vec<usize> = if disjoint {
            features[g * spec.k_shared..(g + 1) * spec.k_shared].to_vec()
        } else {
            let mut all: Vec<usize> = (0..spec.dim).collect();
            all.shuffle(&mut rng);
            all.truncate(spec.k_shared);
            all
        };
        support.sort_unstable();
        let base: Vec<f64> = support.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let tasks: Vec<usize> = (next_task..next_task + size).collect();
        next_task += size;
        for _ in &tasks {
            let mut w = vec![0.0; spec.dim];
            for (&f, &b) in support.iter().zip(&base) {
                w[f] = b + spec.sigma_w * rng.sample::<f64, _>(StandardNormal);
            }
            truth.weights.push(w);
        }
        truth.groups.push(tasks);
        truth.feature_masks.push(support);
    }

    let make = |count: usize, rng: &mut ChaCha8Rng| -> Vec<TaskData> {
        truth
            .weights
            .iter()
            .enumerate()
            .map(|(t, w)| {
                let mut task = TaskData { name: format!("t{t}"), x: Vec::new(), y: Vec::new() };
                for _ in 0..count {
                    let x = sample_x(rng, spec.dim);
                    task.y.push(label(w, &x, spec.rho, rng));
                    task.x.push(x);
                }
                task
            })
            .collect()
    };
    let train = make(spec.m, &mut rng);
    let test = make(spec.m_test.max(1), &mut rng);
    Ok((
        DatasetBundle { dim: spec.dim, tasks: train },
        DatasetBundle { dim: spec.dim, tasks: test },
        truth,
    ))
}

/// Writes `train.csv`, `test.csv` and `truth.txt` into `dir`.
pub fn write_synthetic(dir: &Path, train: &DatasetBundle, test: &DatasetBundle, truth: &GroundTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    crate::data::write_dataset(train, &dir.join("train.csv"))?;
    crate::data::write_dataset(test, &dir.join("test.csv"))?;
    fs::write(dir.join("truth.txt"), truth.to_manifest())?;
    Ok(())
}
