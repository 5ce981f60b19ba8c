//! Experiment manifests: the exact synthetic recipe, hyperparameters, seeds
//! and pass thresholds behind each acceptance experiment, as versioned
//! `key=value` text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::kernel::{default_kernels, per_feature_kernels, KernelSpec};
use crate::lattice::Orientation;
use crate::synthetic::SyntheticSpec;
use crate::FORMAT_VERSION;

const MAGIC: &str = "# mtfl-manifest";

pub const MANIFEST_NAMES: [&str; 3] = ["planted-recovery", "inverted-recovery", "oracle-suite"];

/// Which base kernels an experiment uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelPreset {
    /// One linear kernel per feature.
    PerFeature,
    /// A single linear kernel on all features.
    Linear,
    /// Both of the above.
    All,
}

impl KernelPreset {
    pub fn kernels(self, dim: usize) -> Vec<KernelSpec> {
        match self {
            KernelPreset::PerFeature => per_feature_kernels(dim),
            KernelPreset::Linear => vec![KernelSpec::LinearAll],
            KernelPreset::All => default_kernels(dim),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelPreset::PerFeature => "per-feature",
            KernelPreset::Linear => "linear",
            KernelPreset::All => "all",
        }
    }
}

impl std::str::FromStr for KernelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-feature" => Ok(KernelPreset::PerFeature),
            "linear" => Ok(KernelPreset::Linear),
            "all" => Ok(KernelPreset::All),
            v => Err(Error::InvalidParam(format!("kernels must be per-feature, linear or all, got {v:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub name: String,
    /// Recipe; its `seed` is replaced by each entry of `seeds`.
    pub synthetic: SyntheticSpec,
    pub hyper: Hyperparams,
    pub kernels: KernelPreset,
    pub seeds: Vec<u64>,
    /// Named pass thresholds.
    pub thresholds: BTreeMap<String, f64>,
}

impl ExperimentManifest {
    /// The synthetic recipe for one seed.
    pub fn spec_for_seed(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec { seed, ..self.synthetic.clone() }
    }

    pub fn threshold(&self, key: &str) -> Result<f64> {
        self.thresholds.get(key).copied().ok_or_else(|| Error::InvalidParam(format!("manifest {} has no threshold {key:?}", self.name)))
    }

    pub fn to_text(&self) -> String {
        let s = &self.synthetic;
        let mut out = format!("{MAGIC}\nformat_version={}\nname={}\n", self.format_version, self.name);
        let groups: Vec<String> = s.groups.iter().map(|g| g.to_string()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(|g| g.to_string()).collect();
        let _ = writeln!(out, "T={}\ngroups={}\ndim={}\nkshared={}\nm={}\nm_test={}", s.num_tasks, groups.join(","), s.dim, s.k_shared, s.m, s.m_test);
        let _ = writeln!(out, "sigma_w={}\nrho={}\nseeds={}\nkernels={}", s.sigma_w, s.rho, seeds.join(","), self.kernels.as_str());
        for (k, v) in self.hyper.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        for (k, v) in &self.thresholds {
            let _ = writeln!(out, "threshold.{k}={v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::InvalidParam("not an experiment manifest".into()));
        }
        let mut m = ExperimentManifest {
            format_version: 0,
            name: String::new(),
            synthetic: SyntheticSpec::default(),
            hyper: Hyperparams::default(),
            kernels: KernelPreset::PerFeature,
            seeds: Vec::new(),
            thresholds: BTreeMap::new(),
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidParam(format!("cannot parse manifest entry {key}={v}")))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
        }
        for line in lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidParam(format!("malformed manifest line {line:?}")))?;
            let s = &mut m.synthetic;
            match k {
                "format_version" => m.format_version = num(k, v)?,
                "name" => m.name = v.to_string(),
                "T" => s.num_tasks = num(k, v)?,
                "groups" => s.groups = list(k, v)?,
                "dim" => s.dim = num(k, v)?,
                "kshared" => s.k_shared = num(k, v)?,
                "m" => s.m = num(k, v)?,
                "m_test" => s.m_test = num(k, v)?,
                "sigma_w" => s.sigma_w = num(k, v)?,
                "rho" => s.rho = num(k, v)?,
                "seeds" => m.seeds = list(k, v)?,
                "kernels" => m.kernels = v.parse()?,
                _ => match k.strip_prefix("threshold.") {
                    Some(t) => {
                        m.thresholds.insert(t.to_string(), num(k, v)?);
                    }
                    None => m.hyper.set_key(k, v)?,
                },
            }
        }
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: m.format_version, expected: FORMAT_VERSION });
        }
        m.synthetic.validate()?;
        m.hyper.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// The manifest with the given name.
pub fn experiment_manifest(name: &str) -> Result<ExperimentManifest> {
    let base = |synthetic: SyntheticSpec, hyper: Hyperparams, kernels, seeds: std::ops::Range<u64>, thresholds: &[(&str, f64)]| ExperimentManifest {
        format_version: FORMAT_VERSION,
        name: name.to_string(),
        synthetic,
        hyper,
        kernels,
        seeds: seeds.collect(),
        thresholds: thresholds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    };
    // C = 1 leaves 40 samples in 30 dimensions separable, which makes C inert
    let recovery = Hyperparams { c: 0.01, mu: 0.01, ..Default::default() };
    match name {
        "planted-recovery" => Ok(base(
            SyntheticSpec::default(),
            recovery.clone(),
            KernelPreset::PerFeature,
            0..10,
            &[("gamma_min", 0.05), ("min_successes", 8.0), ("auc_margin", 0.03)],
        )),
        "inverted-recovery" => Ok(base(
            SyntheticSpec { groups: vec![6], ..SyntheticSpec::default() },
            Hyperparams { orientation: Orientation::Inverted, ..recovery },
            KernelPreset::PerFeature,
            0..10,
            &[("max_expansions", 3.0), ("min_successes", 8.0)],
        )),
        "oracle-suite" => Ok(base(
            SyntheticSpec { num_tasks: 3, groups: vec![2, 1], dim: 3, k_shared: 2, m: 10, m_test: 50, ..SyntheticSpec::default() },
            Hyperparams { mirror_tol: 1e-8, mirror_patience: 50, mirror_max_iter: 20_000, ..Default::default() },
            KernelPreset::PerFeature,
            0..5,
            &[("full_lattice_slack", 1e-3), ("runtime_secs", 60.0)],
        )),
        _ => Err(Error::InvalidParam(format!("unknown manifest {name:?}; expected one of {}", MANIFEST_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_contract() {
        let m = experiment_manifest("planted-recovery").unwrap();
        let s = &m.synthetic;
        assert_eq!((s.num_tasks, s.groups.clone(), s.dim, s.k_shared, s.m), (6, vec![3, 3], 30, 5, 40));
        assert_eq!(m.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(s.rho, 0.05);
    }

    #[test]
    fn all_round_trip() {
        for name in MANIFEST_NAMES {
            let m = experiment_manifest(name).unwrap();
            assert_eq!(ExperimentManifest::from_text(&m.to_text()).unwrap(), m);
        }
    }

    #[test]
    fn unknown_name_and_version() {
        assert!(experiment_manifest("table-1").is_err());
        let text = experiment_manifest("oracle-suite").unwrap().to_text().replace("format_version=1", "format_version=9");
        assert!(matches!(ExperimentManifest::from_text(&text), Err(Error::Version { .. })));
    }
}
