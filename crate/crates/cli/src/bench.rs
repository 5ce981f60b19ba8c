//! `mtfl bench`: STL, single-group MTL and MTFL side by side over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use mtfl_core::active_set::fit;
use mtfl_core::data::{load_dataset, split, standardize, DatasetBundle};
use mtfl_core::hyper::Hyperparams;
use mtfl_core::kernel::KernelSpec;
use mtfl_core::lattice::{Orientation, TaskGroup};
use mtfl_core::manifest::{ExperimentManifest, KernelPreset};
use mtfl_core::metrics::auc;
use mtfl_core::model::{baseline_single_group_mtl, baseline_stl, TrainedModel};
use mtfl_core::synthetic::{generate_synthetic, GroundTruth};

use crate::{HyperArgs, SynthSpecArgs, EXIT_NOT_CERTIFIED};

/// Box-constraint grid for `--select`: decades from 1e-3 to 1e3.
pub const GRID_C: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
/// Coupling grid for `--select`: decades from 1e-3 to 10.
pub const GRID_MU: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 1e1];

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Real dataset, split per seed; synthetic data is generated when absent.
    #[arg(long, conflicts_with = "manifest")]
    data: Option<PathBuf>,
    /// Ground truth for `--data` (the `truth.txt` written by `synth`).
    #[arg(long, requires = "data")]
    truth: Option<PathBuf>,
    /// Training share of each task when splitting `--data`.
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Experiment manifest supplying the recipe, hyperparameters, kernels and seeds.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of repetitions (seeds 0..N).
    #[arg(long)]
    seeds: Option<usize>,
    /// Also run MTFL on the inverted lattice.
    #[arg(long)]
    inverted: bool,
    /// `γ` a planted group needs to count as recovered.
    #[arg(long, default_value_t = 0.05)]
    gamma_min: f64,
    /// Pick C and mu per method and seed by repeated holdout on the training data.
    #[arg(long)]
    select: bool,
    #[arg(long, value_delimiter = ',', requires = "select")]
    grid_c: Vec<f64>,
    #[arg(long, value_delimiter = ',', requires = "select")]
    grid_mu: Vec<f64>,
    /// Holdout repetitions per grid point.
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[command(flatten)]
    spec: SynthSpecArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Stl,
    Mtl,
    Mtfl,
    MtflInverted,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Stl => "stl",
            Method::Mtl => "mtl",
            Method::Mtfl => "mtfl",
            Method::MtflInverted => "mtfl-inverted",
        }
    }

    fn train(self, data: &DatasetBundle, kernels: &[KernelSpec], hyper: &Hyperparams) -> mtfl_core::error::Result<TrainedModel> {
        match self {
            Method::Stl => baseline_stl(data, kernels, hyper),
            Method::Mtl => baseline_single_group_mtl(data, kernels, hyper),
            Method::Mtfl => fit(data, kernels, &Hyperparams { orientation: Orientation::Normal, ..hyper.clone() }),
            Method::MtflInverted => fit(data, kernels, &Hyperparams { orientation: Orientation::Inverted, ..hyper.clone() }),
        }
    }
}

/// Mean AUC over tasks of `test` that have both classes.
fn macro_auc(model: &TrainedModel, test: &DatasetBundle) -> Result<f64> {
    let predictor = model.predictor();
    let mut aucs = Vec::new();
    for (t, task) in test.tasks.iter().enumerate() {
        if !task.has_both_labels() {
            continue;
        }
        let scores = task.x.iter().map(|x| predictor.score(t, x)).collect::<mtfl_core::error::Result<Vec<_>>>()?;
        aucs.push(auc(&scores, &task.y)?);
    }
    if aucs.is_empty() {
        bail!("no test task has both classes");
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

struct Setup {
    methods: Vec<Method>,
    kernels: Vec<KernelSpec>,
    hyper: Hyperparams,
    grid: Option<(Vec<f64>, Vec<f64>)>,
    folds: usize,
    gamma_min: f64,
}

struct SeedOutcome {
    seed: u64,
    aucs: Vec<f64>,
    /// `γ` of each planted group in the MTFL model, if it is in the active set.
    planted_gamma: Vec<Option<f64>>,
    certified: Vec<bool>,
}

fn select_hyper(method: Method, train: &DatasetBundle, setup: &Setup, seed: u64) -> Result<Hyperparams> {
    let (grid_c, grid_mu) = setup.grid.as_ref().expect("selection requested");
    let splits = (0..setup.folds as u64)
        .map(|f| split(train, 2.0 / 3.0, seed.wrapping_mul(7919).wrapping_add(f)).map(|(a, b, _)| (a, b)))
        .collect::<mtfl_core::error::Result<Vec<_>>>()?;
    let mut best: Option<(f64, Hyperparams)> = None;
    for &c in grid_c {
        for &mu in grid_mu {
            let hp = Hyperparams { c, mu, ..setup.hyper.clone() };
            let mut total = 0.0;
            for (fit_part, val) in &splits {
                let model = method.train(fit_part, &setup.kernels, &hp)?;
                total += macro_auc(&model, val)?;
            }
            let score = total / splits.len() as f64;
            log::info!("select method={} C={c} mu={mu} auc={score:.4}", method.name());
            let better = match &best {
                Some((b, _)) => score > *b,
                None => true,
            };
            if better {
                best = Some((score, hp));
            }
        }
    }
    Ok(best.expect("grids are nonempty").1)
}

fn run_seed(seed: u64, train: &DatasetBundle, test: &DatasetBundle, truth: Option<&GroundTruth>, setup: &Setup) -> Result<SeedOutcome> {
    let (train, tf) = standardize(train);
    let test = tf.apply_bundle(test);
    let mut out = SeedOutcome { seed, aucs: Vec::new(), planted_gamma: Vec::new(), certified: Vec::new() };
    for &method in &setup.methods {
        let hp = if setup.grid.is_some() { select_hyper(method, &train, setup, seed)? } else { setup.hyper.clone() };
        let model = method.train(&train, &setup.kernels, &hp).with_context(|| format!("seed {seed}, method {}", method.name()))?;
        out.certified.push(model.certified);
        out.aucs.push(macro_auc(&model, &test)?);
        if let (Method::Mtfl, Some(truth)) = (method, truth) {
            for g in &truth.groups {
                let group = TaskGroup::from_tasks(g.iter().copied())?;
                out.planted_gamma.push(model.groups.iter().position(|w| *w == group).map(|i| model.gamma[i]));
            }
        }
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn render(setup: &Setup, outcomes: &[SeedOutcome], truth: Option<&GroundTruth>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>9} {:>9} {:>6} {:>10}", "method", "auc_mean", "auc_std", "seeds", "certified");
    for (i, m) in setup.methods.iter().enumerate() {
        let v: Vec<f64> = outcomes.iter().map(|o| o.aucs[i]).collect();
        let (mean, std) = mean_std(&v);
        let ok = outcomes.iter().filter(|o| o.certified[i]).count();
        let _ = writeln!(s, "{:<14} {:>9.4} {:>9.4} {:>6} {:>10}", m.name(), mean, std, v.len(), format!("{ok}/{}", v.len()));
    }
    let Some(truth) = truth else {
        return s;
    };
    let _ = writeln!(s, "recovered groups (in the mtfl active set with gamma >= {}):", setup.gamma_min);
    for (g, tasks) in truth.groups.iter().enumerate() {
        let label = TaskGroup::from_tasks(tasks.iter().copied()).map_or_else(|_| "{}".to_string(), |t| t.to_string());
        let hits = outcomes.iter().filter(|o| o.planted_gamma[g].is_some_and(|x| x >= setup.gamma_min)).count();
        let _ = writeln!(s, "group={g} tasks={label} recovered={hits}/{}", outcomes.len());
        for o in outcomes {
            let gamma = o.planted_gamma[g];
            let _ = writeln!(
                s,
                "  seed={} in_active_set={} gamma={:.6} recovered={}",
                o.seed,
                gamma.is_some(),
                gamma.unwrap_or(0.0),
                gamma.is_some_and(|x| x >= setup.gamma_min)
            );
        }
    }
    s
}

pub fn cmd_bench(args: &BenchArgs) -> Result<u8> {
    let manifest = args
        .manifest
        .as_ref()
        .map(|p| ExperimentManifest::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let (base_hyper, base_kernels) = match &manifest {
        Some(m) => (m.hyper.clone(), m.kernels),
        None => (Hyperparams::default(), KernelPreset::PerFeature),
    };
    let (hyper, preset) = args.hyper.resolve(base_hyper, base_kernels)?;
    let seeds: Vec<u64> = match (&manifest, args.seeds) {
        (_, Some(n)) => (0..n as u64).collect(),
        (Some(m), None) => m.seeds.clone(),
        (None, None) => (0..5).collect(),
    };
    if seeds.is_empty() || args.folds == 0 {
        bail!("bench needs at least one seed and one fold");
    }
    let mut methods = vec![Method::Stl, Method::Mtl, Method::Mtfl];
    if args.inverted {
        methods.push(Method::MtflInverted);
    }
    let grid = args.select.then(|| {
        let pick = |v: &[f64], d: &[f64]| if v.is_empty() { d.to_vec() } else { v.to_vec() };
        (pick(&args.grid_c, &GRID_C), pick(&args.grid_mu, &GRID_MU))
    });

    let real = args.data.as_ref().map(|p| load_dataset(p).context("bench")).transpose()?;
    let given_truth = args
        .truth
        .as_ref()
        .map(|p| -> Result<GroundTruth> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(GroundTruth::from_manifest(&text)?)
        })
        .transpose()?;
    let dim = match (&real, &manifest) {
        (Some(d), _) => d.dim,
        (None, Some(m)) => m.synthetic.dim,
        (None, None) => args.spec.dim,
    };
    let setup = Setup { methods, kernels: preset.kernels(dim), hyper, grid, folds: args.folds, gamma_min: args.gamma_min };

    let outcomes: Vec<(SeedOutcome, Option<GroundTruth>)> = seeds
        .par_iter()
        .map(|&seed| {
            let (train, test, truth) = match (&real, &manifest) {
                (Some(data), _) => {
                    let (a, b, _) = split(data, args.train_fraction, seed)?;
                    (a, b, given_truth.clone())
                }
                (None, Some(m)) => {
                    let (a, b, t) = generate_synthetic(&m.spec_for_seed(seed))?;
                    (a, b, Some(t))
                }
                (None, None) => {
                    let (a, b, t) = generate_synthetic(&args.spec.spec(seed))?;
                    (a, b, Some(t))
                }
            };
            Ok((run_seed(seed, &train, &test, truth.as_ref(), &setup)?, truth))
        })
        .collect::<Result<_>>()?;

    // planted groups can differ per seed only in feature masks, never in tasks
    let truth = outcomes.first().and_then(|(_, t)| t.clone());
    let outcomes: Vec<SeedOutcome> = outcomes.into_iter().map(|(o, _)| o).collect();
    print!("{}", render(&setup, &outcomes, truth.as_ref()));
    // the MTL baseline solves a fixed set and is not expected to certify
    let mtfl_uncertified = outcomes.iter().any(|o| {
        setup.methods.iter().zip(&o.certified).any(|(m, &c)| matches!(m, Method::Mtfl | Method::MtflInverted) && !c)
    });
    Ok(if mtfl_uncertified { EXIT_NOT_CERTIFIED } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
