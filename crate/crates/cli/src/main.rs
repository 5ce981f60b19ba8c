//! `mtfl`: train, predict, evaluate, generate synthetic data and compare
//! against baselines.
//!
//! Exit codes: 0 success (certified fit), 2 usage or input error, 3 the fit
//! completed but its certificate did not hold.

mod bench;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mtfl_core::active_set::fit;
use mtfl_core::data::{load_dataset, load_dataset_for_tasks};
use mtfl_core::hyper::Hyperparams;
use mtfl_core::manifest::{experiment_manifest, KernelPreset};
use mtfl_core::metrics::{accuracy, auc};
use mtfl_core::model::{fit_standardized, TrainedModel};
use mtfl_core::synthetic::{generate_synthetic, write_synthetic, SyntheticSpec};

const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mtfl", version, about = "Multi-task feature learning over a lattice of task groups")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model; writes the model file and a key=value iteration log next to it.
    Train(TrainArgs),
    /// Score a dataset; prints `task,score,label` per sample.
    Predict(PredictArgs),
    /// Per-task and macro AUC and accuracy.
    Eval(EvalArgs),
    /// Write a planted-structure dataset and its ground truth.
    Synth(SynthArgs),
    /// Compare STL, single-group MTL and MTFL over several seeds.
    Bench(bench::BenchArgs),
    /// Write a named experiment manifest.
    Manifest(ManifestArgs),
}

/// Hyperparameters shared by `train` and `bench`. Flags override the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct HyperArgs {
    /// `key=value` file using the flag names (e.g. `C=1`, `mu=0.1`, `kernels=linear`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Base of the group weights `a^|v|`.
    #[arg(long)]
    a: Option<f64>,
    /// Duality-gap target of the certificate.
    #[arg(long)]
    eps: Option<f64>,
    /// `normal` or `inverted`.
    #[arg(long)]
    orientation: Option<String>,
    /// `per-feature`, `linear` or `all`.
    #[arg(long)]
    kernels: Option<String>,
    /// Any other solver setting, e.g. `--set max-rounds=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl HyperArgs {
    /// Applies config file, then `--set`, then the named flags on top of `base`.
    pub fn resolve(&self, mut hyper: Hyperparams, mut kernels: KernelPreset) -> Result<(Hyperparams, KernelPreset)> {
        let mut apply = |k: &str, v: &str| -> Result<()> {
            match k {
                "kernels" => kernels = v.parse()?,
                _ => hyper.set_key(k, v)?,
            }
            Ok(())
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (i, line) in text.lines().enumerate().map(|(i, l)| (i, l.trim())) {
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .with_context(|| format!("{}: line {}: expected key=value", path.display(), i + 1))?;
                let k = k.trim().trim_start_matches("--");
                apply(k, v.trim()).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            apply(k.trim(), v.trim())?;
        }
        for (k, v) in [("C", self.c), ("mu", self.mu), ("p", self.p), ("q", self.q), ("a", self.a), ("eps", self.eps)] {
            if let Some(v) = v {
                apply(k, &v.to_string())?;
            }
        }
        if let Some(o) = &self.orientation {
            apply("orientation", o)?;
        }
        if let Some(k) = &self.kernels {
            apply("kernels", k)?;
        }
        hyper.validate()?;
        Ok((hyper, kernels))
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file (`task,label,f1,...`) or directory of per-task files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit on raw features instead of standardized ones.
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["model", "scores"]))]
struct EvalArgs {
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output of `predict` instead of a model and dataset.
    #[arg(long, conflicts_with = "data")]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthSpecArgs {
    #[arg(long = "T", default_value_t = 6)]
    tasks: usize,
    /// Planted group sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,3")]
    groups: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    kshared: usize,
    /// Training samples per task.
    #[arg(long, default_value_t = 40)]
    m: usize,
    /// Test samples per task.
    #[arg(long, default_value_t = 200)]
    m_test: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma_w: f64,
    /// Label flip probability.
    #[arg(long, default_value_t = 0.05)]
    rho: f64,
}

impl SynthSpecArgs {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_tasks: self.tasks,
            groups: self.groups.clone(),
            dim: self.dim,
            k_shared: self.kshared,
            m: self.m,
            m_test: self.m_test,
            sigma_w: self.sigma_w,
            rho: self.rho,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    spec: SynthSpecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `train.csv`, `test.csv` and `truth.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ManifestArgs {
    /// planted-recovery, inverted-recovery or oracle-suite.
    #[arg(long)]
    name: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mtfl: error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a).map(|()| 0),
        Command::Eval(a) => cmd_eval(&a).map(|()| 0),
        Command::Synth(a) => cmd_synth(&a).map(|()| 0),
        Command::Bench(a) => bench::cmd_bench(&a),
        Command::Manifest(a) => cmd_manifest(&a).map(|()| 0),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn cmd_train(args: &TrainArgs) -> Result<u8> {
    let (hyper, preset) = args.hyper.resolve(Hyperparams::default(), KernelPreset::PerFeature)?;
    let data = load_dataset(&args.data).context("train")?;
    let kernels = preset.kernels(data.dim);
    let model = if args.no_standardize { fit(&data, &kernels, &hyper) } else { fit_standardized(&data, &kernels, &hyper) }.context("train")?;
    model.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let mut log = String::new();
    for (k, v) in hyper.to_pairs() {
        let _ = writeln!(log, "# {k}={v}");
    }
    let _ = writeln!(log, "# kernels={}", preset.as_str());
    for r in &model.log {
        let _ = writeln!(log, "{}", r.to_kv());
    }
    let _ = writeln!(log, "certified={} gap_bound={} objective={}", model.certified, model.gap_bound, model.objective);
    let path = log_path(&args.out);
    fs::write(&path, log).with_context(|| format!("writing {}", path.display()))?;

    println!("certified={}", model.certified);
    println!("objective={}", model.objective);
    println!("gap_bound={}", model.gap_bound);
    println!("rounds={}", model.log.len());
    println!("active_groups={}", model.groups.len());
    for (g, gamma) in model.selected_groups() {
        println!("group={g} gamma={gamma:.6}");
    }
    if !model.degenerate_tasks.is_empty() {
        let names: Vec<&str> = model.degenerate_tasks.iter().map(|&t| model.task_names[t].as_str()).collect();
        println!("notice=tasks {} have a single label and predict a constant", names.join(","));
    }
    if model.certified {
        Ok(0)
    } else {
        eprintln!("mtfl: fit is not certified within the round and size caps; model written anyway");
        Ok(EXIT_NOT_CERTIFIED)
    }
}

fn is_blank_file(path: &Path) -> Result<bool> {
    Ok(path.is_file() && fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?.trim().is_empty())
}

/// Scores every sample of `data` in file order as `(task, score, label)`.
fn score_file(model: &TrainedModel, data: &Path) -> Result<Vec<(String, f64, f64)>> {
    if is_blank_file(data)? {
        return Ok(Vec::new());
    }
    let (records, dim) = load_dataset_for_tasks(data, &model.task_names)?;
    if dim != model.dim {
        bail!("data: {}: {} features, but the model expects {}", data.display(), dim, model.dim);
    }
    let predictor = model.predictor();
    records
        .into_iter()
        .map(|r| {
            let t = model.task_names.iter().position(|n| *n == r.task).expect("task names were checked");
            Ok((r.task, predictor.score(t, &r.x)?, r.label))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let rows = score_file(&model, &args.data).context("predict")?;
    let mut out = String::new();
    for (task, score, label) in rows {
        let _ = writeln!(out, "{task},{score},{label}");
    }
    write_output(args.out.as_deref(), &out)
}

fn read_scores(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = || -> Option<(String, f64, f64)> {
            let mut it = line.rsplitn(3, ',');
            let label = it.next()?.trim().parse().ok()?;
            let score = it.next()?.trim().parse().ok()?;
            Some((it.next()?.trim().to_string(), score, label))
        };
        let row = parse().with_context(|| format!("{}: line {}: expected task,score,label", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Groups rows by task in order of first appearance.
fn by_task(rows: Vec<(String, f64, f64)>) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (task, s, y) in rows {
        let i = match out.iter().position(|(t, _, _)| *t == task) {
            Some(i) => i,
            None => {
                out.push((task, Vec::new(), Vec::new()));
                out.len() - 1
            }
        };
        out[i].1.push(s);
        out[i].2.push(y);
    }
    out
}

/// The `eval` report; tasks with a single class get a notice instead of an AUC.
pub fn metrics_report(rows: Vec<(String, f64, f64)>) -> Result<String> {
    let tasks = by_task(rows);
    if tasks.is_empty() {
        bail!("eval: no samples to evaluate");
    }
    let mut out = String::new();
    let (mut aucs, mut accs) = (Vec::new(), Vec::new());
    for (name, scores, labels) in &tasks {
        let acc = accuracy(scores, labels);
        accs.push(acc);
        let _ = writeln!(out, "task.{name}.n={}", scores.len());
        match auc(scores, labels) {
            Ok(a) => {
                aucs.push(a);
                let _ = writeln!(out, "task.{name}.auc={a:.6}");
            }
            Err(_) => {
                let _ = writeln!(out, "notice=task {name} has a single class; auc omitted");
            }
        }
        let _ = writeln!(out, "task.{name}.accuracy={acc:.6}");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    if aucs.is_empty() {
        let _ = writeln!(out, "notice=no task has both classes; auc_macro omitted");
    } else {
        let _ = writeln!(out, "auc_macro={:.6}", mean(&aucs));
    }
    let _ = writeln!(out, "accuracy_macro={:.6}", mean(&accs));
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let rows = match (&args.scores, &args.model, &args.data) {
        (Some(s), _, _) => read_scores(s)?,
        (None, Some(m), Some(d)) => score_file(&load_model(m)?, d).context("eval")?,
        _ => bail!("eval needs --scores or both --model and --data"),
    };
    print!("{}", metrics_report(rows)?);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = args.spec.spec(args.seed);
    let (train, test, truth) = generate_synthetic(&spec).context("synth")?;
    write_synthetic(&args.out, &train, &test, &truth).with_context(|| format!("writing into {}", args.out.display()))?;
    println!("train={}", args.out.join("train.csv").display());
    println!("test={}", args.out.join("test.csv").display());
    println!("truth={}", args.out.join("truth.txt").display());
    Ok(())
}

fn cmd_manifest(args: &ManifestArgs) -> Result<()> {
    let m = experiment_manifest(&args.name)?;
    write_output(args.out.as_deref(), &m.to_text())
}
