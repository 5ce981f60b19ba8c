//! Multi-task datasets: in-memory bundle, delimited-text I/O, standardization
//! and stratified per-task splitting.
//!
//! File format: a header `task,label,f1,...,fD` followed by one row per sample.
//! Comma or tab delimiters are detected from the header line. A directory of
//! per-task files (header `label,f1,...,fD`, task named after the file stem) is
//! accepted as well.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples of one binary classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    /// Labels in {-1, +1}.
    pub y: Vec<f64>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&y| y > 0.0).count()
    }

    /// Both labels present.
    pub fn has_both_labels(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    /// +1 or -1, whichever is more frequent (ties go to +1).
    pub fn majority_label(&self) -> f64 {
        if 2 * self.positives() >= self.len() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Labeled samples for `T` tasks sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub dim: usize,
    pub tasks: Vec<TaskData>,
}

impl DatasetBundle {
    pub fn new(dim: usize, tasks: Vec<TaskData>) -> Result<Self> {
        let b = DatasetBundle { dim, tasks };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for task in &self.tasks {
            if task.is_empty() {
                return Err(Error::Data(format!("task {:?} has no samples", task.name)));
            }
            if task.x.len() != task.y.len() {
                return Err(Error::Data(format!("task {:?}: feature/label count mismatch", task.name)));
            }
            if let Some(bad) = task.x.iter().find(|x| x.len() != self.dim) {
                return Err(Error::Data(format!(
                    "task {:?}: sample has {} features, expected {}",
                    task.name,
                    bad.len(),
                    self.dim
                )));
            }
            if task.y.iter().any(|&y| y != 1.0 && y != -1.0) {
                return Err(Error::Data(format!("task {:?}: labels must be -1 or +1", task.name)));
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskData::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(TaskData::len).sum()
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// A bundle holding only the listed tasks, in the given order.
    pub fn select_tasks(&self, indices: &[usize]) -> DatasetBundle {
        DatasetBundle { dim: self.dim, tasks: indices.iter().map(|&i| self.tasks[i].clone()).collect() }
    }
}

/// One parsed row of a dataset file, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub task: String,
    pub label: f64,
    pub x: Vec<f64>,
}

fn detect_delimiter(header: &str) -> u8 {
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_f64(field: &str, path: &str, row: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        row,
        msg: format!("cannot parse {what} {field:?}"),
    })
}

/// Reads rows of a single delimited file. `task_override` names the task for
/// files without a `task` column.
fn read_records_file(path: &Path, task_override: Option<&str>) -> Result<(Vec<Record>, usize)> {
    let text = fs::read_to_string(path)?;
    let shown = path.display().to_string();
    let header_line = text.lines().next().ok_or_else(|| Error::Parse {
        path: shown.clone(),
        row: 1,
        msg: "missing header".into(),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header_line))
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { path: shown.clone(), row: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();

    let has_task = header.first().map(String::as_str) == Some("task");
    let label_col = usize::from(has_task);
    if header.get(label_col).map(String::as_str) != Some("label") {
        let expected = if task_override.is_some() { "label,f1,..." } else { "task,label,f1,..." };
        return Err(Error::Parse { path: shown, row: 1, msg: format!("header must start with {expected}") });
    }
    if !has_task && task_override.is_none() {
        return Err(Error::Parse { path: shown, row: 1, msg: "header must start with task,label".into() });
    }
    let dim = header.len() - label_col - 1;

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { path: shown.clone(), row, msg: e.to_string() })?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != dim + label_col + 1 {
            return Err(Error::Parse {
                path: shown.clone(),
                row,
                msg: format!("expected {} features, found {}", dim, rec.len() as isize - label_col as isize - 1),
            });
        }
        let task = if has_task { rec[0].to_string() } else { task_override.unwrap_or_default().to_string() };
        let label = parse_f64(&rec[label_col], &shown, row, "label")?;
        let x = rec
            .iter()
            .skip(label_col + 1)
            .map(|f| parse_f64(f, &shown, row, "feature"))
            .collect::<Result<Vec<_>>>()?;
        out.push(Record { task, label, x });
    }
    Ok((out, dim))
}

/// Reads all rows from a file or a directory of per-task files, in order.
pub fn read_records(path: &Path) -> Result<(Vec<Record>, usize)> {
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut all = Vec::new();
        let mut dim = None;
        for f in files {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (recs, d) = read_records_file(&f, Some(&stem))?;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Parse {
                        path: f.display().to_string(),
                        row: 1,
                        msg: format!("file has {d} features, earlier files have {prev}"),
                    })
                }
                _ => {}
            }
            all.extend(recs);
        }
        Ok((all, dim.unwrap_or(0)))
    } else {
        read_records_file(path, None)
    }
}

/// Maps raw labels onto {-1, +1}: values already in {-1, 1} are kept, {0, 1}
/// is remapped, anything else is rejected.
pub fn normalize_labels(records: &mut [Record], path: &str) -> Result<()> {
    let pm = records.iter().all(|r| r.label == 1.0 || r.label == -1.0);
    if pm {
        return Ok(());
    }
    let zero_one = records.iter().all(|r| r.label == 0.0 || r.label == 1.0);
    if zero_one {
        log::info!("{path}: labels are {{0,1}}; mapping 0 -> -1");
        for r in records.iter_mut() {
            if r.label == 0.0 {
                r.label = -1.0;
            }
        }
        return Ok(());
    }
    let (row, bad) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.label != 1.0 && r.label != -1.0 && r.label != 0.0)
        .map(|(i, r)| (i + 2, r.label))
        .unwrap_or((0, f64::NAN));
    Err(Error::Parse { path: path.to_string(), row, msg: format!("labels must be binary, found {bad}") })
}

/// Loads a dataset; tasks appear in order of first occurrence.
pub fn load_dataset(path: &Path) -> Result<DatasetBundle> {
    let (mut records, dim) = read_records(path)?;
    normalize_labels(&mut records, &path.display().to_string())?;
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut tasks: Vec<TaskData> = Vec::new();
    for r in records {
        let t = *index.entry(r.task.clone()).or_insert_with(|| {
            order.push(r.task.clone());
            tasks.push(TaskData { name: r.task.clone(), x: Vec::new(), y: Vec::new() });
            tasks.len() - 1
        });
        tasks[t].x.push(r.x);
        tasks[t].y.push(r.label);
    }
    DatasetBundle::new(dim, tasks)
}

/// Reads rows (file order) whose task names must all be among `known`.
pub fn load_dataset_for_tasks(path: &Path, known: &[String]) -> Result<(Vec<Record>, usize)> {
    let (mut records, dim) = read_records(path)?;
    let shown = path.display().to_string();
    normalize_labels(&mut records, &shown)?;
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| !known.contains(&r.task)) {
        return Err(Error::Parse { path: shown, row: i + 2, msg: format!("unknown task id {:?}", r.task) });
    }
    Ok((records, dim))
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes the bundle as `task,label,f1..fD` text.
pub fn write_dataset(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("task,label");
    for f in 1..=bundle.dim {
        out.push_str(&format!(",f{f}"));
    }
    out.push('\n');
    for task in &bundle.tasks {
        for (x, &y) in task.x.iter().zip(&task.y) {
            out.push_str(&task.name);
            out.push(',');
            out.push_str(&fmt_num(y));
            for v in x {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Per-feature affine map `x -> (x - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features left untouched because they had zero variance.
    pub constant: Vec<usize>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        AffineTransform { shift: vec![0.0; dim], scale: vec![1.0; dim], constant: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (s, c))| (v - s) / c).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (s, c))| v * c + s).collect()
    }

    pub fn apply_bundle(&self, bundle: &DatasetBundle) -> DatasetBundle {
        DatasetBundle {
            dim: bundle.dim,
            tasks: bundle
                .tasks
                .iter()
                .map(|t| TaskData { name: t.name.clone(), x: t.x.iter().map(|x| self.apply(x)).collect(), y: t.y.clone() })
                .collect(),
        }
    }
}

/// Zero-mean, unit-variance features pooled over all tasks.
pub fn standardize(bundle: &DatasetBundle) -> (DatasetBundle, AffineTransform) {
    let n = bundle.total_samples() as f64;
    let dim = bundle.dim;
    let mut mean = vec![0.0; dim];
    for x in bundle.tasks.iter().flat_map(|t| &t.x) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1.0));
    let mut var = vec![0.0; dim];
    for x in bundle.tasks.iter().flat_map(|t| &t.x) {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut tf = AffineTransform::identity(dim);
    for f in 0..dim {
        let sd = (var[f] / n.max(1.0)).sqrt();
        if sd > 1e-12 * (1.0 + mean[f].abs()) {
            tf.shift[f] = mean[f];
            tf.scale[f] = sd;
        } else {
            tf.constant.push(f);
        }
    }
    if !tf.constant.is_empty() {
        log::warn!("standardize: features {:?} have zero variance and were left untouched", tf.constant);
    }
    (tf.apply_bundle(bundle), tf)
}

/// Problems found while splitting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitReport {
    /// Tasks where one side of the split lacks a class present in the task.
    pub flagged_tasks: Vec<String>,
}

/// Per-task, label-stratified random split; `fraction` of each task goes to training.
pub fn split(bundle: &DatasetBundle, fraction: f64, seed: u64) -> Result<(DatasetBundle, DatasetBundle, SplitReport)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParam(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut report = SplitReport::default();
    for task in &bundle.tasks {
        let mut pos: Vec<usize> = (0..task.len()).filter(|&i| task.y[i] > 0.0).collect();
        let mut neg: Vec<usize> = (0..task.len()).filter(|&i| task.y[i] < 0.0).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);

        // largest-remainder allocation of round(fraction * m) training slots
        let target = (fraction * task.len() as f64).round() as usize;
        let exact = [fraction * pos.len() as f64, fraction * neg.len() as f64];
        let mut take = [exact[0].floor() as usize, exact[1].floor() as usize];
        let mut left = target.saturating_sub(take[0] + take[1]);
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        for &c in order.iter().cycle().take(4) {
            let cap = if c == 0 { pos.len() } else { neg.len() };
            if left > 0 && take[c] < cap {
                take[c] += 1;
                left -= 1;
            }
        }

        let mut tr = TaskData { name: task.name.clone(), x: Vec::new(), y: Vec::new() };
        let mut te = tr.clone();
        for (c, idx) in [&pos, &neg].into_iter().enumerate() {
            for (k, &i) in idx.iter().enumerate() {
                let dst = if k < take[c] { &mut tr } else { &mut te };
                dst.x.push(task.x[i].clone());
                dst.y.push(task.y[i]);
            }
            let one_sided = !idx.is_empty() && (take[c] == 0 || take[c] == idx.len());
            if one_sided && !report.flagged_tasks.contains(&task.name) {
                report.flagged_tasks.push(task.name.clone());
            }
        }
        train.push(tr);
        test.push(te);
    }
    if !report.flagged_tasks.is_empty() {
        log::warn!("split: tasks {:?} lack a class on one side", report.flagged_tasks);
    }
    Ok((DatasetBundle { dim: bundle.dim, tasks: train }, DatasetBundle { dim: bundle.dim, tasks: test }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(m: usize, seed: u64) -> DatasetBundle {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..2)
            .map(|t| TaskData {
                name: format!("t{t}"),
                x: (0..m).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() * 3.0 + 1.0]).collect(),
                y: (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            })
            .collect();
        DatasetBundle::new(2, tasks).unwrap()
    }

    #[test]
    fn load_csv_basic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "task,label,f1,f2\na,1,0.5,1\na,-1,2,3\nb,1,1,1\nb,-1,0,0\n").unwrap();
        let b = load_dataset(&p).unwrap();
        assert_eq!(b.num_tasks(), 2);
        assert_eq!(b.dim, 2);
        assert_eq!(b.task_sizes(), vec![2, 2]);
        assert_eq!(b.tasks[0].x[1], vec![2.0, 3.0]);
    }

    #[test]
    fn load_tab_delimited() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "task\tlabel\tf1\nx\t1\t0.5\nx\t-1\t2\n").unwrap();
        let b = load_dataset(&p).unwrap();
        assert_eq!(b.dim, 1);
        assert_eq!(b.tasks[0].y, vec![1.0, -1.0]);
    }

    #[test]
    fn load_reports_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "task,label,f1,f2\na,1,0.5,1\na,-1,2,3,4\n").unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "task,label,f1\na,1,zz\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn zero_one_labels_are_mapped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "task,label,f1\na,0,1\na,1,2\n").unwrap();
        assert_eq!(load_dataset(&p).unwrap().tasks[0].y, vec![-1.0, 1.0]);
        fs::write(&p, "task,label,f1\na,2,1\na,1,2\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn load_directory_of_tasks() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("alpha.csv"), "label,f1\n1,1\n-1,2\n").unwrap();
        fs::write(dir.path().join("beta.csv"), "label,f1\n-1,0\n").unwrap();
        let b = load_dataset(dir.path()).unwrap();
        assert_eq!(b.task_names(), vec!["alpha", "beta"]);
        fs::write(dir.path().join("gamma.csv"), "label,f1,f2\n-1,0,1\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn unknown_task_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "task,label,f1\na,1,1\nzz,1,2\n").unwrap();
        let err = load_dataset_for_tasks(&p, &["a".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }));
    }

    #[test]
    fn write_then_load_round_trips() {
        let b = toy(6, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_dataset(&b, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), b);
    }

    #[test]
    fn standardize_properties() {
        let b = toy(20, 1);
        let (z, tf) = standardize(&b);
        let n = z.total_samples() as f64;
        for f in 0..2 {
            let vals: Vec<f64> = z.tasks.iter().flat_map(|t| t.x.iter().map(move |x| x[f])).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        for x in b.tasks.iter().flat_map(|t| &t.x) {
            let back = tf.invert(&tf.apply(x));
            assert!(back.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let (_, again) = standardize(&z);
        assert!(again.shift.iter().all(|s| s.abs() < 1e-9));
        assert!(again.scale.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn standardize_flags_constant_feature() {
        let mut b = toy(10, 2);
        for t in &mut b.tasks {
            for x in &mut t.x {
                x[1] = 4.0;
            }
        }
        let (z, tf) = standardize(&b);
        assert_eq!(tf.constant, vec![1]);
        assert_eq!(z.tasks[0].x[0][1], 4.0);
    }

    #[test]
    fn split_counts_and_determinism() {
        let b = toy(10, 5);
        let (tr, te, rep) = split(&b, 0.2, 11).unwrap();
        assert_eq!(tr.task_sizes(), vec![2, 2]);
        assert_eq!(te.task_sizes(), vec![8, 8]);
        assert!(rep.flagged_tasks.is_empty());
        let (tr2, _, _) = split(&b, 0.2, 11).unwrap();
        assert_eq!(tr, tr2);
        for t in &tr.tasks {
            assert_eq!(t.positives(), 1);
        }
        assert!(split(&b, 1.0, 0).is_err());
    }

    #[test]
    fn split_flags_missing_minority() {
        let mut b = toy(10, 5);
        b.tasks[0].y = vec![1.0; 10];
        b.tasks[0].y[0] = -1.0;
        let (_, _, rep) = split(&b, 0.2, 1).unwrap();
        assert_eq!(rep.flagged_tasks, vec!["t0".to_string()]);
    }
}
