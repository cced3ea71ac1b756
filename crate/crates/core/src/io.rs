//! On-disk formats for datasets, ground truth and fitted models.
//!
//! A dataset directory holds one CSV per task and split,
//! `task_<j>_train.csv` / `task_<j>_test.csv` with `j` counted from 1, each
//! with a header `y,x1,…,xD`, plus `manifest.json`. A model directory holds
//! `U.csv` and `V.csv` (plain numeric rows, no header) and `model.json`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Factorization, HyperParams, MultiTaskDataset, ProblemKind, TaskData};

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const MODEL_MANIFEST: &str = "model.json";

/// Formats a float so that parsing it back gives the same bits.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Test => "test",
        }
    }
}

pub fn task_file_name(task: usize, part: Part) -> String {
    format!("task_{}_{}.csv", task + 1, part.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_tasks: usize,
    pub dim: usize,
    pub kind: ProblemKind,
    pub n_train: Vec<usize>,
    /// Empty when the directory holds no test split.
    #[serde(default)]
    pub n_test: Vec<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

fn write_task(path: &Path, task: &TaskData) -> Result<()> {
    let mut out = String::new();
    out.push('y');
    for i in 1..=task.dim() {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (row, y) in task.x.rows().into_iter().zip(task.y.iter()) {
        out.push_str(&fmt_num(*y));
        for v in row {
            out.push(',');
            out.push_str(&fmt_num(*v));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a dataset directory. `test` may be `None` for a training-only set.
pub fn write_dataset(dir: &Path, train: &MultiTaskDataset, test: Option<&MultiTaskDataset>) -> Result<()> {
    if let Some(t) = test {
        if t.n_tasks() != train.n_tasks() || t.dim() != train.dim() || t.kind() != train.kind() {
            return Err(Error::shape("train and test sets disagree on tasks, dimension or kind"));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (j, task) in train.tasks().iter().enumerate() {
        write_task(&dir.join(task_file_name(j, Part::Train)), task)?;
    }
    if let Some(t) = test {
        for (j, task) in t.tasks().iter().enumerate() {
            write_task(&dir.join(task_file_name(j, Part::Test)), task)?;
        }
    }
    let manifest = DatasetManifest {
        n_tasks: train.n_tasks(),
        dim: train.dim(),
        kind: train.kind(),
        n_train: train.tasks().iter().map(TaskData::n_obs).collect(),
        n_test: test
            .map(|t| t.tasks().iter().map(TaskData::n_obs).collect())
            .unwrap_or_default(),
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)
}

/// Reads a numeric CSV with equal-width rows. When `header` is given the
/// first record must match it.
fn read_numeric_csv(path: &Path, header: Option<&[String]>) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    let mut width = header.map(<[String]>::len);
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if i == 0 {
            if let Some(expected) = header {
                let got: Vec<&str> = rec.iter().collect();
                if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(parse_err(
                        line,
                        format!("expected header {}, found {}", expected.join(","), got.join(",")),
                    ));
                }
                continue;
            }
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if let Some(w) = width {
            if rec.len() != w {
                return Err(parse_err(line, format!("expected {w} fields, found {}", rec.len())));
            }
        }
        width = Some(rec.len());
        let mut row = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: {field:?} is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "{}:{line}: column {} is not finite",
                    path.display(),
                    c + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, cols: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .expect("row widths checked while parsing")
}

pub fn read_task(path: &Path, dim: usize) -> Result<TaskData> {
    let mut header = vec!["y".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    let rows = read_numeric_csv(path, Some(&header))?;
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: "no observations".into(),
        });
    }
    let m = rows_to_matrix(rows, dim + 1);
    let y = m.column(0).to_owned();
    let x = m.slice(ndarray::s![.., 1..]).to_owned();
    TaskData::new(x, y)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    read_json(&dir.join(DATASET_MANIFEST))
}

/// Loads one split of a dataset directory.
pub fn read_dataset(dir: &Path, part: Part) -> Result<MultiTaskDataset> {
    let manifest = read_manifest(dir)?;
    if part == Part::Test && manifest.n_test.is_empty() {
        return Err(Error::InvalidData(format!("{} has no test split", dir.display())));
    }
    let mut tasks = Vec::with_capacity(manifest.n_tasks);
    for j in 0..manifest.n_tasks {
        let path = dir.join(task_file_name(j, part));
        tasks.push(read_task(&path, manifest.dim)?);
    }
    MultiTaskDataset::new(tasks, manifest.kind)
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let rows = read_numeric_csv(path, None)?;
    let cols = rows.first().map_or(0, Vec::len);
    Ok(rows_to_matrix(rows, cols))
}

/// Ground truth written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: String,
    pub seed: u64,
    pub noise_std: f64,
    /// Row-major `D × T`.
    pub w_true: Vec<Vec<f64>>,
    pub u_true: Vec<Vec<f64>>,
    pub v_true: Vec<Vec<f64>>,
    pub u_mask: Vec<Vec<bool>>,
    pub v_mask: Vec<Vec<bool>>,
}

pub fn to_rows<T: Clone>(m: ArrayView2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::shape("ragged matrix rows"));
    }
    Ok(Array2::from_shape_vec(
        (rows.len(), cols),
        rows.iter().flatten().copied().collect(),
    )
    .expect("checked widths"))
}

pub fn write_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    write_json(&dir.join(GROUND_TRUTH), truth)
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    read_json(&dir.join(GROUND_TRUTH))
}

/// Input preprocessing fitted on training data and replayed on test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    /// Per-variable divisors (maximum absolute training value; 1 for an
    /// all-zero variable). `None` leaves inputs unscaled.
    pub divisors: Option<Vec<f64>>,
    /// Append a constant-one column after scaling.
    pub add_bias: bool,
}

impl Preprocessing {
    pub fn fit(train: &MultiTaskDataset, normalize: bool, add_bias: bool) -> Self {
        let divisors = normalize.then(|| {
            let mut m = vec![0.0f64; train.dim()];
            for t in train.tasks() {
                for row in t.x.rows() {
                    for (mi, v) in m.iter_mut().zip(row.iter()) {
                        *mi = mi.max(v.abs());
                    }
                }
            }
            m.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect()
        });
        Preprocessing { divisors, add_bias }
    }

    /// Number of model variables for raw inputs of dimension `raw_dim`.
    pub fn output_dim(&self, raw_dim: usize) -> usize {
        raw_dim + usize::from(self.add_bias)
    }

    pub fn apply(&self, data: &MultiTaskDataset) -> Result<MultiTaskDataset> {
        if let Some(d) = &self.divisors {
            if d.len() != data.dim() {
                return Err(Error::shape(format!(
                    "preprocessing expects {} variables, data has {}",
                    d.len(),
                    data.dim()
                )));
            }
        }
        let tasks = data
            .tasks()
            .iter()
            .map(|t| {
                let mut x = t.x.clone();
                if let Some(d) = &self.divisors {
                    let d = Array1::from_vec(d.clone());
                    x /= &d.view().insert_axis(Axis(0));
                }
                if self.add_bias {
                    x.push_column(Array1::ones(t.n_obs()).view())
                        .expect("column length matches");
                }
                TaskData::new(x, t.y.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        MultiTaskDataset::new(tasks, data.kind())
    }

    /// Maps coefficients of the preprocessed inputs back to the raw
    /// variables, dropping the bias row.
    pub fn raw_coefficients(&self, w: ArrayView2<f64>) -> Result<Array2<f64>> {
        let raw_dim = w.nrows() - usize::from(self.add_bias && w.nrows() > 0);
        if self.add_bias && w.nrows() == 0 {
            return Err(Error::shape("coefficient matrix has no bias row"));
        }
        let mut out = w.slice(ndarray::s![..raw_dim, ..]).to_owned();
        if let Some(d) = &self.divisors {
            if d.len() != raw_dim {
                return Err(Error::shape(format!(
                    "{} divisors for {raw_dim} variables",
                    d.len()
                )));
            }
            for (mut row, &di) in out.rows_mut().into_iter().zip(d.iter()) {
                row /= di;
            }
        }
        Ok(out)
    }
}

/// Everything besides `U` and `V` needed to reuse a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    /// Model variables, including the bias column if any.
    pub dim: usize,
    pub rank: usize,
    pub n_tasks: usize,
    pub kind: ProblemKind,
    pub hyperparams: HyperParams,
    pub preprocessing: Preprocessing,
    pub objective_trace: Vec<f64>,
    /// Pooled training RMSE or error rate after preprocessing.
    pub train_metric: f64,
}

pub fn write_model(dir: &Path, fact: &Factorization, manifest: &ModelManifest) -> Result<()> {
    if fact.dim() != manifest.dim || fact.rank() != manifest.rank || fact.n_tasks() != manifest.n_tasks {
        return Err(Error::shape("model manifest disagrees with factor shapes"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join("U.csv"), fact.u.view())?;
    write_matrix(&dir.join("V.csv"), fact.v.view())?;
    write_json(&dir.join(MODEL_MANIFEST), manifest)
}

pub fn read_model(dir: &Path) -> Result<(Factorization, ModelManifest)> {
    let manifest: ModelManifest = read_json(&dir.join(MODEL_MANIFEST))?;
    let u = read_matrix(&dir.join("U.csv"))?;
    let v = read_matrix(&dir.join("V.csv"))?;
    if u.dim() != (manifest.dim, manifest.rank) || v.dim() != (manifest.rank, manifest.n_tasks) {
        return Err(Error::shape(format!(
            "U is {:?} and V is {:?}, manifest says D={}, K={}, T={}",
            u.dim(),
            v.dim(),
            manifest.dim,
            manifest.rank,
            manifest.n_tasks
        )));
    }
    Ok((Factorization::new(u, v)?, manifest))
}
