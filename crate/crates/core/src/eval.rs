//! Metrics, hyperparameter search and data-dependent risk-bound terms.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lambda_max_sym;
use crate::model::{label_of, HyperParams, MultiTaskDataset, ProblemKind, TaskData};
use crate::trainer::{fit, Baseline};

pub fn rmse(y_true: ArrayView1<f64>, y_pred: ArrayView1<f64>) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let sse: f64 = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

/// Fraction of positions where the labels differ.
pub fn error_rate(y_true: ArrayView1<f64>, y_pred_labels: ArrayView1<f64>) -> Result<f64> {
    check_pair(y_true, y_pred_labels)?;
    let wrong = y_true
        .iter()
        .zip(y_pred_labels.iter())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / y_true.len() as f64)
}

fn check_pair(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} targets but {} predictions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric("no observations".into()));
    }
    Ok(())
}

/// Relative estimation error `‖W* − Ŵ‖_F / ‖W*‖_F`.
pub fn ree(w_true: ArrayView2<f64>, w_hat: ArrayView2<f64>) -> Result<f64> {
    if w_true.shape() != w_hat.shape() {
        return Err(Error::shape(format!(
            "true W is {:?}, estimate is {:?}",
            w_true.shape(),
            w_hat.shape()
        )));
    }
    let denom = w_true.iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("true coefficient matrix is zero".into()));
    }
    let num = w_true
        .iter()
        .zip(w_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Averages over tasks of the trace and the largest eigenvalue of the
/// uncentered second-moment matrices `(1/N_j) X_jᵀ X_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBoundTerms {
    pub c_trace: f64,
    pub c_lambda: f64,
}

pub fn risk_bound_terms(data: &MultiTaskDataset) -> RiskBoundTerms {
    let t = data.n_tasks() as f64;
    let (mut tr, mut lam) = (0.0, 0.0);
    for task in data.tasks() {
        let m = task.x.t().dot(&task.x) / task.n_obs() as f64;
        tr += m.diag().sum();
        lam += lambda_max_sym(m.view()).max(0.0);
    }
    RiskBoundTerms {
        c_trace: tr / t,
        c_lambda: lam / t,
    }
}

/// Test metrics of a coefficient matrix (`D × T`, one column per task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `"rmse"` or `"error_rate"`.
    pub metric: String,
    /// Metric over all observations of all tasks together.
    pub pooled: f64,
    pub per_task: Vec<f64>,
}

pub fn evaluate(w: ArrayView2<f64>, data: &MultiTaskDataset) -> Result<Evaluation> {
    if w.nrows() != data.dim() || w.ncols() != data.n_tasks() {
        return Err(Error::shape(format!(
            "model is {}x{}, data has D={} and T={}",
            w.nrows(),
            w.ncols(),
            data.dim(),
            data.n_tasks()
        )));
    }
    let mut acc = MetricAccumulator::default();
    let mut per_task = Vec::with_capacity(data.n_tasks());
    for (j, task) in data.tasks().iter().enumerate() {
        let mut own = MetricAccumulator::default();
        let scores = task.x.dot(&w.column(j));
        for (&y, &s) in task.y.iter().zip(scores.iter()) {
            own.push(data.kind(), y, s);
            acc.push(data.kind(), y, s);
        }
        per_task.push(own.value(data.kind()));
    }
    Ok(Evaluation {
        metric: metric_name(data.kind()).to_string(),
        pooled: acc.value(data.kind()),
        per_task,
    })
}

fn metric_name(kind: ProblemKind) -> &'static str {
    match kind {
        ProblemKind::Regression => "rmse",
        ProblemKind::BinaryClassification => "error_rate",
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct MetricAccumulator {
    sum: f64,
    count: usize,
}

impl MetricAccumulator {
    fn push(&mut self, kind: ProblemKind, y: f64, score: f64) {
        self.sum += match kind {
            ProblemKind::Regression => (y - score) * (y - score),
            ProblemKind::BinaryClassification => f64::from(label_of(score) != y),
        };
        self.count += 1;
    }

    fn merge(&mut self, other: MetricAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    fn value(&self, kind: ProblemKind) -> f64 {
        let mean = self.sum / self.count as f64;
        match kind {
            ProblemKind::Regression => mean.sqrt(),
            ProblemKind::BinaryClassification => mean,
        }
    }
}

/// How held-out data is carved from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Selection {
    /// Per-task stratified k-fold. A task with fewer observations than
    /// folds is split leave-one-out.
    KFold { folds: usize },
    /// A single per-task validation split holding out `fraction` of each task.
    Holdout { fraction: f64 },
}

impl Default for Selection {
    fn default() -> Self {
        Selection::KFold { folds: 10 }
    }
}

/// One training/held-out split. `held_out[j]` indexes rows of task `j`.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: MultiTaskDataset,
    pub held_out: Vec<Vec<usize>>,
}

/// Builds the splits for `selection`. Row order within each task is
/// shuffled by a generator seeded with `seed` on stream `j`.
pub fn make_splits(data: &MultiTaskDataset, selection: Selection, seed: u64) -> Result<Vec<Split>> {
    let perms: Vec<Vec<usize>> = (0..data.n_tasks())
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut idx: Vec<usize> = (0..data.tasks()[j].n_obs()).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    for (j, t) in data.tasks().iter().enumerate() {
        if t.n_obs() < 2 {
            return Err(Error::param(format!(
                "task {j} has {} observation(s); held-out selection needs 2 or more per task, \
                 or supply a separate validation set",
                t.n_obs()
            )));
        }
    }
    // per task: fold id for each position of its shuffled order
    let (n_splits, assign): (usize, Vec<Vec<usize>>) = match selection {
        Selection::KFold { folds } => {
            if folds < 2 {
                return Err(Error::param(format!("k-fold needs at least 2 folds, got {folds}")));
            }
            let assign = perms
                .iter()
                .map(|p| (0..p.len()).map(|pos| pos % folds).collect())
                .collect();
            (folds, assign)
        }
        Selection::Holdout { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::param(format!(
                    "holdout fraction must lie in (0, 1), got {fraction}"
                )));
            }
            let assign = perms
                .iter()
                .map(|p| {
                    let n = p.len();
                    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
                    (0..n).map(|pos| usize::from(pos >= n_val)).collect()
                })
                .collect();
            (1, assign)
        }
    };

    let mut splits = Vec::with_capacity(n_splits);
    for f in 0..n_splits {
        let mut tasks = Vec::with_capacity(data.n_tasks());
        let mut held_out = Vec::with_capacity(data.n_tasks());
        for (j, task) in data.tasks().iter().enumerate() {
            let mut train_idx = Vec::new();
            let mut out_idx = Vec::new();
            for (pos, &row) in perms[j].iter().enumerate() {
                if assign[j][pos] == f {
                    out_idx.push(row);
                } else {
                    train_idx.push(row);
                }
            }
            train_idx.sort_unstable();
            out_idx.sort_unstable();
            tasks.push(task.select(&train_idx));
            held_out.push(out_idx);
        }
        splits.push(Split {
            train: MultiTaskDataset::new(tasks, data.kind())?,
            held_out,
        });
    }
    Ok(splits)
}

/// Pooled held-out metric of `fitter` (which returns a `D × T` coefficient
/// matrix) over all splits.
pub fn cross_validate<F>(data: &MultiTaskDataset, splits: &[Split], fitter: F) -> Result<f64>
where
    F: Fn(&MultiTaskDataset) -> Result<Array2<f64>> + Sync,
{
    let kind = data.kind();
    let parts = splits
        .par_iter()
        .map(|split| {
            let w = fitter(&split.train)?;
            let mut acc = MetricAccumulator::default();
            for (j, rows) in split.held_out.iter().enumerate() {
                let task: &TaskData = &data.tasks()[j];
                for &r in rows {
                    let s = task.x.row(r).dot(&w.column(j));
                    acc.push(kind, task.y[r], s);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MetricAccumulator::default();
    for p in parts {
        total.merge(p);
    }
    if total.count == 0 {
        return Err(Error::UndefinedMetric("no held-out observations".into()));
    }
    Ok(total.value(kind))
}

/// Search space for [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Values tried for `γ₁`, `γ₂` and (unless tied) `μ`.
    pub gamma_grid: Vec<f64>,
    pub rank_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    /// Use `μ = γ₁` instead of searching `μ`.
    pub tie_mu_to_gamma1: bool,
    pub selection: Selection,
    /// Solver settings shared by every grid point.
    pub base: HyperParams,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::full()
    }
}

impl GridSpec {
    /// `γ ∈ {2⁻¹⁰, …, 2³}`, `K ∈ {3, 5, …, 13}`, `k ∈ {1, 3, 5, 7}`, `μ = γ₁`,
    /// 10-fold selection.
    pub fn full() -> Self {
        GridSpec {
            gamma_grid: (-10..=3).map(|e| 2f64.powi(e)).collect(),
            rank_grid: vec![3, 5, 7, 9, 11, 13],
            k_grid: vec![1, 3, 5, 7],
            tie_mu_to_gamma1: true,
            selection: Selection::default(),
            base: HyperParams::default(),
        }
    }

    /// Every other power of two from `2⁻⁹` to `2¹`, `K ∈ {3, 5, 7}`,
    /// `k ∈ {1, 3}`, 5-fold selection.
    pub fn reduced() -> Self {
        GridSpec {
            gamma_grid: (-9..=1).step_by(2).map(|e| 2f64.powi(e)).collect(),
            rank_grid: vec![3, 5, 7],
            k_grid: vec![1, 3],
            tie_mu_to_gamma1: true,
            selection: Selection::KFold { folds: 5 },
            base: HyperParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() || self.rank_grid.is_empty() || self.k_grid.is_empty() {
            return Err(Error::param("grids must be nonempty"));
        }
        if self.points().is_empty() {
            return Err(Error::param("no grid point has k <= K"));
        }
        Ok(())
    }

    /// All combinations with `k ≤ K`, in grid order.
    pub fn points(&self) -> Vec<HyperParams> {
        let mus: Vec<Option<f64>> = if self.tie_mu_to_gamma1 {
            vec![None]
        } else {
            self.gamma_grid.iter().map(|&m| Some(m)).collect()
        };
        let mut out = Vec::new();
        for &g1 in &self.gamma_grid {
            for &g2 in &self.gamma_grid {
                for &mu in &mus {
                    for &rank in &self.rank_grid {
                        for &k in &self.k_grid {
                            if k > rank {
                                continue;
                            }
                            out.push(HyperParams {
                                gamma1: g1,
                                gamma2: g2,
                                mu: mu.unwrap_or(g1),
                                rank,
                                k,
                                ..self.base
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu: f64,
    pub rank: usize,
    pub k: usize,
    pub score: f64,
}

impl GridRow {
    fn key_cmp(&self, other: &GridRow) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.gamma1.total_cmp(&other.gamma1))
            .then(self.gamma2.total_cmp(&other.gamma2))
            .then(self.mu.total_cmp(&other.mu))
            .then(self.rank.cmp(&other.rank))
            .then(self.k.cmp(&other.k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: HyperParams,
    pub best_score: f64,
    /// One row per grid point, in grid order.
    pub table: Vec<GridRow>,
}

/// Exhaustive search minimizing the pooled held-out RMSE (regression) or
/// error rate (classification). Ties go to the lexicographically smallest
/// `(γ₁, γ₂, μ, K, k)`, so the result does not depend on grid order.
pub fn grid_search(data: &MultiTaskDataset, grid: &GridSpec, seed: u64) -> Result<GridResult> {
    grid.validate()?;
    let splits = make_splits(data, grid.selection, seed)?;
    let points = grid.points();
    let scores = points
        .par_iter()
        .map(|hp| cross_validate(data, &splits, |d| Ok(fit(d, hp)?.0.coefficients())))
        .collect::<Result<Vec<f64>>>()?;
    let table: Vec<GridRow> = points
        .iter()
        .zip(scores.iter())
        .map(|(hp, &score)| GridRow {
            gamma1: hp.gamma1,
            gamma2: hp.gamma2,
            mu: hp.mu,
            rank: hp.rank,
            k: hp.k,
            score,
        })
        .collect();
    let (best_idx, best_row) = table
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.key_cmp(b.1))
        .expect("grid is nonempty");
    Ok(GridResult {
        best: points[best_idx],
        best_score: best_row.score,
        table,
    })
}

/// Chooses the baseline weight from `lambdas` by the same held-out
/// criterion. Returns the weight and its score.
pub fn select_baseline_lambda(
    data: &MultiTaskDataset,
    baseline: Baseline,
    lambdas: &[f64],
    selection: Selection,
    seed: u64,
) -> Result<(f64, f64)> {
    if lambdas.is_empty() {
        return Err(Error::param("baseline weight grid is empty"));
    }
    let splits = make_splits(data, selection, seed)?;
    let scores = lambdas
        .par_iter()
        .map(|&lam| cross_validate(data, &splits, |d| baseline.fit(d, lam)))
        .collect::<Result<Vec<f64>>>()?;
    let best = lambdas
        .iter()
        .zip(scores.iter())
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.total_cmp(b.0)))
        .expect("nonempty");
    Ok((*best.0, *best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(array![1.0, 2.0].view(), array![1.0, 2.0].view()).unwrap(), 0.0);
        assert_eq!(rmse(array![0.0, 0.0].view(), array![1.0, -1.0].view()).unwrap(), 1.0);
        assert_eq!(rmse(array![3.0].view(), array![0.0].view()).unwrap(), 3.0);
        let e = Array1::<f64>::zeros(0);
        assert!(rmse(e.view(), e.view()).is_err());
    }

    #[test]
    fn error_rate_examples() {
        let y = array![1.0, -1.0, 1.0, 1.0];
        assert_eq!(error_rate(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(error_rate(y.view(), (-&y).view()).unwrap(), 1.0);
        assert_eq!(
            error_rate(y.view(), array![1.0, -1.0, -1.0, 1.0].view()).unwrap(),
            0.25
        );
    }

    #[test]
    fn ree_examples() {
        let w = array![[1.0, 2.0], [0.0, -1.0]];
        assert_eq!(ree(w.view(), w.view()).unwrap(), 0.0);
        assert_eq!(ree(w.view(), Array2::zeros((2, 2)).view()).unwrap(), 1.0);
        assert_abs_diff_eq!(ree(w.view(), (&w * 2.0).view()).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            ree(Array2::zeros((2, 2)).view(), w.view()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn dataset(xs: Vec<Array2<f64>>) -> MultiTaskDataset {
        let tasks = xs
            .into_iter()
            .map(|x| {
                let n = x.nrows();
                TaskData::new(x, Array1::zeros(n)).unwrap()
            })
            .collect();
        MultiTaskDataset::new(tasks, ProblemKind::Regression).unwrap()
    }

    #[test]
    fn risk_terms_examples() {
        let s = 2f64.sqrt();
        let identity = array![[s, 0.0], [0.0, s]];
        let r = risk_bound_terms(&dataset(vec![identity.clone()]));
        assert_abs_diff_eq!(r.c_trace, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.c_lambda, 1.0, epsilon = 1e-12);

        let r = risk_bound_terms(&dataset(vec![Array2::zeros((3, 2))]));
        assert_eq!((r.c_trace, r.c_lambda), (0.0, 0.0));

        let r = risk_bound_terms(&dataset(vec![identity.clone(), &identity * 2f64.sqrt()]));
        assert_abs_diff_eq!(r.c_trace, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.c_lambda, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn kfold_partitions_each_task() {
        let data = dataset(vec![Array2::zeros((23, 1)), Array2::zeros((4, 1))]);
        let splits = make_splits(&data, Selection::KFold { folds: 10 }, 3).unwrap();
        assert_eq!(splits.len(), 10);
        for j in 0..2 {
            let mut seen: Vec<usize> = splits.iter().flat_map(|s| s.held_out[j].clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..data.tasks()[j].n_obs()).collect::<Vec<_>>());
        }
        // 23 rows over 10 folds: 2 or 3 per fold
        for s in &splits {
            assert!((2..=3).contains(&s.held_out[0].len()));
            assert!(s.held_out[1].len() <= 1);
        }
    }

    #[test]
    fn tiny_task_rejected() {
        let data = dataset(vec![Array2::zeros((1, 1))]);
        let err = make_splits(&data, Selection::KFold { folds: 10 }, 0).unwrap_err();
        assert!(err.to_string().contains("validation set"));
    }

    #[test]
    fn holdout_sizes() {
        let data = dataset(vec![Array2::zeros((10, 1)), Array2::zeros((2, 1))]);
        let splits = make_splits(&data, Selection::Holdout { fraction: 0.3 }, 0).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].held_out[0].len(), 3);
        assert_eq!(splits[0].held_out[1].len(), 1);
        assert_eq!(splits[0].train.tasks()[0].n_obs(), 7);
    }

    #[test]
    fn grid_points_respect_k_le_rank() {
        let g = GridSpec {
            gamma_grid: vec![0.1],
            rank_grid: vec![1, 3],
            k_grid: vec![1, 3, 5],
            ..GridSpec::reduced()
        };
        let pts: Vec<(usize, usize)> = g.points().iter().map(|p| (p.rank, p.k)).collect();
        assert_eq!(pts, vec![(1, 1), (3, 1), (3, 3)]);
        assert!(g.points().iter().all(|p| p.mu == p.gamma1));
        assert_eq!(GridSpec::full().gamma_grid.len(), 14);
    }
}
