//! Problem data, the factorized linear model and the regularized objective.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{ksupport_norm, l1_inf_norm, l1_norm};

/// Loss family shared by every task of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Squared loss `½‖y − Xw‖²`.
    Regression,
    /// Logistic loss with labels in `{−1, +1}`.
    BinaryClassification,
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemKind::Regression => f.write_str("regression"),
            ProblemKind::BinaryClassification => f.write_str("binary-classification"),
        }
    }
}

/// Observations of a single task: inputs `x` (`N × D`) and outputs `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl TaskData {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape(format!(
                "task has {} input rows but {} outputs",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in task data".into()));
        }
        Ok(TaskData { x, y })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` of this task, in the given order.
    pub fn select(&self, idx: &[usize]) -> TaskData {
        TaskData {
            x: self.x.select(ndarray::Axis(0), idx),
            y: self.y.select(ndarray::Axis(0), idx),
        }
    }
}

/// An ordered collection of tasks sharing the same variable dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    tasks: Vec<TaskData>,
    dim: usize,
    kind: ProblemKind,
}

impl MultiTaskDataset {
    pub fn new(tasks: Vec<TaskData>, kind: ProblemKind) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::InvalidData("dataset needs at least one task".into()))?;
        let dim = first.dim();
        for (j, t) in tasks.iter().enumerate() {
            if t.dim() != dim {
                return Err(Error::shape(format!(
                    "task {j} has {} variables, expected {dim}",
                    t.dim()
                )));
            }
            if t.n_obs() == 0 {
                return Err(Error::InvalidData(format!("task {j} has no observations")));
            }
            if kind == ProblemKind::BinaryClassification
                && t.y.iter().any(|&v| v != 1.0 && v != -1.0)
            {
                return Err(Error::InvalidData(format!(
                    "task {j}: classification labels must be -1 or +1"
                )));
            }
        }
        Ok(MultiTaskDataset { tasks, dim, kind })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn total_obs(&self) -> usize {
        self.tasks.iter().map(TaskData::n_obs).sum()
    }

    /// Same tasks in a different order; `order[j]` is the old index of new task `j`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let tasks = order
            .iter()
            .map(|&j| {
                self.tasks
                    .get(j)
                    .cloned()
                    .ok_or_else(|| Error::param(format!("task index {j} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        MultiTaskDataset::new(tasks, self.kind)
    }
}

/// `W = U V` with `U` (`D × K`) and `V` (`K × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl Factorization {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.ncols() != v.nrows() {
            return Err(Error::shape(format!(
                "U is {}x{} but V is {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(Factorization { u, v })
    }

    pub fn zeros(dim: usize, rank: usize, n_tasks: usize) -> Self {
        Factorization {
            u: Array2::zeros((dim, rank)),
            v: Array2::zeros((rank, n_tasks)),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.v.ncols()
    }

    /// The coefficient matrix `W = U V` (`D × T`).
    pub fn coefficients(&self) -> Array2<f64> {
        self.u.dot(&self.v)
    }

    fn check_against(&self, data: &MultiTaskDataset) -> Result<()> {
        if self.u.ncols() != self.v.nrows() {
            return Err(Error::shape("U columns differ from V rows"));
        }
        if self.dim() != data.dim() {
            return Err(Error::shape(format!(
                "model has {} variables, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        if self.n_tasks() != data.n_tasks() {
            return Err(Error::shape(format!(
                "model has {} tasks, data has {}",
                self.n_tasks(),
                data.n_tasks()
            )));
        }
        Ok(())
    }
}

/// Regularization weights, model size and solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Weight of `‖U‖₁`.
    pub gamma1: f64,
    /// Weight of `‖U‖_{1,∞}`.
    pub gamma2: f64,
    /// Weight of `Σ_j (‖v_j‖_k^sp)²`.
    pub mu: f64,
    /// Number of latent bases `K`.
    pub rank: usize,
    /// k-support parameter, `1 ≤ k ≤ K`.
    pub k: usize,
    /// ADMM penalty parameter.
    pub rho: f64,
    pub outer_tol: f64,
    pub admm_tol: f64,
    pub fista_tol: f64,
    pub outer_max_iter: usize,
    pub admm_max_iter: usize,
    pub fista_max_iter: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma1: 2f64.powi(-4),
            gamma2: 2f64.powi(-4),
            mu: 2f64.powi(-4),
            rank: 5,
            k: 1,
            rho: 2.0,
            outer_tol: 1e-4,
            admm_tol: 0.01,
            fista_tol: 1e-6,
            outer_max_iter: 50,
            admm_max_iter: 500,
            fista_max_iter: 1000,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("mu", self.mu),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.rank == 0 {
            return Err(Error::param("rank K must be >= 1"));
        }
        if self.k == 0 || self.k > self.rank {
            return Err(Error::param(format!(
                "k must lie in 1..={}, got {}",
                self.rank, self.k
            )));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("outer_tol", self.outer_tol),
            ("admm_tol", self.admm_tol),
            ("fista_tol", self.fista_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.outer_max_iter == 0 || self.admm_max_iter == 0 || self.fista_max_iter == 0 {
            return Err(Error::param("iteration caps must be positive"));
        }
        Ok(())
    }

    /// Ridge weight used for the per-task initialization: `√(γ₁² + γ₂² + μ²)`.
    pub fn init_ridge_weight(&self) -> f64 {
        (self.gamma1 * self.gamma1 + self.gamma2 * self.gamma2 + self.mu * self.mu).sqrt()
    }
}

/// Raw scores `X U v_j` for task `task`.
pub fn predict(fact: &Factorization, x: ArrayView2<f64>, task: usize) -> Result<Array1<f64>> {
    if x.ncols() != fact.dim() {
        return Err(Error::shape(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            fact.dim()
        )));
    }
    if fact.u.ncols() != fact.v.nrows() {
        return Err(Error::shape("U columns differ from V rows"));
    }
    if task >= fact.n_tasks() {
        return Err(Error::shape(format!(
            "task index {task} out of range for {} tasks",
            fact.n_tasks()
        )));
    }
    let w = fact.u.dot(&fact.v.column(task));
    Ok(x.dot(&w))
}

/// Maps a raw score to a `±1` label; a score of exactly zero maps to `+1`.
pub fn label_of(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(t))`.
pub(crate) fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Unscaled loss `L(y, s)` for a score vector.
pub fn loss(kind: ProblemKind, y: ArrayView1<f64>, scores: ArrayView1<f64>) -> f64 {
    match kind {
        ProblemKind::Regression => {
            0.5 * y
                .iter()
                .zip(scores.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
        ProblemKind::BinaryClassification => y
            .iter()
            .zip(scores.iter())
            .map(|(a, b)| softplus(-a * b))
            .sum(),
    }
}

/// Derivative of `L(y, s)` with respect to each score.
pub(crate) fn loss_score_grad(kind: ProblemKind, y: ArrayView1<f64>, scores: ArrayView1<f64>) -> Array1<f64> {
    match kind {
        ProblemKind::Regression => &scores - &y,
        ProblemKind::BinaryClassification => Array1::from_iter(
            y.iter()
                .zip(scores.iter())
                .map(|(a, b)| -a * sigmoid_neg(a * b)),
        ),
    }
}

/// Sum of per-task losses, each scaled by `1 / N_j`.
pub fn data_term(data: &MultiTaskDataset, fact: &Factorization) -> Result<f64> {
    fact.check_against(data)?;
    let w = fact.coefficients();
    Ok(data
        .tasks()
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let s = t.x.dot(&w.column(j));
            loss(data.kind(), t.y.view(), s.view()) / t.n_obs() as f64
        })
        .sum())
}

/// The regularized objective
/// `Σ_j (1/N_j) L(y_j, X_j U v_j) + γ₁‖U‖₁ + γ₂‖U‖_{1,∞} + μ Σ_j (‖v_j‖_k^sp)²`.
pub fn objective_value(
    data: &MultiTaskDataset,
    fact: &Factorization,
    hp: &HyperParams,
) -> Result<f64> {
    if fact.u.iter().chain(fact.v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite entry in factorization".into()));
    }
    if fact.rank() < hp.k || hp.k == 0 {
        return Err(Error::param(format!(
            "k = {} incompatible with rank {}",
            hp.k,
            fact.rank()
        )));
    }
    let loss = data_term(data, fact)?;
    let mut vpen = 0.0;
    for col in fact.v.columns() {
        let n = ksupport_norm(col, hp.k)?;
        vpen += n * n;
    }
    Ok(loss
        + hp.gamma1 * l1_norm(fact.u.view())
        + hp.gamma2 * l1_inf_norm(fact.u.view())
        + hp.mu * vpen)
}

/// `(1/N) L(y, A v)` and its gradient with respect to `v`.
pub fn loss_and_gradient_v(
    kind: ProblemKind,
    task: &TaskData,
    a: ArrayView2<f64>,
    v: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>)> {
    if a.nrows() != task.n_obs() {
        return Err(Error::shape(format!(
            "design has {} rows, task has {} observations",
            a.nrows(),
            task.n_obs()
        )));
    }
    if a.ncols() != v.len() {
        return Err(Error::shape(format!(
            "design has {} columns, v has length {}",
            a.ncols(),
            v.len()
        )));
    }
    let n = task.n_obs() as f64;
    let s = a.dot(&v);
    let value = loss(kind, task.y.view(), s.view()) / n;
    let g = a.t().dot(&loss_score_grad(kind, task.y.view(), s.view())) / n;
    Ok((value, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar_dataset(x: f64, y: f64, kind: ProblemKind) -> MultiTaskDataset {
        MultiTaskDataset::new(
            vec![TaskData::new(array![[x]], array![y]).unwrap()],
            kind,
        )
        .unwrap()
    }

    #[test]
    fn predict_identity_selects_first_coordinate() {
        let f = Factorization::new(Array2::eye(2), array![[1.0], [0.0]]).unwrap();
        let p = predict(&f, array![[3.0, 7.0]].view(), 0).unwrap();
        assert_eq!(p, array![3.0]);
    }

    #[test]
    fn predict_zero_u_is_zero() {
        let f = Factorization::new(Array2::zeros((3, 2)), array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 9.0]];
        assert_eq!(predict(&f, x.view(), 1).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn predict_scalar() {
        let f = Factorization::new(array![[2.0]], array![[3.0]]).unwrap();
        assert_eq!(predict(&f, array![[1.0]].view(), 0).unwrap(), array![6.0]);
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let f = Factorization::zeros(3, 2, 1);
        assert!(matches!(
            predict(&f, array![[1.0, 2.0]].view(), 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_labels_map_to_positive() {
        assert_eq!(label_of(0.0), 1.0);
        assert_eq!(label_of(-1e-300), -1.0);
    }

    #[test]
    fn objective_at_zero_is_half_mean_square() {
        let tasks = vec![
            TaskData::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, 2.0]).unwrap(),
            TaskData::new(array![[1.0, 1.0]], array![3.0]).unwrap(),
        ];
        let data = MultiTaskDataset::new(tasks, ProblemKind::Regression).unwrap();
        let f = Factorization::zeros(2, 2, 2);
        let hp = HyperParams {
            rank: 2,
            k: 2,
            gamma1: 1.0,
            gamma2: 1.0,
            mu: 1.0,
            ..Default::default()
        };
        let v = objective_value(&data, &f, &hp).unwrap();
        assert_abs_diff_eq!(v, 0.5 * 5.0 / 2.0 + 0.5 * 9.0, epsilon = 1e-15);
    }

    #[test]
    fn objective_exact_fit_without_penalty() {
        let data = scalar_dataset(1.0, 1.0, ProblemKind::Regression);
        let f = Factorization::new(array![[1.0]], array![[1.0]]).unwrap();
        let hp = HyperParams {
            gamma1: 0.0,
            gamma2: 0.0,
            mu: 0.0,
            rank: 1,
            k: 1,
            ..Default::default()
        };
        assert_eq!(objective_value(&data, &f, &hp).unwrap(), 0.0);
    }

    #[test]
    fn objective_unit_penalties() {
        let data = scalar_dataset(1.0, 1.0, ProblemKind::Regression);
        let f = Factorization::new(array![[1.0]], array![[1.0]]).unwrap();
        let hp = HyperParams {
            gamma1: 1.0,
            gamma2: 1.0,
            mu: 1.0,
            rank: 1,
            k: 1,
            ..Default::default()
        };
        assert_abs_diff_eq!(objective_value(&data, &f, &hp).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn objective_rejects_nan() {
        let data = scalar_dataset(1.0, 1.0, ProblemKind::Regression);
        let f = Factorization::new(array![[f64::NAN]], array![[1.0]]).unwrap();
        let hp = HyperParams {
            rank: 1,
            k: 1,
            ..Default::default()
        };
        assert!(matches!(
            objective_value(&data, &f, &hp),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn squared_loss_gradient_at_zero() {
        let task = TaskData::new(array![[1.0]], array![1.0]).unwrap();
        let (l, g) =
            loss_and_gradient_v(ProblemKind::Regression, &task, array![[1.0]].view(), array![0.0].view())
                .unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn squared_loss_gradient_vanishes_at_solution() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, -1.0];
        let task = TaskData::new(a.clone(), y.clone()).unwrap();
        // solve a v = y directly: det = 5
        let v = array![(3.0 * 1.0 - 1.0 * -1.0) / 5.0, (2.0 * -1.0 - 1.0 * 1.0) / 5.0];
        let (l, g) = loss_and_gradient_v(ProblemKind::Regression, &task, a.view(), v.view()).unwrap();
        assert!(l < 1e-30);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn logistic_loss_at_zero() {
        let a = array![[1.0, 2.0], [-1.0, 0.5], [0.3, 0.3]];
        let y = array![1.0, -1.0, 1.0];
        let task = TaskData::new(a.clone(), y.clone()).unwrap();
        let (l, g) = loss_and_gradient_v(
            ProblemKind::BinaryClassification,
            &task,
            a.view(),
            array![0.0, 0.0].view(),
        )
        .unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-15);
        let expect = a.t().dot(&y) * (-1.0 / 6.0);
        for (x, e) in g.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*x, *e, epsilon = 1e-15);
        }
    }

    #[test]
    fn classification_labels_are_validated() {
        let t = TaskData::new(array![[1.0]], array![0.0]).unwrap();
        assert!(MultiTaskDataset::new(vec![t], ProblemKind::BinaryClassification).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams {
            k: 6,
            rank: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            rho: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
