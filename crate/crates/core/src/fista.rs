//! Accelerated proximal gradient for the per-task `V` columns:
//!
//! `min_v (1/N_j) L(y_j, X_j U v) + μ (‖v‖_k^sp)²`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm_sq;
use crate::model::{loss, loss_and_gradient_v, HyperParams, MultiTaskDataset, ProblemKind, TaskData};
use crate::prox::{ksupport_norm, l1_norm, prox_l1, prox_sq_ksupport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaConfig {
    pub max_iter: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    /// Multiplier applied to the step size when the sufficient-decrease test fails.
    pub backtrack_factor: f64,
    /// Initial step size. `None` uses `N / σ_max(A)²` (squared loss) or
    /// `4N / σ_max(A)²` (logistic loss).
    pub initial_step: Option<f64>,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig {
            max_iter: 1000,
            tol: 1e-6,
            backtrack_factor: 0.5,
            initial_step: None,
        }
    }
}

impl FistaConfig {
    pub fn from_hyperparams(hp: &HyperParams) -> Self {
        FistaConfig {
            max_iter: hp.fista_max_iter,
            tol: hp.fista_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::param("FISTA max_iter must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("FISTA tolerance must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::param("backtrack factor must lie in (0, 1)"));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0) {
                return Err(Error::param("initial step must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ColumnOutcome {
    pub v: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nonsmooth part of a composite objective, handled through its prox.
pub trait Penalty {
    fn value(&self, v: ArrayView1<f64>) -> Result<f64>;
    /// `argmin_x ½‖x − v‖² + step · penalty(x)`.
    fn prox(&self, v: ArrayView1<f64>, step: f64) -> Result<Array1<f64>>;
}

/// `μ (‖v‖_k^sp)²`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredKSupport {
    pub mu: f64,
    pub k: usize,
}

impl Penalty for SquaredKSupport {
    fn value(&self, v: ArrayView1<f64>) -> Result<f64> {
        let n = ksupport_norm(v, self.k)?;
        Ok(self.mu * n * n)
    }

    fn prox(&self, v: ArrayView1<f64>, step: f64) -> Result<Array1<f64>> {
        prox_sq_ksupport(v, self.mu * step, self.k)
    }
}

/// `λ‖v‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct L1Penalty {
    pub lambda: f64,
}

impl Penalty for L1Penalty {
    fn value(&self, v: ArrayView1<f64>) -> Result<f64> {
        Ok(self.lambda * l1_norm(v))
    }

    fn prox(&self, v: ArrayView1<f64>, step: f64) -> Result<Array1<f64>> {
        prox_l1(v, self.lambda * step)
    }
}

/// Solves one column with monotone FISTA and backtracking, warm-started at `v_init`.
pub fn solve_v_column(
    kind: ProblemKind,
    task: &TaskData,
    u: ArrayView2<f64>,
    v_init: ArrayView1<f64>,
    mu: f64,
    k: usize,
    cfg: &FistaConfig,
) -> Result<ColumnOutcome> {
    cfg.validate()?;
    if !(mu >= 0.0) {
        return Err(Error::param(format!("mu must be >= 0, got {mu}")));
    }
    if task.dim() != u.nrows() {
        return Err(Error::shape(format!(
            "task has {} variables, U has {} rows",
            task.dim(),
            u.nrows()
        )));
    }
    if v_init.len() != u.ncols() {
        return Err(Error::shape("v_init length differs from U columns"));
    }
    let a = task.x.dot(&u);
    solve_with_design(kind, task, a.view(), v_init, mu, k, cfg)
}

/// Same as [`solve_v_column`] with the design `A = X_j U` already formed.
pub fn solve_with_design(
    kind: ProblemKind,
    task: &TaskData,
    a: ArrayView2<f64>,
    v_init: ArrayView1<f64>,
    mu: f64,
    k: usize,
    cfg: &FistaConfig,
) -> Result<ColumnOutcome> {
    minimize_composite(kind, task, a, v_init, &SquaredKSupport { mu, k }, cfg)
}

/// Monotone FISTA with backtracking for `(1/N) L(y, A v) + penalty(v)`.
pub fn minimize_composite<P: Penalty + ?Sized>(
    kind: ProblemKind,
    task: &TaskData,
    a: ArrayView2<f64>,
    v_init: ArrayView1<f64>,
    penalty: &P,
    cfg: &FistaConfig,
) -> Result<ColumnOutcome> {
    cfg.validate()?;
    if a.nrows() != task.n_obs() || a.ncols() != v_init.len() {
        return Err(Error::shape(format!(
            "design is {}x{}, task has {} observations and v has length {}",
            a.nrows(),
            a.ncols(),
            task.n_obs(),
            v_init.len()
        )));
    }
    let objective = |v: ArrayView1<f64>| -> Result<f64> { Ok(smooth_value(kind, task, a, v) + penalty.value(v)?) };
    let n = task.n_obs() as f64;
    let lipschitz = match cfg.initial_step {
        Some(s) => 1.0 / s,
        None => {
            let l = spectral_norm_sq(a) / n;
            match kind {
                ProblemKind::Regression => l,
                ProblemKind::BinaryClassification => l / 4.0,
            }
        }
    };
    // a zero design leaves only the penalty; any positive step works
    let mut lip = if lipschitz > 0.0 { lipschitz } else { 1.0 };

    let mut x = v_init.to_owned();
    let mut fx = objective(x.view())?;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (fy, gy) = loss_and_gradient_v(kind, task, a, y.view())?;
        let z = loop {
            let step = &y - &(&gy / lip);
            let z = penalty.prox(step.view(), 1.0 / lip)?;
            let diff = &z - &y;
            let fz = smooth_value(kind, task, a, z.view());
            let model = fy + gy.dot(&diff) + 0.5 * lip * diff.dot(&diff);
            if fz <= model + 1e-12 * fy.abs().max(1.0) || lip > 1e300 {
                break z;
            }
            lip /= cfg.backtrack_factor;
        };
        let fz = objective(z.view())?;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx {
            let change = fx - fz;
            let momentum = (t - 1.0) / t_next;
            y = &z + &((&z - &x) * momentum);
            x = z;
            fx = fz;
            t = t_next;
            if change <= cfg.tol * fx.abs().max(1e-300) || change == 0.0 {
                converged = true;
                break;
            }
        } else {
            // objective went up: drop the momentum and retry from x
            if y == x {
                converged = true;
                break;
            }
            y = x.clone();
            t = 1.0;
        }
    }
    Ok(ColumnOutcome {
        v: x,
        objective: fx,
        iterations,
        converged,
    })
}

fn smooth_value(kind: ProblemKind, task: &TaskData, a: ArrayView2<f64>, v: ArrayView1<f64>) -> f64 {
    let s = a.dot(&v);
    loss(kind, task.y.view(), s.view()) / task.n_obs() as f64
}

#[derive(Debug, Clone)]
pub struct VUpdate {
    pub v: Array2<f64>,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl VUpdate {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Updates every column of `V` independently, each warm-started from `v_init`.
pub fn update_all_v(
    data: &MultiTaskDataset,
    u: ArrayView2<f64>,
    v_init: ArrayView2<f64>,
    mu: f64,
    k: usize,
    cfg: &FistaConfig,
) -> Result<VUpdate> {
    if v_init.ncols() != data.n_tasks() || v_init.nrows() != u.ncols() {
        return Err(Error::shape(format!(
            "V is {}x{}, expected {}x{}",
            v_init.nrows(),
            v_init.ncols(),
            u.ncols(),
            data.n_tasks()
        )));
    }
    let outcomes = data
        .tasks()
        .par_iter()
        .enumerate()
        .map(|(j, task)| solve_v_column(data.kind(), task, u, v_init.column(j), mu, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut v = Array2::zeros(v_init.raw_dim());
    let mut objectives = Vec::with_capacity(outcomes.len());
    let mut iterations = Vec::with_capacity(outcomes.len());
    let mut converged = Vec::with_capacity(outcomes.len());
    for (j, o) in outcomes.into_iter().enumerate() {
        v.column_mut(j).assign(&o.v);
        objectives.push(o.objective);
        iterations.push(o.iterations);
        converged.push(o.converged);
    }
    Ok(VUpdate {
        v,
        objectives,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tight() -> FistaConfig {
        FistaConfig {
            max_iter: 20_000,
            tol: 1e-15,
            ..Default::default()
        }
    }

    #[test]
    fn unregularized_square_system() {
        let x = array![[2.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, -1.0];
        let task = TaskData::new(x, y).unwrap();
        let u = Array2::eye(2);
        let out = solve_v_column(
            ProblemKind::Regression,
            &task,
            u.view(),
            array![0.0, 0.0].view(),
            0.0,
            1,
            &tight(),
        )
        .unwrap();
        assert_abs_diff_eq!(out.v[0], 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(out.v[1], -0.6, epsilon = 1e-6);
    }

    #[test]
    fn scalar_ridge() {
        let task = TaskData::new(array![[1.0]], array![1.0]).unwrap();
        let out = solve_v_column(
            ProblemKind::Regression,
            &task,
            array![[1.0]].view(),
            array![0.0].view(),
            0.5,
            1,
            &tight(),
        )
        .unwrap();
        assert_abs_diff_eq!(out.v[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn heavy_penalty_drives_to_zero() {
        let task = TaskData::new(array![[1.0, 0.5], [0.2, 1.0], [1.0, 1.0]], array![1.0, 2.0, -1.0]).unwrap();
        let out = solve_v_column(
            ProblemKind::Regression,
            &task,
            Array2::eye(2).view(),
            array![1.0, 1.0].view(),
            1e8,
            2,
            &FistaConfig::default(),
        )
        .unwrap();
        assert!(out.v.iter().all(|x| x.abs() < 1e-6));
        assert_abs_diff_eq!(out.objective, (1.0 + 4.0 + 1.0) / 6.0, epsilon = 1e-5);
    }

    #[test]
    fn objective_never_exceeds_start() {
        let task = TaskData::new(
            array![[1.0, 0.5, -0.3], [0.2, 1.0, 0.0], [1.0, 1.0, 2.0], [0.0, -1.0, 1.0]],
            array![1.0, 2.0, -1.0, 0.5],
        )
        .unwrap();
        let u = array![[1.0, 0.0], [0.5, 1.0], [0.0, -1.0]];
        let v0 = array![0.3, -0.2];
        let a = task.x.dot(&u);
        let f0 = smooth_value(ProblemKind::Regression, &task, a.view(), v0.view())
            + SquaredKSupport { mu: 0.1, k: 1 }.value(v0.view()).unwrap();
        let out = solve_v_column(ProblemKind::Regression, &task, u.view(), v0.view(), 0.1, 1, &FistaConfig::default())
            .unwrap();
        assert!(out.objective <= f0);
    }

    #[test]
    fn rejects_bad_config() {
        let task = TaskData::new(array![[1.0]], array![1.0]).unwrap();
        let cfg = FistaConfig {
            backtrack_factor: 1.5,
            ..Default::default()
        };
        assert!(solve_v_column(
            ProblemKind::Regression,
            &task,
            array![[1.0]].view(),
            array![0.0].view(),
            0.1,
            1,
            &cfg
        )
        .is_err());
    }
}
