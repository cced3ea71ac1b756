//! Initialization, the alternating outer loop, and single-task baselines.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::admm::{admm_solve_u_from, u_objective, AdmmConfig, AdmmState, TaskMoments};
use crate::error::{Error, Result};
use crate::fista::{minimize_composite, update_all_v, FistaConfig, L1Penalty};
use crate::linalg::{minimize_newton, solve_spd, truncated_svd};
use crate::model::{
    loss, objective_value, sigmoid_neg, softplus, Factorization, HyperParams, MultiTaskDataset,
    ProblemKind, TaskData,
};

/// Per-run diagnostics of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective after initialization, then after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub admm_iters_per_outer: Vec<usize>,
    pub admm_converged: Vec<bool>,
    /// Whether the ADMM result replaced `U` (it is kept only if it does not
    /// raise the `U` objective).
    pub admm_accepted: Vec<bool>,
    pub fista_iters_per_outer: Vec<usize>,
    pub converged: bool,
    pub hyperparams: HyperParams,
    /// Wall-clock seconds. Not serialized, so saved reports are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, other: &FitReport) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        &a == other
    }
}

/// `argmin_w (1/N) L(y, X w) + lam ‖w‖²`.
pub fn ridge_init_coefficient(kind: ProblemKind, task: &TaskData, lam: f64) -> Result<Array1<f64>> {
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(Error::param(format!("ridge weight must be >= 0, got {lam}")));
    }
    let n = task.n_obs() as f64;
    let d = task.dim();
    match kind {
        ProblemKind::Regression => {
            let mut gram = task.x.t().dot(&task.x) / n;
            for i in 0..d {
                gram[[i, i]] += 2.0 * lam;
            }
            let rhs = task.x.t().dot(&task.y) / n;
            solve_spd(gram.view(), rhs.view()).map_err(|_| {
                Error::Numeric(
                    "normal equations are singular; use a positive ridge weight".into(),
                )
            })
        }
        ProblemKind::BinaryClassification => {
            let value = |w: ArrayView1<f64>| {
                let s = task.x.dot(&w);
                loss(kind, task.y.view(), s.view()) / n + lam * w.dot(&w)
            };
            let eval = |w: ArrayView1<f64>| {
                let s = task.x.dot(&w);
                let mut g = Array1::<f64>::zeros(d);
                let mut weights = Array1::<f64>::zeros(task.n_obs());
                let mut f = 0.0;
                for (i, (&si, &yi)) in s.iter().zip(task.y.iter()).enumerate() {
                    f += softplus(-yi * si);
                    let p = sigmoid_neg(yi * si);
                    g.scaled_add(-yi * p / n, &task.x.row(i));
                    weights[i] = p * (1.0 - p) / n;
                }
                let xw = &task.x * &weights.view().insert_axis(Axis(1));
                let mut h = task.x.t().dot(&xw);
                for i in 0..d {
                    h[[i, i]] += 2.0 * lam;
                }
                g.scaled_add(2.0 * lam, &w);
                (f / n + lam * w.dot(&w), g, h)
            };
            let out = minimize_newton(eval, value, Array1::zeros(d), 1e-8, 200).map_err(|_| {
                Error::Numeric(
                    "logistic ridge Hessian is singular; use a positive ridge weight".into(),
                )
            })?;
            if !out.converged {
                return Err(Error::Numeric(format!(
                    "logistic ridge stopped at gradient norm {:e}",
                    out.grad_norm
                )));
            }
            Ok(out.x)
        }
    }
}

/// Per-task ridge coefficients stacked as columns (`D × T`).
pub fn ridge_coefficients(data: &MultiTaskDataset, lam: f64) -> Result<Array2<f64>> {
    let mut w = Array2::zeros((data.dim(), data.n_tasks()));
    for (j, t) in data.tasks().iter().enumerate() {
        w.column_mut(j)
            .assign(&ridge_init_coefficient(data.kind(), t, lam)?);
    }
    Ok(w)
}

/// `U⁰ = P Σ^{1/2}`, `V⁰ = Σ^{1/2} Qᵀ` from the top-`K` SVD of the stacked
/// per-task ridge coefficients.
pub fn initialize(data: &MultiTaskDataset, hp: &HyperParams) -> Result<Factorization> {
    hp.validate()?;
    let w_init = ridge_coefficients(data, hp.init_ridge_weight())?;
    initialize_from_coefficients(&w_init, hp.rank)
}

/// The SVD step of [`initialize`] for a given coefficient matrix.
pub fn initialize_from_coefficients(w_init: &Array2<f64>, rank: usize) -> Result<Factorization> {
    let svd = truncated_svd(w_init.view(), rank)?;
    let root = svd.sigma.mapv(f64::sqrt);
    let u = &svd.left * &root.view().insert_axis(Axis(0));
    let v = (&svd.right * &root.view().insert_axis(Axis(0))).reversed_axes();
    Factorization::new(u, v)
}

/// Alternates ADMM on `U` and FISTA on `V` from the SVD initialization.
pub fn fit(data: &MultiTaskDataset, hp: &HyperParams) -> Result<(Factorization, FitReport)> {
    hp.validate()?;
    let init = initialize(data, hp)?;
    fit_from(data, hp, init)
}

/// [`fit`] from a caller-supplied starting factorization.
pub fn fit_from(
    data: &MultiTaskDataset,
    hp: &HyperParams,
    init: Factorization,
) -> Result<(Factorization, FitReport)> {
    hp.validate()?;
    if init.rank() != hp.rank {
        return Err(Error::shape(format!(
            "initial factorization has rank {}, hyperparameters ask for {}",
            init.rank(),
            hp.rank
        )));
    }
    let start = Instant::now();
    let moments = TaskMoments::new(data);
    let admm_cfg = AdmmConfig::from(hp);
    let fista_cfg = FistaConfig::from_hyperparams(hp);

    let Factorization { mut u, mut v } = init;
    let mut trace = vec![objective_value(data, &Factorization::new(u.clone(), v.clone())?, hp)?];
    let mut report = FitReport {
        objective_trace: Vec::new(),
        outer_iters: 0,
        admm_iters_per_outer: Vec::new(),
        admm_converged: Vec::new(),
        admm_accepted: Vec::new(),
        fista_iters_per_outer: Vec::new(),
        converged: false,
        hyperparams: *hp,
        wall_time: 0.0,
    };
    let mut admm_state = AdmmState::new(u.view());

    for _ in 0..hp.outer_max_iter {
        report.outer_iters += 1;
        let outcome = admm_solve_u_from(data, &moments, v.view(), admm_state, &admm_cfg)?;
        let current = u_objective(data, v.view(), u.view(), hp.gamma1, hp.gamma2);
        let proposed = u_objective(data, v.view(), outcome.u.view(), hp.gamma1, hp.gamma2);
        let accept = proposed <= current;
        if accept {
            u = outcome.u.clone();
        }
        report.admm_iters_per_outer.push(outcome.iterations);
        report.admm_converged.push(outcome.converged);
        report.admm_accepted.push(accept);
        admm_state = outcome.state;

        let vupd = update_all_v(data, u.view(), v.view(), hp.mu, hp.k, &fista_cfg)?;
        report
            .fista_iters_per_outer
            .push(vupd.iterations.iter().sum());
        v = vupd.v;

        let obj = objective_value(data, &Factorization::new(u.clone(), v.clone())?, hp)?;
        let prev = *trace.last().expect("nonempty");
        trace.push(obj);
        if (prev - obj).abs() <= hp.outer_tol * prev.abs().max(f64::MIN_POSITIVE) {
            report.converged = true;
            break;
        }
    }
    report.objective_trace = trace;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((Factorization::new(u, v)?, report))
}

/// Single-task `ℓ1`-regularized fit `argmin_w (1/N) L(y, X w) + lam ‖w‖₁`.
pub fn lasso_fit(kind: ProblemKind, task: &TaskData, lam: f64) -> Result<Array1<f64>> {
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(Error::param(format!("lasso weight must be >= 0, got {lam}")));
    }
    let cfg = FistaConfig {
        max_iter: 20_000,
        tol: 1e-8,
        ..Default::default()
    };
    let w0 = Array1::zeros(task.dim());
    let out = minimize_composite(kind, task, task.x.view(), w0.view(), &L1Penalty { lambda: lam }, &cfg)?;
    Ok(out.v)
}

/// Independent per-task baselines, for comparison with the joint model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Ridge,
    Lasso,
}

impl Baseline {
    /// Fits every task independently; columns of the result are the task coefficients.
    pub fn fit(self, data: &MultiTaskDataset, lam: f64) -> Result<Array2<f64>> {
        match self {
            Baseline::Ridge => ridge_coefficients(data, lam),
            Baseline::Lasso => {
                let mut w = Array2::zeros((data.dim(), data.n_tasks()));
                for (j, t) in data.tasks().iter().enumerate() {
                    w.column_mut(j).assign(&lasso_fit(data.kind(), t, lam)?);
                }
                Ok(w)
            }
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Baseline::Ridge => f.write_str("ridge"),
            Baseline::Lasso => f.write_str("lasso"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn ridge_scalar() {
        let t = TaskData::new(array![[1.0]], array![1.0]).unwrap();
        let w = ridge_init_coefficient(ProblemKind::Regression, &t, 1.0).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        let w = ridge_init_coefficient(ProblemKind::Regression, &t, 1e12).unwrap();
        assert!(w[0].abs() < 1e-11);
    }

    #[test]
    fn ridge_zero_weight_is_least_squares() {
        let t = TaskData::new(array![[2.0, 1.0], [1.0, 3.0], [0.0, 1.0]], array![1.0, -1.0, 0.5]).unwrap();
        let w = ridge_init_coefficient(ProblemKind::Regression, &t, 0.0).unwrap();
        let g = t.x.t().dot(&(t.x.dot(&w) - &t.y));
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn ridge_rank_deficient_needs_weight() {
        let t = TaskData::new(array![[1.0, 1.0], [2.0, 2.0]], array![1.0, 2.0]).unwrap();
        assert!(matches!(
            ridge_init_coefficient(ProblemKind::Regression, &t, 0.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn logistic_ridge_is_stationary() {
        let t = TaskData::new(
            array![[1.0, 0.5], [-1.0, 0.3], [0.2, -2.0], [0.7, 0.7]],
            array![1.0, -1.0, -1.0, 1.0],
        )
        .unwrap();
        let lam = 0.1;
        let w = ridge_init_coefficient(ProblemKind::BinaryClassification, &t, lam).unwrap();
        let s = t.x.dot(&w);
        let mut g = &w * (2.0 * lam);
        for i in 0..4 {
            let p = sigmoid_neg(t.y[i] * s[i]);
            g.scaled_add(-t.y[i] * p / 4.0, &t.x.row(i));
        }
        assert!(g.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn initialize_diagonal() {
        let w = array![[4.0, 0.0], [0.0, 1.0]];
        let f = initialize_from_coefficients(&w, 1).unwrap();
        assert_abs_diff_eq!(f.u[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.u[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.v[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.v[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn initialize_zero() {
        let f = initialize_from_coefficients(&Array2::zeros((3, 2)), 2).unwrap();
        assert!(f.u.iter().chain(f.v.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn initialize_full_rank_reconstructs() {
        let w = array![[1.0, 2.0, -1.0], [0.5, -0.3, 2.0]];
        let f = initialize_from_coefficients(&w, 2).unwrap();
        let rec = f.coefficients();
        for (a, b) in rec.iter().zip(w.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn lasso_large_weight_is_zero() {
        let t = TaskData::new(array![[1.0, 0.5], [0.2, 1.0], [-1.0, 0.3]], array![1.0, 2.0, -1.0]).unwrap();
        let bound = (t.x.t().dot(&t.y) / 3.0).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let w = lasso_fit(ProblemKind::Regression, &t, bound).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lasso_orthonormal_design_soft_thresholds() {
        // XᵀX / N = I with N = 2
        let s = 2f64.sqrt();
        let x = array![[s, 0.0], [0.0, s]] / s * s;
        let t = TaskData::new(x.clone(), array![3.0, -0.4]).unwrap();
        let lam = 0.5;
        let w = lasso_fit(ProblemKind::Regression, &t, lam).unwrap();
        let ls = x.t().dot(&t.y) / 2.0;
        for (a, b) in w.iter().zip(ls.iter()) {
            let expect = b.signum() * (b.abs() - lam).max(0.0);
            assert_abs_diff_eq!(*a, expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn lasso_zero_weight_matches_least_squares() {
        let t = TaskData::new(array![[2.0, 1.0], [1.0, 3.0], [0.0, 1.0]], array![1.0, -1.0, 0.5]).unwrap();
        let w = lasso_fit(ProblemKind::Regression, &t, 0.0).unwrap();
        let ls = ridge_init_coefficient(ProblemKind::Regression, &t, 0.0).unwrap();
        for (a, b) in w.iter().zip(ls.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-4);
        }
    }
}
