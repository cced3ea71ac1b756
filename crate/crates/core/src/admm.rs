//! ADMM for the `U` subproblem with `V` fixed:
//!
//! `min_U Σ_j (1/N_j) L(y_j, X_j U v_j) + γ₁‖U‖₁ + γ₂‖U‖_{1,∞}`
//!
//! split as `U = Z₁ = Z₂ = Z₃`, with `Z₁` carrying the loss, `Z₂` the `ℓ1`
//! penalty and `Z₃` the `ℓ1,∞` penalty. Multipliers are scaled.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, minimize_newton, Cholesky};
use crate::model::{loss, loss_score_grad, sigmoid_neg, MultiTaskDataset, ProblemKind};
use crate::prox::{l1_inf_norm, l1_norm, prox_l1, prox_l1_inf_rows};

/// Above this many unknowns the `Z₁` system is solved matrix-free by
/// conjugate gradients instead of a cached dense Cholesky factor.
pub const DENSE_SYSTEM_LIMIT: usize = 2000;

/// Primal, auxiliary and scaled dual variables of the `U` splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub u: Array2<f64>,
    /// Loss block.
    pub z1: Array2<f64>,
    /// `ℓ1` block.
    pub z2: Array2<f64>,
    /// `ℓ1,∞` block.
    pub z3: Array2<f64>,
    pub l1: Array2<f64>,
    pub l2: Array2<f64>,
    pub l3: Array2<f64>,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iter: usize,
}

impl AdmmState {
    /// Consensus start: every block equals `u`, multipliers zero.
    pub fn new(u: ArrayView2<f64>) -> Self {
        let zeros = Array2::zeros(u.raw_dim());
        AdmmState {
            u: u.to_owned(),
            z1: u.to_owned(),
            z2: u.to_owned(),
            z3: u.to_owned(),
            l1: zeros.clone(),
            l2: zeros.clone(),
            l3: zeros,
            primal_res: 0.0,
            dual_res: 0.0,
            iter: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.dim()
    }

    fn check_shapes(&self) -> Result<()> {
        let s = self.u.raw_dim();
        let all = [
            &self.z1, &self.z2, &self.z3, &self.l1, &self.l2, &self.l3,
        ];
        if all.iter().any(|m| m.raw_dim() != s) {
            return Err(Error::shape("ADMM state blocks differ in shape"));
        }
        Ok(())
    }
}

/// `U ← (1/3) Σ_h (Z_h − Λ_h)`.
pub fn update_u(state: &AdmmState) -> Array2<f64> {
    let mut u = &state.z1 - &state.l1;
    u += &state.z2;
    u -= &state.l2;
    u += &state.z3;
    u -= &state.l3;
    u / 3.0
}

/// `Z₂ ← prox_{(γ₁/ρ)‖·‖₁}(U⁺ + Λ₂)`.
pub fn update_z2(
    u_plus: ArrayView2<f64>,
    l2: ArrayView2<f64>,
    gamma1: f64,
    rho: f64,
) -> Result<Array2<f64>> {
    prox_l1((&u_plus + &l2).view(), gamma1 / rho)
}

/// `Z₃ ← prox_{(γ₂/ρ)‖·‖_{1,∞}}(U⁺ + Λ₃)`.
pub fn update_z3(
    u_plus: ArrayView2<f64>,
    l3: ArrayView2<f64>,
    gamma2: f64,
    rho: f64,
) -> Result<Array2<f64>> {
    prox_l1_inf_rows((&u_plus + &l3).view(), gamma2 / rho)
}

/// `Λ_h ← Λ_h + U − Z_h` for the three blocks, in place.
pub fn update_multipliers(state: &mut AdmmState) {
    let AdmmState {
        u, z1, z2, z3, l1, l2, l3, ..
    } = state;
    for (l, z) in [(l1, &*z1), (l2, &*z2), (l3, &*z3)] {
        Zip::from(l).and(&*u).and(z).for_each(|l, &u, &z| *l += u - z);
    }
}

/// Primal residual `‖[U−Z₁; U−Z₂; U−Z₃]‖_F` and dual residual
/// `ρ‖Σ_h (Z_h − Z_h^prev)‖_F`.
pub fn residuals(state: &AdmmState, prev_z: [&Array2<f64>; 3], rho: f64) -> (f64, f64) {
    let mut primal = 0.0;
    for z in [&state.z1, &state.z2, &state.z3] {
        Zip::from(&state.u).and(z).for_each(|&u, &z| {
            primal += (u - z) * (u - z);
        });
    }
    let mut delta = &state.z1 - prev_z[0];
    delta += &state.z2;
    delta -= prev_z[1];
    delta += &state.z3;
    delta -= prev_z[2];
    (primal.sqrt(), rho * frobenius(delta.view()))
}

/// Per-task second moments `X_jᵀX_j / N_j` and `X_jᵀy_j / N_j`; they do not
/// change during a fit.
#[derive(Debug, Clone)]
pub struct TaskMoments {
    pub grams: Vec<Array2<f64>>,
    pub cross: Vec<Array1<f64>>,
}

impl TaskMoments {
    pub fn new(data: &MultiTaskDataset) -> Self {
        let (grams, cross) = data
            .tasks()
            .iter()
            .map(|t| {
                let n = t.n_obs() as f64;
                (t.x.t().dot(&t.x) / n, t.x.t().dot(&t.y) / n)
            })
            .unzip();
        TaskMoments { grams, cross }
    }

    pub fn dim(&self) -> usize {
        self.grams.first().map_or(0, |g| g.nrows())
    }
}

#[derive(Debug, Clone)]
enum SystemSolver {
    Dense(Cholesky),
    Iterative,
}

/// The regression `Z₁` system
/// `[Σ_j (1/N_j) v_j v_jᵀ ⊗ X_jᵀX_j + ρI] vec(Z₁) = vec(C) + ρ vec(U⁺ + Λ₁)`
/// with `C = Σ_j (1/N_j) X_jᵀ y_j v_jᵀ`, factored once per `V`.
#[derive(Debug, Clone)]
pub struct KroneckerSystem<'a> {
    moments: &'a TaskMoments,
    v: Array2<f64>,
    rho: f64,
    cross_term: Array2<f64>,
    solver: SystemSolver,
}

impl<'a> KroneckerSystem<'a> {
    pub fn new(moments: &'a TaskMoments, v: ArrayView2<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::param(format!("rho must be > 0, got {rho}")));
        }
        if v.ncols() != moments.grams.len() {
            return Err(Error::shape(format!(
                "V has {} columns for {} tasks",
                v.ncols(),
                moments.grams.len()
            )));
        }
        let d = moments.dim();
        let k = v.nrows();
        let mut cross_term = Array2::<f64>::zeros((d, k));
        for (j, c) in moments.cross.iter().enumerate() {
            for r in 0..k {
                let vr = v[[r, j]];
                if vr != 0.0 {
                    cross_term.column_mut(r).scaled_add(vr, c);
                }
            }
        }
        let solver = if d * k <= DENSE_SYSTEM_LIMIT {
            SystemSolver::Dense(Cholesky::factor(
                Self::assemble(moments, v, rho).view(),
            )?)
        } else {
            SystemSolver::Iterative
        };
        Ok(KroneckerSystem {
            moments,
            v: v.to_owned(),
            rho,
            cross_term,
            solver,
        })
    }

    /// Dense system matrix; unknowns ordered column-major (`vec`).
    pub fn assemble(moments: &TaskMoments, v: ArrayView2<f64>, rho: f64) -> Array2<f64> {
        let d = moments.dim();
        let k = v.nrows();
        let mut m = Array2::<f64>::zeros((d * k, d * k));
        let mut block = Array2::<f64>::zeros((d, d));
        for r in 0..k {
            for s in 0..=r {
                block.fill(0.0);
                for (j, g) in moments.grams.iter().enumerate() {
                    let w = v[[r, j]] * v[[s, j]];
                    if w != 0.0 {
                        block.scaled_add(w, g);
                    }
                }
                m.slice_mut(ndarray::s![r * d..(r + 1) * d, s * d..(s + 1) * d])
                    .assign(&block);
                if r != s {
                    m.slice_mut(ndarray::s![s * d..(s + 1) * d, r * d..(r + 1) * d])
                        .assign(&block.t());
                }
            }
        }
        for i in 0..d * k {
            m[[i, i]] += rho;
        }
        m
    }

    fn rhs(&self, u_plus: ArrayView2<f64>, l1: ArrayView2<f64>) -> Array2<f64> {
        let mut b = &u_plus + &l1;
        b *= self.rho;
        b += &self.cross_term;
        b
    }

    /// Applies the system operator to `z` without forming it.
    fn apply(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut out = &z * self.rho;
        for (j, g) in self.moments.grams.iter().enumerate() {
            let vj = self.v.column(j);
            let gz = g.dot(&z.dot(&vj));
            for r in 0..vj.len() {
                if vj[r] != 0.0 {
                    out.column_mut(r).scaled_add(vj[r], &gz);
                }
            }
        }
        out
    }

    pub fn solve(&self, u_plus: ArrayView2<f64>, l1: ArrayView2<f64>) -> Array2<f64> {
        let b = self.rhs(u_plus, l1);
        match &self.solver {
            SystemSolver::Dense(chol) => {
                let x = chol.solve(vec_col_major(b.view()).view());
                unvec_col_major(x.view(), b.nrows(), b.ncols())
            }
            SystemSolver::Iterative => self.conjugate_gradient(b.view(), (&u_plus + &l1).view()),
        }
    }

    fn conjugate_gradient(&self, b: ArrayView2<f64>, x0: ArrayView2<f64>) -> Array2<f64> {
        let mut x = x0.to_owned();
        let mut r = &b - &self.apply(x.view());
        let mut p = r.clone();
        let mut rs = r.iter().map(|v| v * v).sum::<f64>();
        let bnorm = frobenius(b).max(f64::MIN_POSITIVE);
        for _ in 0..10 * b.len() {
            if rs.sqrt() <= 1e-12 * bnorm {
                break;
            }
            let ap = self.apply(p.view());
            let alpha = rs / (&p * &ap).sum();
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &ap);
            let rs_new = r.iter().map(|v| v * v).sum::<f64>();
            p = &r + &(&p * (rs_new / rs));
            rs = rs_new;
        }
        x
    }

    /// `‖M vec(z) − b‖ / ‖b‖` for the right-hand side built from `u_plus`, `l1`.
    pub fn relative_residual(
        &self,
        z: ArrayView2<f64>,
        u_plus: ArrayView2<f64>,
        l1: ArrayView2<f64>,
    ) -> f64 {
        let b = self.rhs(u_plus, l1);
        let r = &self.apply(z) - &b;
        frobenius(r.view()) / frobenius(b.view()).max(f64::MIN_POSITIVE)
    }

    /// Smallest Cholesky pivot, when the dense path is used.
    pub fn min_pivot(&self) -> Option<f64> {
        match &self.solver {
            SystemSolver::Dense(c) => Some(c.min_pivot()),
            SystemSolver::Iterative => None,
        }
    }
}

pub(crate) fn vec_col_major(a: ArrayView2<f64>) -> Array1<f64> {
    a.t().iter().copied().collect()
}

pub(crate) fn unvec_col_major(x: ArrayView1<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, r)| x[r * rows + i])
}

/// Regression `Z₁` update solved exactly (system assembled and factored on
/// each call; [`admm_solve_u`] caches the factor instead).
pub fn update_z1_regression(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    u_plus: ArrayView2<f64>,
    l1: ArrayView2<f64>,
    rho: f64,
) -> Result<Array2<f64>> {
    if data.kind() != ProblemKind::Regression {
        return Err(Error::param("closed-form Z1 update needs a regression problem"));
    }
    let moments = TaskMoments::new(data);
    Ok(KroneckerSystem::new(&moments, v, rho)?.solve(u_plus, l1))
}

/// Result of the logistic `Z₁` update.
#[derive(Debug, Clone)]
pub struct LogisticZ1 {
    pub z: Array2<f64>,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Objective and gradient of the `Z₁` subproblem
/// `Σ_j (1/N_j) L(y_j, X_j Z v_j) + (ρ/2)‖Z − (U⁺ + Λ₁)‖²` for the
/// dataset's loss.
pub fn z1_objective(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    z: ArrayView2<f64>,
    center: ArrayView2<f64>,
    rho: f64,
) -> (f64, Array2<f64>) {
    let mut value = 0.0;
    let mut grad = (&z - &center) * rho;
    value += 0.5 * rho * (&z - &center).iter().map(|x| x * x).sum::<f64>();
    for (j, t) in data.tasks().iter().enumerate() {
        let n = t.n_obs() as f64;
        let vj = v.column(j);
        let s = t.x.dot(&z.dot(&vj));
        value += loss(data.kind(), t.y.view(), s.view()) / n;
        let g = t.x.t().dot(&loss_score_grad(data.kind(), t.y.view(), s.view())) / n;
        for r in 0..vj.len() {
            if vj[r] != 0.0 {
                grad.column_mut(r).scaled_add(vj[r], &g);
            }
        }
    }
    (value, grad)
}

/// Logistic `Z₁` update by damped Newton to gradient norm `tol`.
pub fn update_z1_logistic(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    u_plus: ArrayView2<f64>,
    l1: ArrayView2<f64>,
    rho: f64,
    tol: f64,
) -> Result<LogisticZ1> {
    let center = &u_plus + &l1;
    update_z1_logistic_from(data, v, center.view(), center.view(), rho, tol)
}

fn update_z1_logistic_from(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    center: ArrayView2<f64>,
    start: ArrayView2<f64>,
    rho: f64,
    tol: f64,
) -> Result<LogisticZ1> {
    if data.kind() != ProblemKind::BinaryClassification {
        return Err(Error::param("logistic Z1 update needs a classification problem"));
    }
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be > 0, got {rho}")));
    }
    let (d, k) = center.dim();
    let value = |x: ArrayView1<f64>| {
        let z = unvec_col_major(x, d, k);
        z1_objective(data, v, z.view(), center, rho).0
    };
    let eval = |x: ArrayView1<f64>| {
        let z = unvec_col_major(x, d, k);
        let (f, g) = z1_objective(data, v, z.view(), center, rho);
        let h = logistic_z1_hessian(data, v, z.view(), rho);
        (f, vec_col_major(g.view()), h)
    };
    let out = minimize_newton(eval, value, vec_col_major(start), tol, 100)?;
    if !out.converged {
        log::warn!(
            "logistic Z1 update stopped at gradient norm {:e} (tolerance {tol:e})",
            out.grad_norm
        );
    }
    Ok(LogisticZ1 {
        z: unvec_col_major(out.x.view(), d, k),
        grad_norm: out.grad_norm,
        converged: out.converged,
    })
}

fn logistic_z1_hessian(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    z: ArrayView2<f64>,
    rho: f64,
) -> Array2<f64> {
    let (d, k) = z.dim();
    let mut h = Array2::<f64>::zeros((d * k, d * k));
    let mut weighted_grams = Vec::with_capacity(data.n_tasks());
    for (j, t) in data.tasks().iter().enumerate() {
        let n = t.n_obs() as f64;
        let s = t.x.dot(&z.dot(&v.column(j)));
        let w = Array1::from_iter(s.iter().zip(t.y.iter()).map(|(&s, &y)| {
            let p = sigmoid_neg(y * s);
            p * (1.0 - p) / n
        }));
        let xw = &t.x * &w.view().insert_axis(ndarray::Axis(1));
        weighted_grams.push(t.x.t().dot(&xw));
    }
    for r in 0..k {
        for s in 0..=r {
            let mut block = Array2::<f64>::zeros((d, d));
            for (j, g) in weighted_grams.iter().enumerate() {
                let w = v[[r, j]] * v[[s, j]];
                if w != 0.0 {
                    block.scaled_add(w, g);
                }
            }
            h.slice_mut(ndarray::s![r * d..(r + 1) * d, s * d..(s + 1) * d])
                .assign(&block);
            if r != s {
                h.slice_mut(ndarray::s![s * d..(s + 1) * d, r * d..(r + 1) * d])
                    .assign(&block.t());
            }
        }
    }
    for i in 0..d * k {
        h[[i, i]] += rho;
    }
    h
}

/// The `U` subproblem objective
/// `Σ_j (1/N_j) L(y_j, X_j U v_j) + γ₁‖U‖₁ + γ₂‖U‖_{1,∞}`.
pub fn u_objective(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    u: ArrayView2<f64>,
    gamma1: f64,
    gamma2: f64,
) -> f64 {
    let w = u.dot(&v);
    let fit: f64 = data
        .tasks()
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let s = t.x.dot(&w.column(j));
            loss(data.kind(), t.y.view(), s.view()) / t.n_obs() as f64
        })
        .sum();
    fit + gamma1 * l1_norm(u) + gamma2 * l1_inf_norm(u)
}

/// Settings for [`admm_solve_u`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub rho: f64,
    /// Threshold on both residual norms.
    pub tol: f64,
    pub max_iter: usize,
    /// Gradient tolerance of the logistic `Z₁` solve.
    pub inner_tol: f64,
}

impl From<&crate::model::HyperParams> for AdmmConfig {
    fn from(hp: &crate::model::HyperParams) -> Self {
        AdmmConfig {
            gamma1: hp.gamma1,
            gamma2: hp.gamma2,
            rho: hp.rho,
            tol: hp.admm_tol,
            max_iter: hp.admm_max_iter,
            inner_tol: 1e-6,
        }
    }
}

/// Output of [`admm_solve_u`].
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// The `ℓ1` block `Z₂`; its zeros are exact.
    pub u: Array2<f64>,
    pub state: AdmmState,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs ADMM from the consensus point `U = Z_h = u_init`, `Λ = 0`.
pub fn admm_solve_u(
    data: &MultiTaskDataset,
    v: ArrayView2<f64>,
    u_init: ArrayView2<f64>,
    cfg: &AdmmConfig,
) -> Result<AdmmOutcome> {
    let moments = TaskMoments::new(data);
    admm_solve_u_from(data, &moments, v, AdmmState::new(u_init), cfg)
}

/// Runs ADMM from an arbitrary state (e.g. a previous run's final state).
pub fn admm_solve_u_from(
    data: &MultiTaskDataset,
    moments: &TaskMoments,
    v: ArrayView2<f64>,
    mut state: AdmmState,
    cfg: &AdmmConfig,
) -> Result<AdmmOutcome> {
    state.check_shapes()?;
    let (d, k) = state.shape();
    if d != data.dim() || v.nrows() != k || v.ncols() != data.n_tasks() {
        return Err(Error::shape(format!(
            "U is {d}x{k}, V is {}x{}, data has D={} and T={}",
            v.nrows(),
            v.ncols(),
            data.dim(),
            data.n_tasks()
        )));
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::param(format!("rho must be > 0, got {}", cfg.rho)));
    }
    let system = match data.kind() {
        ProblemKind::Regression => Some(KroneckerSystem::new(moments, v, cfg.rho)?),
        ProblemKind::BinaryClassification => None,
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        state.u = update_u(&state);
        let z1 = match &system {
            Some(sys) => sys.solve(state.u.view(), state.l1.view()),
            None => {
                let center = &state.u + &state.l1;
                update_z1_logistic_from(
                    data,
                    v,
                    center.view(),
                    state.z1.view(),
                    cfg.rho,
                    cfg.inner_tol,
                )?
                .z
            }
        };
        let z2 = update_z2(state.u.view(), state.l2.view(), cfg.gamma1, cfg.rho)?;
        let z3 = update_z3(state.u.view(), state.l3.view(), cfg.gamma2, cfg.rho)?;
        let prev = [
            std::mem::replace(&mut state.z1, z1),
            std::mem::replace(&mut state.z2, z2),
            std::mem::replace(&mut state.z3, z3),
        ];
        update_multipliers(&mut state);
        let (p, s) = residuals(&state, [&prev[0], &prev[1], &prev[2]], cfg.rho);
        state.primal_res = p;
        state.dual_res = s;
        state.iter += 1;
        if !(p.is_finite() && s.is_finite()) {
            return Err(Error::Numeric("ADMM residuals became non-finite".into()));
        }
        if p <= cfg.tol && s <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!(
            "ADMM hit {} iterations (primal {:e}, dual {:e})",
            cfg.max_iter,
            state.primal_res,
            state.dual_res
        );
    }
    Ok(AdmmOutcome {
        u: state.z2.clone(),
        state,
        iterations,
        converged,
    })
}
