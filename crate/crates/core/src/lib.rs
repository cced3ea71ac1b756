//! Multi-task regression and classification with a sparse low-rank
//! coefficient matrix `W = U V`.
//!
//! `U` (variables × latent bases) carries `ℓ1` and `ℓ1,∞` penalties so that
//! irrelevant variables drop out of every task; each column of `V` carries a
//! squared k-support penalty so tasks form overlapping groups over the
//! latent bases. `U` is updated by ADMM and `V` by accelerated proximal
//! gradient, alternating until the objective settles.

pub mod admm;
pub mod error;
pub mod eval;
pub mod fista;
pub mod io;
pub mod linalg;
pub mod model;
pub mod prox;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    label_of, loss_and_gradient_v, objective_value, predict, Factorization, HyperParams,
    MultiTaskDataset, ProblemKind, TaskData,
};
pub use trainer::{fit, fit_from, initialize, lasso_fit, ridge_init_coefficient, Baseline, FitReport};
pub use eval::{
    error_rate, evaluate, grid_search, ree, risk_bound_terms, rmse, Evaluation, GridResult,
    GridSpec, RiskBoundTerms, Selection,
};
pub use synthetic::{family_group_structure, generate, SynFamily, SynSpec, SyntheticData};
