//! Dense linear algebra helpers.
//!
//! Matrices are row-major `ndarray` arrays. Cholesky factorization is done
//! in place here; spectral routines (SVD, symmetric eigenvalues) go through
//! `nalgebra` and are converted at the boundary.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        // pivots this far below the original diagonal are rounding noise
        let floor = f64::EPSILON * n as f64;
        for j in 0..n {
            let mut diag = a[[j, j]];
            for p in 0..j {
                diag -= l[[j, p]] * l[[j, p]];
            }
            if !(diag > floor * a[[j, j]].abs()) || !diag.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for p in 0..j {
                    s -= l[[i, p]] * l[[j, p]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Smallest diagonal entry of `L`.
    pub fn min_pivot(&self) -> f64 {
        self.lower
            .diag()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length");
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for p in 0..i {
                s -= l[[i, p]] * y[p];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in (i + 1)..n {
                s -= l[[p, i]] * y[p];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(Cholesky::factor(a)?.solve(b))
}

pub(crate) fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max_sym(a: ArrayView2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let eig = to_nalgebra(a).symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Squared largest singular value of `a`, i.e. `λ_max(aᵀa)`.
pub fn spectral_norm_sq(a: ArrayView2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = if a.ncols() <= a.nrows() {
        a.t().dot(&a)
    } else {
        a.dot(&a.t())
    };
    lambda_max_sym(gram.view()).max(0.0)
}

/// Rank-`k` truncated singular value decomposition `a ≈ P diag(σ) Qᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Left singular vectors, `m × k`.
    pub left: Array2<f64>,
    /// Singular values, descending, length `k`.
    pub sigma: Array1<f64>,
    /// Right singular vectors, `n × k`.
    pub right: Array2<f64>,
}

impl TruncatedSvd {
    /// Best rank-`k` approximation `P diag(σ) Qᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.left * &self.sigma.view().insert_axis(Axis(0));
        scaled.dot(&self.right.t())
    }
}

/// Top-`k` singular triples of `a`, singular values descending.
///
/// When `k` exceeds `min(m, n)` the extra columns of `P` and `Q` are zero
/// and the extra singular values are zero. Each pair is signed so that the
/// largest-magnitude entry of the left vector is positive.
pub fn truncated_svd(a: ArrayView2<f64>, k: usize) -> Result<TruncatedSvd> {
    let (m, n) = a.dim();
    let mut left = Array2::<f64>::zeros((m, k));
    let mut right = Array2::<f64>::zeros((n, k));
    let mut sigma = Array1::<f64>::zeros(k);
    if m == 0 || n == 0 || k == 0 {
        return Ok(TruncatedSvd { left, sigma, right });
    }
    let svd = to_nalgebra(a)
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let avail = svd.singular_values.len().min(k);
    for r in 0..avail {
        let s = svd.singular_values[r];
        let mut pivot = 0usize;
        for i in 0..m {
            if u[(i, r)].abs() > u[(pivot, r)].abs() {
                pivot = i;
            }
        }
        let sign = if u[(pivot, r)] < 0.0 { -1.0 } else { 1.0 };
        sigma[r] = s;
        for i in 0..m {
            left[[i, r]] = sign * u[(i, r)];
        }
        for j in 0..n {
            right[[j, r]] = sign * v_t[(r, j)];
        }
    }
    Ok(TruncatedSvd { left, sigma, right })
}

/// Result of a damped Newton minimization.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Array1<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes a smooth, strongly convex function by Newton steps with an
/// Armijo backtracking line search.
///
/// `eval` returns the value, gradient and Hessian at a point; `value` is
/// the cheaper value-only evaluation used by the line search.
pub fn minimize_newton(
    eval: impl Fn(ArrayView1<f64>) -> (f64, Array1<f64>, Array2<f64>),
    value: impl Fn(ArrayView1<f64>) -> f64,
    x0: Array1<f64>,
    grad_tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let mut x = x0;
    let (mut f, mut g, mut h) = eval(x.view());
    let mut gnorm = norm2(g.view());
    let mut iterations = 0;
    while gnorm > grad_tol && iterations < max_iter {
        iterations += 1;
        let step = solve_spd(h.view(), g.view())?;
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x - &(&step * t);
            let ft = value(trial.view());
            if ft <= f + 1e-4 * t * slope {
                x = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no sufficient decrease at machine precision; take the full step
            // only if it does not increase the value
            let trial = &x - &step;
            if value(trial.view()) <= f {
                x = trial;
            } else {
                break;
            }
        }
        (f, g, h) = eval(x.view());
        gnorm = norm2(g.view());
    }
    Ok(NewtonOutcome {
        converged: gnorm <= grad_tol,
        x,
        value: f,
        grad_norm: gnorm,
        iterations,
    })
}

pub fn norm2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_solves_small_system() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let x = solve_spd(a.view(), b.view()).unwrap();
        let r = a.dot(&x) - &b;
        assert!(norm2(r.view()) < 1e-13);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            Cholesky::factor(a.view()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn svd_of_diagonal() {
        let a = array![[4.0, 0.0], [0.0, 1.0]];
        let svd = truncated_svd(a.view(), 1).unwrap();
        assert_abs_diff_eq!(svd.sigma[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(svd.left[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(svd.right[[0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_pads_when_rank_is_short() {
        let a = array![[1.0, 2.0, 3.0]];
        let svd = truncated_svd(a.view(), 3).unwrap();
        assert_eq!(svd.left.dim(), (1, 3));
        assert_eq!(svd.right.dim(), (3, 3));
        assert_eq!(svd.sigma[1], 0.0);
        assert_eq!(svd.sigma[2], 0.0);
        let rec = svd.reconstruct();
        for (x, y) in rec.iter().zip(a.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = array![[1.0, 2.0], [3.0, 4.0], [0.5, -1.0]];
        let svd = truncated_svd(a.view(), 1).unwrap();
        assert_abs_diff_eq!(
            spectral_norm_sq(a.view()),
            svd.sigma[0] * svd.sigma[0],
            epsilon = 1e-10
        );
    }
}
