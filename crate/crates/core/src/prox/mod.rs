//! Norms and proximal operators: `ℓ1`, row-wise `ℓ∞` (the `ℓ1,∞` norm)
//! and the squared k-support norm.

use ndarray::{Array, Array1, Array2, ArrayView, ArrayView1, ArrayView2, Dimension};

use crate::error::{Error, Result};

pub mod oracle;

pub use oracle::numeric_prox_oracle;

/// Absolute tolerance for breakpoint comparisons.
const TIE_TOL: f64 = 1e-12;

pub fn l1_norm<D: Dimension>(a: ArrayView<f64, D>) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// `Σ_i ‖uⁱ‖_∞` over the rows of `a`.
pub fn l1_inf_norm(a: ArrayView2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .sum()
}

fn check_k(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(Error::param(format!(
            "k-support parameter must lie in 1..={dim}, got {k}"
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!(
            "proximal weight must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Sorted magnitudes and the split index of the k-support norm closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct KSupportDecomposition {
    /// Split index in `0..k`: the largest `k − p − 1` magnitudes are kept
    /// individually, the rest are pooled.
    pub p: usize,
    /// `|w|` sorted in descending order.
    pub sorted_abs: Vec<f64>,
    pub norm_value: f64,
}

/// Computes the k-support norm of `w` together with its split index.
///
/// With `z = |w|↓` and `z₀ = +∞`, `p` is the smallest integer in `0..k`
/// with `z_{k−p−1} ≥ (1/(p+1)) Σ_{l≥k−p} z_l ≥ z_{k−p}` and
/// `‖w‖² = Σ_{l<k−p} z_l² + (1/(p+1)) (Σ_{l≥k−p} z_l)²`.
pub fn ksupport_decompose(w: ArrayView1<f64>, k: usize) -> Result<KSupportDecomposition> {
    let dim = w.len();
    check_k(k, dim)?;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("non-finite entry in k-support argument".into()));
    }
    let mut z: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    z.sort_by(|a, b| b.total_cmp(a));

    // suffix[i] = Σ_{l ≥ i} z[l] (0-based)
    let mut suffix = vec![0.0; dim + 1];
    for i in (0..dim).rev() {
        suffix[i] = suffix[i + 1] + z[i];
    }

    let violation = |p: usize| -> f64 {
        // 0-based index of z_{k−p}
        let pivot = k - p - 1;
        let avg = suffix[pivot] / (p + 1) as f64;
        let left = if pivot == 0 { f64::INFINITY } else { z[pivot - 1] };
        let right = z[pivot];
        (avg - left).max(0.0) + (right - avg).max(0.0)
    };

    let p = (0..k)
        .find(|&p| violation(p) <= TIE_TOL)
        .unwrap_or_else(|| {
            (0..k)
                .min_by(|&a, &b| violation(a).total_cmp(&violation(b)))
                .unwrap_or(0)
        });

    let head = k - p - 1;
    let head_sq: f64 = z[..head].iter().map(|x| x * x).sum();
    let tail = suffix[head];
    let norm_value = (head_sq + tail * tail / (p + 1) as f64).sqrt();
    Ok(KSupportDecomposition {
        p,
        sorted_abs: z,
        norm_value,
    })
}

/// The k-support norm `‖w‖_k^sp`; equals `‖w‖₁` at `k = 1` and `‖w‖₂` at `k = K`.
pub fn ksupport_norm(w: ArrayView1<f64>, k: usize) -> Result<f64> {
    Ok(ksupport_decompose(w, k)?.norm_value)
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Elementwise soft thresholding `sign(x) max(|x| − λ, 0)`.
pub fn prox_l1<D: Dimension>(x: ArrayView<f64, D>, lambda: f64) -> Result<Array<f64, D>> {
    check_lambda(lambda)?;
    Ok(x.mapv(|v| soft_threshold(v, lambda)))
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}` by sort and threshold.
pub fn project_l1_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    if l1_norm(v) <= radius {
        return v.to_owned();
    }
    if !(radius > 0.0) {
        return Array1::zeros(v.len());
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.mapv(|x| soft_threshold(x, theta))
}

/// Prox of `λ‖·‖_{1,∞}`: each row `r` maps to `r − P_{‖·‖₁ ≤ λ}(r)`.
pub fn prox_l1_inf_rows(x: ArrayView2<f64>, lambda: f64) -> Result<Array2<f64>> {
    check_lambda(lambda)?;
    let mut out = x.to_owned();
    if lambda == 0.0 {
        return Ok(out);
    }
    for mut row in out.rows_mut() {
        let proj = project_l1_ball(row.view(), lambda);
        row -= &proj;
    }
    Ok(out)
}

/// `argmin_x ½‖x − w‖² + λ (‖x‖_k^sp)²`.
///
/// Works on the sorted magnitudes of `w` and enumerates the `(r, l)` pairs
/// that fix which coordinates are scaled, shifted or zeroed; the first pair
/// meeting its breakpoint conditions gives the answer. Signs and order of
/// `w` are restored at the end.
pub fn prox_sq_ksupport(w: ArrayView1<f64>, lambda: f64, k: usize) -> Result<Array1<f64>> {
    let dim = w.len();
    check_k(k, dim)?;
    check_lambda(lambda)?;
    if lambda == 0.0 || w.iter().all(|&x| x == 0.0) {
        return Ok(w.to_owned());
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
    let z: Vec<f64> = order.iter().map(|&i| w[i].abs()).collect();
    let q = sorted_prox(&z, lambda, k)?;

    let mut out = Array1::zeros(dim);
    for (pos, &i) in order.iter().enumerate() {
        out[i] = q[pos].copysign(w[i]);
    }
    Ok(out)
}

/// Core of [`prox_sq_ksupport`] for nonnegative `z` sorted descending.
fn sorted_prox(z: &[f64], lambda: f64, k: usize) -> Result<Vec<f64>> {
    let d = z.len();
    let beta = 1.0 / (2.0 * lambda);
    let scale = beta / (beta + 1.0);
    // 1-based accessors with z_0 = +∞ and z_{d+1} = −∞
    let at = |i: usize| -> f64 {
        if i == 0 {
            f64::INFINITY
        } else if i > d {
            f64::NEG_INFINITY
        } else {
            z[i - 1]
        }
    };
    let mut prefix = vec![0.0; d + 1];
    for i in 0..d {
        prefix[i + 1] = prefix[i] + z[i];
    }

    let build = |r: usize, l: usize, c: f64| -> Vec<f64> {
        let mut q = vec![0.0; d];
        for i in 1..=d {
            q[i - 1] = if i < k - r {
                scale * z[i - 1]
            } else if i <= l {
                (z[i - 1] - c).max(0.0)
            } else {
                0.0
            };
        }
        q
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..k {
        for l in k..=d {
            let t = prefix[l] - prefix[k - r - 1];
            let denom = (l - k) as f64 + (beta + 1.0) * r as f64 + beta + 1.0;
            let c = t / denom;
            let upper = at(k - r - 1) / (beta + 1.0);
            let lower = at(k - r) / (beta + 1.0);
            let ok = upper + TIE_TOL >= c
                && c + TIE_TOL >= lower
                && at(l) + TIE_TOL >= c
                && c + TIE_TOL >= at(l + 1);
            if ok {
                return Ok(build(r, l, c));
            }
            let q = build(r, l, c);
            let value = prox_objective(z, &q, lambda, k)?;
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, q));
            }
        }
    }
    // every candidate failed its breakpoint test by more than the tolerance;
    // the minimizer is still one of them
    Ok(best.expect("at least one candidate").1)
}

fn prox_objective(z: &[f64], q: &[f64], lambda: f64, k: usize) -> Result<f64> {
    let dist: f64 = z.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = ksupport_norm(ArrayView1::from(q), k)?;
    Ok(0.5 * dist + lambda * n * n)
}
