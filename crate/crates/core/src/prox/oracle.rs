//! Derivative-free minimizer used as an independent check on the closed-form
//! proximal operators.
//!
//! It only evaluates the objective, so it shares no code path with the
//! operators it checks. Each start runs a restarted Nelder–Mead search and
//! is then polished by exact (golden-section) line searches along
//! coordinate, pairwise and random directions.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const STARTS: usize = 4;
const MAX_EVALS_PER_START: usize = 400_000;

/// Minimizes a convex `objective` starting from `x0`.
///
/// Several starts are run (the given point plus deterministic perturbations
/// of it) and the best point found is returned. The call fails if no start
/// shrinks its simplex below `tol` (relative to the iterate's magnitude)
/// within the evaluation budget.
pub fn numeric_prox_oracle(
    objective: impl Fn(ArrayView1<f64>) -> f64,
    x0: ArrayView1<f64>,
    tol: f64,
) -> Result<Array1<f64>> {
    let n = x0.len();
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let f = |x: &Array1<f64>| objective(x.view());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let scale = 1.0 + x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut results: Vec<(f64, Array1<f64>, bool)> = Vec::with_capacity(STARTS);
    for s in 0..STARTS {
        let start = if s == 0 {
            x0.to_owned()
        } else {
            Array1::from_iter(x0.iter().map(|&v| v + scale * rng.random_range(-1.0..1.0)))
        };
        let (x, converged) = nelder_mead(&f, start, tol * scale);
        let x = polish(&f, x, &mut rng);
        results.push((f(&x), x, converged));
    }

    if !results.iter().any(|r| r.2) {
        return Err(Error::OracleFailure(format!(
            "no start converged within {MAX_EVALS_PER_START} evaluations"
        )));
    }
    results.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = results[0].0;
    let worst = results[results.len() - 1].0;
    if worst - best > tol * (1.0 + best.abs()) {
        log::debug!("oracle starts disagree: best {best:e}, worst {worst:e}");
    }
    Ok(results.swap_remove(0).1)
}

/// Restarted adaptive Nelder–Mead. Returns the best vertex and whether the
/// simplex collapsed below `size_tol` before the budget ran out.
fn nelder_mead(
    f: &impl Fn(&Array1<f64>) -> f64,
    x0: Array1<f64>,
    size_tol: f64,
) -> (Array1<f64>, bool) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (
        1.0,
        1.0 + 2.0 / nf,
        0.75 - 1.0 / (2.0 * nf),
        1.0 - 1.0 / nf.max(2.0),
    );
    let mut evals = 0usize;
    let mut best = x0;
    let mut best_val = f(&best);
    let mut step = 0.5 * (1.0 + best.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut converged = false;

    for _restart in 0..60 {
        let mut simplex: Vec<(f64, Array1<f64>)> = Vec::with_capacity(n + 1);
        simplex.push((best_val, best.clone()));
        for i in 0..n {
            let mut p = best.clone();
            p[i] += step;
            simplex.push((f(&p), p));
            evals += 1;
        }
        loop {
            simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
            let diam = simplex[1..]
                .iter()
                .map(|(_, p)| (p - &simplex[0].1).iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .fold(0.0f64, f64::max);
            if diam < size_tol || evals > MAX_EVALS_PER_START {
                break;
            }
            let mut centroid = Array1::<f64>::zeros(n);
            for (_, p) in &simplex[..n] {
                centroid += p;
            }
            centroid /= nf;
            let worst = simplex[n].1.clone();
            let fw = simplex[n].0;
            let reflect = &centroid + &((&centroid - &worst) * alpha);
            let fr = f(&reflect);
            evals += 1;
            if fr < simplex[0].0 {
                let expand = &centroid + &((&reflect - &centroid) * gamma);
                let fe = f(&expand);
                evals += 1;
                simplex[n] = if fe < fr { (fe, expand) } else { (fr, reflect) };
            } else if fr < simplex[n - 1].0 {
                simplex[n] = (fr, reflect);
            } else {
                let (contract, fc) = if fr < fw {
                    let c = &centroid + &((&reflect - &centroid) * rho);
                    let v = f(&c);
                    (c, v)
                } else {
                    let c = &centroid + &((&worst - &centroid) * rho);
                    let v = f(&c);
                    (c, v)
                };
                evals += 1;
                if fc < fw.min(fr) {
                    simplex[n] = (fc, contract);
                } else {
                    let x_best = simplex[0].1.clone();
                    for (val, p) in simplex[1..].iter_mut() {
                        *p = &x_best + &((&*p - &x_best) * sigma);
                        *val = f(p);
                        evals += 1;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let improved = simplex[0].0 < best_val;
        let moved = (&simplex[0].1 - &best)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        best_val = simplex[0].0;
        best = simplex[0].1.clone();
        if evals > MAX_EVALS_PER_START {
            break;
        }
        if !improved || moved < size_tol {
            converged = true;
            if step < size_tol {
                break;
            }
        }
        step = (moved * 4.0).max(step * 0.1).max(size_tol);
    }
    (best, converged)
}

/// Exact line searches along a rotating set of directions until a full
/// sweep fails to improve the objective.
fn polish(f: &impl Fn(&Array1<f64>) -> f64, mut x: Array1<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let n = x.len();
    let mut fx = f(&x);
    let mut dirs: Vec<Array1<f64>> = Vec::new();
    for i in 0..n {
        let mut e = Array1::zeros(n);
        e[i] = 1.0;
        dirs.push(e);
        for j in (i + 1)..n {
            for s in [1.0, -1.0] {
                let mut e = Array1::zeros(n);
                e[i] = 1.0;
                e[j] = s;
                dirs.push(e);
            }
        }
    }
    for _sweep in 0..200 {
        let start_val = fx;
        let mut sweep_dirs = dirs.clone();
        for _ in 0..2 * n {
            let d = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
            sweep_dirs.push(d);
        }
        // radial direction
        sweep_dirs.push(x.mapv(|v| v.signum()));
        sweep_dirs.extend(tie_directions(&x));
        for d in &sweep_dirs {
            let norm = d.dot(d).sqrt();
            if norm == 0.0 {
                continue;
            }
            let d = d / norm;
            let (t, ft) = golden_line_search(f, &x, &d);
            if ft < fx {
                x = &x + &(&d * t);
                fx = ft;
            }
        }
        if start_val - fx <= 1e-15 * (1.0 + fx.abs()) {
            break;
        }
    }
    x
}

/// Directions that move groups of equal-magnitude entries together, and the
/// leading entries by magnitude together. Nonsmooth objectives often have
/// kinks along such ties that no coordinate or random direction follows.
fn tie_directions(x: &Array1<f64>) -> Vec<Array1<f64>> {
    let n = x.len();
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    let indicator = |idx: &[usize]| {
        let mut d = Array1::zeros(n);
        for &i in idx {
            d[i] = if x[i] < 0.0 { -1.0 } else { 1.0 };
        }
        d
    };
    let mut dirs = Vec::new();
    for m in 2..=n {
        dirs.push(indicator(&order[..m]));
    }
    let mut start = 0;
    for i in 1..=n {
        if i == n || x[order[i - 1]].abs() - x[order[i]].abs() > 1e-6 * scale {
            if i - start > 1 {
                dirs.push(indicator(&order[start..i]));
            }
            start = i;
        }
    }
    dirs
}

/// Minimizes `t ↦ f(x + t d)` over a bracket found by doubling.
fn golden_line_search(
    f: &impl Fn(&Array1<f64>) -> f64,
    x: &Array1<f64>,
    d: &Array1<f64>,
) -> (f64, f64) {
    let g = |t: f64| f(&(x + &(d * t)));
    let f0 = g(0.0);
    let mut h = 1e-3;
    let (mut lo, mut hi);
    if g(h) < f0 {
        lo = 0.0;
        hi = h;
        while g(hi * 2.0) < g(hi) && hi < 1e8 {
            lo = hi;
            hi *= 2.0;
        }
        hi *= 2.0;
        lo = (lo - h).max(0.0).min(lo);
    } else if g(-h) < f0 {
        hi = 0.0;
        lo = -h;
        while g(lo * 2.0) < g(lo) && lo > -1e8 {
            hi = lo;
            lo *= 2.0;
        }
        lo *= 2.0;
    } else {
        h = 1e-3;
        lo = -h;
        hi = h;
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let mut fc = g(c);
    let mut fe = g(e);
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = g(e);
        }
    }
    let t = 0.5 * (a + b);
    let ft = g(t);
    if ft < f0 {
        (t, ft)
    } else {
        (0.0, f0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sq_dist(x: ArrayView1<f64>, w: &Array1<f64>) -> f64 {
        0.5 * x.iter().zip(w.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    #[test]
    fn recovers_center_of_quadratic() {
        let w = array![1.0, -2.0, 0.5];
        let x = numeric_prox_oracle(|x| sq_dist(x, &w), Array1::zeros(3).view(), 1e-6).unwrap();
        for (a, b) in x.iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-5, "{x} vs {w}");
        }
    }

    #[test]
    fn ridge_shrinkage() {
        let w = array![1.0, -2.0, 0.5, 4.0];
        let lambda = 0.3;
        let x = numeric_prox_oracle(
            |x| sq_dist(x, &w) + lambda * x.dot(&x),
            Array1::zeros(4).view(),
            1e-6,
        )
        .unwrap();
        for (a, b) in x.iter().zip(w.iter()) {
            assert!((a - b / (1.0 + 2.0 * lambda)).abs() < 1e-5);
        }
    }

    #[test]
    fn soft_threshold() {
        let w = array![3.0, -0.5, 1.2, -2.0];
        let lambda = 1.0;
        let x = numeric_prox_oracle(
            |x| sq_dist(x, &w) + lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            Array1::zeros(4).view(),
            1e-6,
        )
        .unwrap();
        let expect = [2.0, 0.0, 0.2, -1.0];
        for (a, b) in x.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-4, "{x}");
        }
    }
}
