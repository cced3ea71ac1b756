use ndarray::{Array2, Axis};
use vstg_core::trainer::ridge_coefficients;
use vstg_core::{
    fit, generate, initialize, objective_value, ree, Baseline, Factorization, HyperParams,
    SynFamily, SynSpec,
};

fn hp(gamma: f64, k: usize) -> HyperParams {
    HyperParams {
        gamma1: gamma,
        gamma2: gamma,
        mu: gamma,
        rank: 5,
        k,
        ..HyperParams::default()
    }
}

fn assert_nonincreasing(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()), "trace went up: {trace:?}");
    }
}

#[test]
fn objective_trace_is_monotone_on_all_families() {
    for family in SynFamily::ALL {
        let data = generate(&SynSpec::new(family, 3)).unwrap();
        for k in [1, 3] {
            let (_, report) = fit(&data.train, &hp(0.0625, k)).unwrap();
            assert_nonincreasing(&report.objective_trace);
            assert_eq!(report.objective_trace.len(), report.outer_iters + 1);
        }
    }
}

#[test]
fn report_matches_final_objective() {
    let data = generate(&SynSpec::new(SynFamily::Syn2, 4)).unwrap();
    let h = hp(0.125, 1);
    let (f, report) = fit(&data.train, &h).unwrap();
    let obj = objective_value(&data.train, &f, &h).unwrap();
    assert!((report.final_objective() - obj).abs() <= 1e-12 * obj.abs());
}

#[test]
fn noiseless_recovery() {
    let data = generate(&SynSpec::new(SynFamily::Syn1, 5).noiseless()).unwrap();
    let (f, _) = fit(&data.train, &hp(2f64.powi(-6), 1)).unwrap();
    let e = ree(data.w_true.view(), f.coefficients().view()).unwrap();
    assert!(e <= 0.05, "REE {e}");
}

#[test]
fn fit_is_deterministic() {
    let data = generate(&SynSpec::new(SynFamily::Syn4, 6)).unwrap();
    let h = hp(0.0625, 3);
    let (f1, r1) = fit(&data.train, &h).unwrap();
    let (f2, r2) = fit(&data.train, &h).unwrap();
    assert_eq!(f1, f2);
    assert!(r1.same_run(&r2));
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
}

#[test]
fn huge_l1_weight_zeroes_u() {
    let data = generate(&SynSpec::new(SynFamily::Syn1, 7)).unwrap();
    let h = HyperParams {
        gamma1: 1e9,
        ..hp(0.0625, 1)
    };
    let (f, report) = fit(&data.train, &h).unwrap();
    assert!(f.u.iter().all(|&x| x == 0.0));
    let zero = Factorization::zeros(25, 5, 20);
    let floor = objective_value(&data.train, &zero, &h).unwrap();
    assert!(report.final_objective() <= floor + 1e-9);
}

#[test]
fn initialization_is_best_rank_k_approximation() {
    let data = generate(&SynSpec::new(SynFamily::Syn3, 8)).unwrap();
    let h = hp(0.0625, 1);
    let f = initialize(&data.train, &h).unwrap();
    let w_init = ridge_coefficients(&data.train, h.init_ridge_weight()).unwrap();
    // compare against the rank-5 truncation computed independently
    let svd = nalgebra::DMatrix::from_fn(25, 20, |i, j| w_init[[i, j]]).svd(true, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut best = Array2::<f64>::zeros((25, 20));
    for &r in &idx[..5] {
        let s = svd.singular_values[r];
        for i in 0..25 {
            for j in 0..20 {
                best[[i, j]] += s * u[(i, r)] * vt[(r, j)];
            }
        }
    }
    let diff = (&f.coefficients() - &best).mapv(|x| x * x).sum().sqrt();
    let scale = w_init.mapv(|x| x * x).sum().sqrt();
    assert!(diff <= 1e-8 * (1.0 + scale), "diff {diff}");
}

#[test]
fn task_permutation_permutes_v() {
    let data = generate(&SynSpec::new(SynFamily::Syn2, 9)).unwrap();
    let h = hp(0.0625, 1);
    let order: Vec<usize> = (0..20).rev().collect();
    let permuted = data.train.reordered(&order).unwrap();
    let (f, _) = fit(&data.train, &h).unwrap();
    let (g, _) = fit(&permuted, &h).unwrap();

    let w = f.coefficients();
    let wp = g.coefficients().select(Axis(1), &(0..20).rev().collect::<Vec<_>>());
    let diff = (&w - &wp).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(diff <= 1e-6, "coefficients differ by {diff}");

    // column spaces of U agree: ‖P_f - P_g‖ with P the orthogonal projector
    let proj = |u: &Array2<f64>| {
        let m = nalgebra::DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[[i, j]]);
        let svd = m.svd(true, false);
        let q = svd.u.unwrap();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&r| svd.singular_values[r] > 1e-8)
            .collect();
        let qs = q.select_columns(&keep);
        &qs * qs.transpose()
    };
    let dist = (proj(&f.u) - proj(&g.u)).amax();
    assert!(dist <= 1e-6, "projection distance {dist}");
}

#[test]
fn multitask_beats_single_task_ridge_on_syn1() {
    let lambdas: Vec<f64> = (-10..=3).map(|e| 2f64.powi(e)).collect();
    for seed in 1..=10 {
        let data = generate(&SynSpec::new(SynFamily::Syn1, seed)).unwrap();
        let (f, _) = fit(&data.train, &hp(0.125, 1)).unwrap();
        let mtl = ree(data.w_true.view(), f.coefficients().view()).unwrap();
        let ridge = lambdas
            .iter()
            .map(|&l| {
                let w = Baseline::Ridge.fit(&data.train, l).unwrap();
                ree(data.w_true.view(), w.view()).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(mtl < ridge, "seed {seed}: {mtl} vs best ridge {ridge}");
    }
}
