use ndarray::Array1;
use vstg_core::{family_group_structure, generate, SynFamily, SynSpec};

#[test]
fn generated_factors_match_masks() {
    for family in SynFamily::ALL {
        let masks = family_group_structure(family);
        for seed in 0..10 {
            let d = generate(&SynSpec::new(family, seed)).unwrap();
            for (x, m) in d.u_true.iter().zip(masks.u.iter()) {
                assert_eq!(*x != 0.0, *m, "{family} seed {seed} U");
            }
            for (x, m) in d.v_true.iter().zip(masks.v.iter()) {
                assert_eq!(*x != 0.0, *m, "{family} seed {seed} V");
            }
        }
    }
}

#[test]
fn shapes_and_rank() {
    for family in SynFamily::ALL {
        let d = generate(&SynSpec::new(family, 1)).unwrap();
        assert_eq!(d.train.n_tasks(), 20);
        assert_eq!(d.train.dim(), 25);
        assert!(d.train.tasks().iter().all(|t| t.n_obs() == 50));
        assert!(d.test.tasks().iter().all(|t| t.n_obs() == 100));
        let m = nalgebra::DMatrix::from_fn(25, 20, |i, j| d.w_true[[i, j]]);
        assert_eq!(m.rank(1e-9), 5, "{family}");
    }
}

#[test]
fn irrelevant_variables() {
    let d = generate(&SynSpec::new(SynFamily::Syn1, 2)).unwrap();
    assert!(d.u_true.rows().into_iter().skip(20).all(|r| r.iter().all(|&x| x == 0.0)));
    let d = generate(&SynSpec::new(SynFamily::Syn3, 2)).unwrap();
    assert!(d.u_true.rows().into_iter().skip(18).all(|r| r.iter().all(|&x| x == 0.0)));
    assert!(d.u_true.row(17).iter().any(|&x| x != 0.0));
}

#[test]
fn seeds_change_values_not_masks() {
    let a = generate(&SynSpec::new(SynFamily::Syn2, 1)).unwrap();
    let b = generate(&SynSpec::new(SynFamily::Syn2, 2)).unwrap();
    assert_ne!(a.train.tasks()[0].y, b.train.tasks()[0].y);
    assert_eq!(a.u_true.mapv(|x| x != 0.0), b.u_true.mapv(|x| x != 0.0));
}

#[test]
fn noise_variance_is_one() {
    let spec = SynSpec {
        n_train: 500,
        ..SynSpec::new(SynFamily::Syn1, 3)
    };
    let d = generate(&spec).unwrap();
    let mut resid = Vec::new();
    for (j, t) in d.train.tasks().iter().enumerate() {
        let clean = t.x.dot(&d.w_true.column(j));
        resid.extend((&t.y - &clean).iter().copied());
    }
    assert_eq!(resid.len(), 10_000);
    let r = Array1::from_vec(resid);
    let mean = r.mean().unwrap();
    let var = r.mapv(|x| (x - mean) * (x - mean)).sum() / (r.len() - 1) as f64;
    assert!((0.9..=1.1).contains(&var), "variance {var}");
}

fn feature_correlation(family: SynFamily) -> f64 {
    let spec = SynSpec {
        n_train: 5000,
        n_test: 1,
        ..SynSpec::new(family, 4)
    };
    let d = generate(&spec).unwrap();
    let f = d.train.tasks()[0].x.dot(&d.u_true);
    let a = f.column(0);
    let b = f.column(1);
    let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
    let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>();
    let vb = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>();
    cov / (va * vb).sqrt()
}

#[test]
fn feature_correlations() {
    assert!(feature_correlation(SynFamily::Syn1).abs() <= 0.1);
    assert!(feature_correlation(SynFamily::Syn3) >= 0.2);
}

#[test]
fn noiseless_outputs_are_exact() {
    let d = generate(&SynSpec::new(SynFamily::Syn4, 5).noiseless()).unwrap();
    for (j, t) in d.test.tasks().iter().enumerate() {
        let clean = t.x.dot(&d.w_true.column(j));
        assert_eq!(clean, t.y);
    }
}
