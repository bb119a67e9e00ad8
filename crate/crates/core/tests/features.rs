use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use eitdiag::config::RunConfig;
use eitdiag::experiments::train_models;
use eitdiag::features::{fit_pca, fit_pca_with, project, Selector};
use eitdiag::forward::FrameMeta;
use eitdiag::phantom::{assign_splits, Experiment, LabeledDataset, Split, SplitMode};
use eitdiag::rng;

/// LOC-shaped dataset whose frames carry a radial and an angular signal.
fn loc_like(seed: u64) -> LabeledDataset {
    let mut r = rng::stream(seed, "features-test", 0);
    let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..40).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let mut x = Vec::new();
    let mut meta = Vec::new();
    for specimen in 1..=3 {
        for (ri, rad) in [0.0, 2.0, 4.0].into_iter().enumerate() {
            let angles: Vec<f64> = if rad == 0.0 { vec![0.0] } else { (0..12).map(|i| 30.0 * i as f64).collect() };
            for theta in angles {
                let t = f64::to_radians(theta);
                let row: Vec<f64> = (0..40)
                    .map(|j| {
                        ri as f64 * dirs[0][j]
                            + rad * (t.cos() * dirs[1][j] + t.sin() * dirs[2][j])
                            + 0.01 * r.random_range(-1.0..1.0)
                    })
                    .collect();
                x.push(row);
                meta.push(FrameMeta {
                    scenario: "LOC".into(),
                    specimen_id: specimen,
                    r_cm: Some(rad),
                    theta_deg: Some(theta),
                    ..FrameMeta::default()
                });
            }
        }
    }
    let mut ds = LabeledDataset {
        experiment: Experiment::Loc,
        split_mode: SplitMode::SpecimenHoldout,
        x,
        meta,
        split: Vec::new(),
        baseline: vec![1.0; 40],
    };
    assign_splits(&mut ds, SplitMode::SpecimenHoldout, seed);
    ds
}

fn quick_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mlp_restarts = 1;
    cfg.mlp_max_iter = 30;
    cfg
}

#[test]
fn test_rows_never_reach_fitted_models() {
    let cfg = quick_config();
    let ds = loc_like(1);
    let base = train_models(&cfg, &ds).unwrap();

    let test = ds.rows_in(Split::Test);
    assert!(!test.is_empty());
    let mut permuted = ds.clone();
    let mut order = test.clone();
    order.shuffle(&mut rng::stream(2, "features-permute", 0));
    for (&to, &from) in test.iter().zip(&order) {
        permuted.x[to] = ds.x[from].clone();
    }
    assert_ne!(permuted.x, ds.x);
    assert_eq!(train_models(&cfg, &permuted).unwrap(), base);

    let mut garbage = ds.clone();
    let mut r = rng::stream(3, "features-garbage", 0);
    for &i in &test {
        garbage.x[i].iter_mut().for_each(|v| *v = 1e3 * r.random_range(-1.0..1.0));
    }
    assert_eq!(train_models(&cfg, &garbage).unwrap(), base);

    // the same edit on a training row must show up
    let mut touched = ds.clone();
    let i = ds.rows_in(Split::Train)[0];
    touched.x[i][0] += 1.0;
    assert_ne!(train_models(&cfg, &touched).unwrap().pca, base.pca);
}

#[test]
fn projection_uses_the_training_mean() {
    let ds = loc_like(4);
    let train: Vec<Vec<f64>> = ds.rows_in(Split::Train).iter().map(|&i| ds.x[i].clone()).collect();
    let m = fit_pca(&train, Selector::Fixed(4)).unwrap();
    let scores = project(&m, &train).unwrap();
    for j in 0..4 {
        let mean: f64 = scores.iter().map(|s| s[j]).sum::<f64>() / scores.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}

fn matrix(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "features-prop", 0);
    let scale: Vec<f64> = (0..d).map(|j| 0.5f64.powi(j as i32)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|j| scale[j] * r.random_range(-1.0..1.0)).collect();
            (0..d).map(|j| z[j] + 0.4 * z[(j + 1) % d] + 3.0).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn components_orthonormal_and_ordered(n in 3usize..30, d in 2usize..12, seed in 0u64..10_000, standardize: bool) {
        let x = matrix(n, d, seed);
        let m = fit_pca_with(&x, Selector::Fixed(d), standardize).unwrap();
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = m.components[a].iter().zip(&m.components[b]).map(|(p, q)| p * q).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-10, "<{},{}> = {}", a, b, dot);
            }
        }
        for w in m.explained_variance.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!((m.cumulative_ratio() - 1.0).abs() <= 1e-10);
        for c in &m.components {
            let big = c.iter().fold(0.0f64, |a, v| if v.abs() > a.abs() { *v } else { a });
            prop_assert!(big > 0.0);
        }
    }

    #[test]
    fn full_rank_projection_round_trips(n in 3usize..30, d in 2usize..10, seed in 0u64..10_000) {
        let x = matrix(n, d, seed);
        let m = fit_pca(&x, Selector::Fixed(d)).unwrap();
        for row in &x {
            let back = m.back_project(&m.project_row(row).unwrap()).unwrap();
            for ((b, mu), v) in back.iter().zip(&m.mean).zip(row) {
                prop_assert!((b + mu - v).abs() <= 1e-10 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fit_is_deterministic_and_order_free(n in 3usize..25, d in 2usize..8, seed in 0u64..10_000) {
        let x = matrix(n, d, seed);
        let k = d.min(3);
        let a = fit_pca(&x, Selector::Fixed(k)).unwrap();
        prop_assert_eq!(&a, &fit_pca(&x, Selector::Fixed(k)).unwrap());
        let mut y = x.clone();
        y.reverse();
        let b = fit_pca(&y, Selector::Fixed(k)).unwrap();
        let all = fit_pca(&x, Selector::Fixed(d)).unwrap().explained_variance;
        let gap = all[..=k.min(d - 1)].windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        // components are only identifiable when their eigenvalues are separated
        if gap > 1e-6 * a.explained_variance[0] {
            for (p, q) in a.components.iter().zip(&b.components) {
                for (u, v) in p.iter().zip(q) {
                    prop_assert!((u - v).abs() <= 1e-8);
                }
            }
        }
    }
}
