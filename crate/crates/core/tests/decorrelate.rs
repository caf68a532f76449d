use crtre_core::baselines::fit_logistic;
use crtre_core::decorrelate::{
    crtre_fit, decorrelation_penalty, fit_weighted_classifier, fit_weighted_svr, kde_init_weights, learn_weights,
    penalty_gradient, solve_relation, weighted_moment_system, BandwidthRule, DecorrConfig, FitMode, SampleWeights, Task,
};
use crtre_core::linalg::median;
use crtre_core::synthdata::LabeledDataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Least-squares polynomial fit through the Vandermonde design matrix.
fn design_least_squares(xh: &[f64], yh: &[f64], k: usize) -> DVector<f64> {
    let a = DMatrix::from_fn(xh.len(), k + 1, |i, d| xh[i].powi(d as i32));
    let b = DVector::from_column_slice(yh);
    a.svd(true, true).solve(&b, 1e-300).unwrap()
}

#[test]
fn relation_matches_design_matrix_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let k = rng.gen_range(1..=3);
        let n = rng.gen_range(2 * (k + 1)..=100);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let (m, v) = weighted_moment_system(&x, &y, &w, k).unwrap();
        let rel = solve_relation(&m, &v, 0, 1, k).unwrap();
        let xh: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        let yh: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a * b).collect();
        let oracle = design_least_squares(&xh, &yh, k);
        for (c, o) in rel.coeffs.iter().zip(oracle.iter()) {
            assert!((c - o).abs() <= 1e-8 * o.abs().max(1.0), "{c} vs {o}");
        }
    }
}

#[test]
fn planted_polynomials_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let k = rng.gen_range(1..=3);
        let truth: Vec<f64> = (0..=k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let n = rng.gen_range(20..=100);
        let xh: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let yh: Vec<f64> = xh.iter().map(|x| (0..=k).map(|d| truth[d] * x.powi(d as i32)).sum()).collect();
        let (m, v) = weighted_moment_system(&xh, &yh, &vec![1.0; n], k).unwrap();
        let rel = solve_relation(&m, &v, 0, 1, k).unwrap();
        for (c, t) in rel.coeffs.iter().zip(&truth) {
            assert!((c - t).abs() <= 1e-8, "{c} vs {t}");
        }
    }
    let xh: Vec<f64> = (0..30).map(|i| -1.0 + i as f64 / 15.0).collect();
    let yh: Vec<f64> = xh.iter().map(|x| 2.0 * x * x).collect();
    let (m, v) = weighted_moment_system(&xh, &yh, &[1.0; 30], 2).unwrap();
    let rel = solve_relation(&m, &v, 0, 1, 2).unwrap();
    assert!(rel.coeffs[0].abs() < 1e-8 && rel.coeffs[1].abs() < 1e-8 && (rel.coeffs[2] - 2.0).abs() < 1e-8);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let n = rng.gen_range(10..=50);
        let p = rng.gen_range(2..=5);
        let x = gaussian(&mut rng, n, p);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.5) / n as f64).collect();
        let g = penalty_gradient(&x, &w, 2).unwrap();
        let fd: Vec<f64> = (0..n)
            .map(|i| {
                let h = 1e-5 * w[i];
                let (mut up, mut down) = (w.clone(), w.clone());
                up[i] += h;
                down[i] -= h;
                (decorrelation_penalty(&x, &up, 2).unwrap() - decorrelation_penalty(&x, &down, 2).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff <= 1e-4 * scale, "case {case}: relative error {}", diff / scale);
    }
}

#[test]
fn symmetric_design_is_stationary() {
    // Full 3x3 factorial: every relation is flat, so the penalty sits at its minimum.
    let levels = [-1.0, 0.0, 1.0];
    let rows: Vec<(f64, f64)> = levels.iter().flat_map(|&a| levels.iter().map(move |&b| (a, b))).collect();
    let x = DMatrix::from_fn(9, 2, |i, j| if j == 0 { rows[i].0 } else { rows[i].1 });
    assert!(decorrelation_penalty(&x, &[1.0; 9], 2).unwrap() < 1e-20);
    assert!(penalty_gradient(&x, &[1.0; 9], 2).unwrap().iter().all(|g| g.abs() < 1e-9));
}

#[test]
fn zero_scaled_features_have_zero_gradient() {
    let x = DMatrix::zeros(8, 3);
    assert_eq!(decorrelation_penalty(&x, &[1.0; 8], 2).unwrap(), 0.0);
    assert!(penalty_gradient(&x, &[1.0; 8], 2).unwrap().iter().all(|g| *g == 0.0));
}

#[test]
fn uniform_weight_penalty_shrinks_with_sample_size() {
    let medians: Vec<f64> = [500usize, 2000, 8000]
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = (0..10)
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
                    decorrelation_penalty(&gaussian(&mut rng, n, 3), &vec![1.0; n], 2).unwrap()
                })
                .collect();
            median(&vals)
        })
        .collect();
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

#[test]
fn zero_gamma_reaches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian(&mut rng, 40, 3);
    let cfg = DecorrConfig { gamma: 0.0, lambda1: 3.0, lambda2: 5.0, max_iters: 10_000, tolerance: 1e-16, ..Default::default() };
    let init = SampleWeights { w: (0..40).map(|i| 0.01 * (i % 7) as f64).collect() };
    let (w, _) = learn_weights(&x, &cfg, &init).unwrap();
    let expected = 5.0 / (3.0 + 40.0 * 5.0);
    assert!(w.w.iter().all(|v| (v - expected).abs() < 1e-7), "{:?}", &w.w[..3]);
}

#[test]
fn trajectory_is_monotone_and_weights_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = gaussian(&mut rng, 120, 3);
    let x = DMatrix::from_fn(120, 3, |i, j| if j == 1 { base[(i, 0)].powi(2) + 0.3 * base[(i, 1)] } else { base[(i, j)] });
    let cfg = DecorrConfig { max_iters: 200, ..Default::default() }.scaled_for(120, 0.1);
    let (w, traj) = learn_weights(&x, &cfg, &SampleWeights::uniform(120)).unwrap();
    assert!(traj.windows(2).all(|t| t[1].objective <= t[0].objective));
    assert!(w.w.iter().all(|v| *v >= 0.0));
    assert!(traj.last().unwrap().objective < traj[0].objective);
}

#[test]
fn kde_weights_normalized_and_near_uniform_for_independent_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1500;
    let w = kde_init_weights(&gaussian(&mut rng, n, 2), BandwidthRule::Scott).unwrap();
    assert!((w.sum() - 1.0).abs() < 1e-12);
    assert!(w.w.iter().all(|v| *v >= 0.0));
    let scaled = w.mean_one();
    let dev = median(&scaled.iter().map(|v| (v - 1.0).abs()).collect::<Vec<_>>());
    assert!(dev < 0.15, "median deviation from uniform {dev}");
}

fn classification_data(seed: u64, n: usize) -> (DMatrix<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(&mut rng, n, 3);
    let y = (0..n)
        .map(|i| {
            let z = 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)] + 0.2;
            u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    (x, y)
}

#[test]
fn uniform_classifier_matches_standard_logistic() {
    let (x, y) = classification_data(9, 300);
    let n = y.len();
    let cfg = DecorrConfig { c: 0.0, lambda3: 0.01, ..Default::default() };
    let weighted = fit_weighted_classifier(&x, &y, &vec![1.0 / n as f64; n], &cfg).unwrap();
    let plain = fit_logistic(&x, &y, 0.01, 1e-12).unwrap();
    for (a, b) in weighted.beta.iter().zip(&plain.beta) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((weighted.intercept - plain.intercept).abs() < 1e-6);
}

#[test]
fn classifier_argmin_invariant_to_uniform_cost_scaling() {
    let (x, y) = classification_data(10, 200);
    let cfg = DecorrConfig { c: 0.5, lambda3: 0.0, ..Default::default() };
    let w: Vec<f64> = (0..200).map(|i| 0.5 + (i % 4) as f64 * 0.25).collect();
    let a = fit_weighted_classifier(&x, &y, &w, &cfg).unwrap();
    // Doubling every (W_i + C): W_i -> 2 W_i + C with the same offset.
    let doubled: Vec<f64> = w.iter().map(|v| 2.0 * v + cfg.c).collect();
    let b = fit_weighted_classifier(&x, &y, &doubled, &cfg).unwrap();
    for (u, v) in a.beta.iter().zip(&b.beta) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn weighted_svr_recovers_planted_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = gaussian(&mut rng, 500, 5);
    let truth = [1.0, -0.5, 0.25, 0.0, 2.0];
    let y: Vec<f64> = (0..500).map(|i| (0..5).map(|j| x[(i, j)] * truth[j]).sum()).collect();
    let cfg = DecorrConfig { epsilon: 0.01, ..Default::default() };
    let m = fit_weighted_svr(&x, &y, &[1.0; 500], &cfg).unwrap();
    for (b, t) in m.beta.iter().zip(truth) {
        assert!((b - t).abs() < 0.05);
    }
}

#[test]
fn zero_gamma_pipeline_equals_uniform_classifier() {
    let (x, y) = classification_data(12, 150);
    let mut data = LabeledDataset::new(x.clone(), vec!["a".into(), "b".into(), "c".into()]);
    data.outcome = Some(y.iter().map(|&l| f64::from(l)).collect());
    let cfg = DecorrConfig { gamma: 0.0, ..Default::default() };
    let fit = crtre_fit(&data, &cfg, Task::Classification, FitMode::TwoStage).unwrap();
    let direct = fit_weighted_classifier(&x, &y, &[1.0; 150], &cfg).unwrap();
    for (a, b) in fit.model.beta.iter().zip(&direct.beta) {
        assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn moment_matrix_is_symmetric(
        vals in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..2.0), 1..30),
        k in 1usize..4,
    ) {
        let x: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let y: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let w: Vec<f64> = vals.iter().map(|v| v.2).collect();
        let (m, _) = weighted_moment_system(&x, &y, &w, k).unwrap();
        prop_assert_eq!(m.clone(), m.transpose());
        prop_assert_eq!(m[(0, 0)], x.len() as f64);
    }
}
