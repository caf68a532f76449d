use crtre_core::synthdata::{
    acceptance_probabilities, beta_pattern, bias_sample, gen_covariates, gen_outcome, nonlinear_link, outcome_signal,
    sample_environment, BetaSpec, CovariateConfig, EnvKind, EnvironmentSpec, LabeledDataset,
};
use crtre_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn column(d: &LabeledDataset, j: usize) -> Vec<f64> {
    d.features.column(j).iter().copied().collect()
}

/// Rows whose noiseless outcome and one biased column are fixed, so every row has
/// the same distance.
fn fixed_distance_rows(n: usize, signal: f64, biased: f64) -> LabeledDataset {
    let mut features = DMatrix::zeros(n, 5);
    features.column_mut(2).fill(biased);
    let names = ["S1", "S2", "V1", "V2", "V3"].map(String::from).to_vec();
    let mut d = LabeledDataset::new(features, names);
    d.stable_mask = vec![true, true, false, false, false];
    d.signal = Some(vec![signal; n]);
    d.outcome = Some(vec![signal; n]);
    d
}

fn single_column_env(r: f64) -> EnvironmentSpec {
    EnvironmentSpec { biased_subset_size: Some(1), ..EnvironmentSpec::new(r) }
}

#[test]
fn covariates_are_deterministic() {
    let cfg = CovariateConfig::new(3, 5, EnvKind::Linear, 7);
    let a = gen_covariates(&cfg).unwrap();
    let b = gen_covariates(&cfg).unwrap();
    assert_eq!(a.features, b.features);
    let other = gen_covariates(&CovariateConfig::new(3, 5, EnvKind::Linear, 8)).unwrap();
    assert_ne!(a.features, other.features);
}

#[test]
fn too_few_features_rejected() {
    let err = gen_covariates(&CovariateConfig::new(10, 1, EnvKind::Linear, 0)).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

#[test]
fn neighbouring_stable_correlation_matches_monte_carlo() {
    // Same mixing formulas, separate generator, 10^6 draws.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let m = 1_000_000;
    let (mut s1, mut s2) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for _ in 0..m {
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        s1.push(0.8 * z[0] + 0.2 * z[1]);
        s2.push(0.8 * z[1] + 0.2 * z[2]);
    }
    let oracle = pearson(&s1, &s2);
    assert!((oracle - 0.16 / 0.68).abs() < 0.005);

    let d = gen_covariates(&CovariateConfig::new(5000, 5, EnvKind::Linear, 11)).unwrap();
    let sample = pearson(&column(&d, 0), &column(&d, 1));
    assert!((sample - oracle).abs() < 0.05, "sample {sample} oracle {oracle}");
}

#[test]
fn nonlinear_link_at_zero_successor() {
    for own in [-1.3, 0.0, 0.25, 2.0] {
        assert!((nonlinear_link(own, 0.0) - (own + 0.4)).abs() < 1e-15);
    }
}

#[test]
fn beta_pattern_cycle() {
    let b2 = beta_pattern(2, 5).unwrap();
    assert_eq!(b2.beta_s, [1.0 / 3.0, -2.0 / 3.0]);
    assert_eq!(b2.beta_v, [0.0; 3]);
    assert_eq!(b2.noise_sd, 0.3);
    let b6 = beta_pattern(6, 10).unwrap();
    assert_eq!(b6.beta_s, [1.0 / 3.0, -2.0 / 3.0, 1.0, -1.0 / 3.0, 2.0 / 3.0, -1.0]);
    let b20 = beta_pattern(20, 25).unwrap();
    for (i, v) in b20.beta_s.iter().enumerate() {
        assert_eq!(*v, b6.beta_s[i % 6]);
    }
    assert_eq!(b20.beta_s[6], 1.0 / 3.0);
    assert!(beta_pattern(0, 3).is_err());
    assert!(beta_pattern(3, 3).is_err());
}

#[test]
fn interaction_only_outcome() {
    let d = gen_covariates(&CovariateConfig::new(200, 5, EnvKind::Linear, 3)).unwrap();
    let spec = BetaSpec { beta_s: vec![0.0; 2], beta_v: vec![0.0; 3], noise_sd: 0.0 };
    let y = gen_outcome(&d, &spec, 1).unwrap();
    for (i, v) in y.outcome.unwrap().iter().enumerate() {
        assert_eq!(*v, d.features[(i, 0)] * d.features[(i, 1)]);
    }
}

#[test]
fn hand_evaluated_outcome() {
    let mut d = LabeledDataset::new(DMatrix::from_row_slice(1, 3, &[3.0, 3.0, 5.0]), vec!["a".into(), "b".into(), "c".into()]);
    d.stable_mask = vec![true, true, false];
    let spec = BetaSpec { noise_sd: 0.0, ..beta_pattern(2, 3).unwrap() };
    assert!((outcome_signal(&d, &spec).unwrap()[0] - 8.0).abs() < 1e-12);
    assert_eq!(gen_outcome(&d, &spec, 0).unwrap().outcome.unwrap()[0], outcome_signal(&d, &spec).unwrap()[0]);
}

#[test]
fn outcome_noise_variance() {
    let d = gen_covariates(&CovariateConfig::new(100_000, 5, EnvKind::Linear, 5)).unwrap();
    let spec = beta_pattern(2, 5).unwrap();
    let y = gen_outcome(&d, &spec, 9).unwrap();
    let resid: Vec<f64> = y.outcome.as_ref().unwrap().iter().zip(y.signal.as_ref().unwrap()).map(|(a, b)| a - b).collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
    // SE of a normal sample variance is sigma^2 sqrt(2/(n-1)) ~ 4e-4.
    assert!((var - 0.09).abs() < 0.0015, "variance {var}");
}

#[test]
fn outcome_dimension_mismatch() {
    let d = gen_covariates(&CovariateConfig::new(10, 5, EnvKind::Linear, 0)).unwrap();
    let err = gen_outcome(&d, &beta_pattern(3, 5).unwrap(), 0).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
}

#[test]
fn zero_distance_rows_all_accepted() {
    let d = fixed_distance_rows(500, 0.7, 0.7);
    let p = acceptance_probabilities(&d, &single_column_env(3.0)).unwrap();
    assert!(p.iter().all(|&v| v == 1.0));
    assert_eq!(bias_sample(&d, &single_column_env(3.0), 4).unwrap().n(), 500);
}

#[test]
fn unit_distance_acceptance_rate() {
    let n = 100_000;
    let d = fixed_distance_rows(n, 1.0, 0.0);
    let env = single_column_env(2.0);
    let p = acceptance_probabilities(&d, &env).unwrap();
    assert!(p.iter().all(|&v| (v - 0.03125).abs() < 1e-15));
    let kept = bias_sample(&d, &env, 21).unwrap().n() as f64 / n as f64;
    assert!((kept - 0.03125).abs() < 0.005, "empirical rate {kept}");
}

#[test]
fn negative_r_flips_sign() {
    let d = fixed_distance_rows(4, 1.0, 1.0);
    let pos = acceptance_probabilities(&d, &single_column_env(2.0)).unwrap();
    let neg = acceptance_probabilities(&d, &single_column_env(-2.0)).unwrap();
    assert_eq!(pos[0], 1.0);
    assert!((neg[0] - 2f64.powi(-10)).abs() < 1e-15);
}

#[test]
fn invalid_bias_rate_rejected() {
    let d = fixed_distance_rows(4, 1.0, 1.0);
    for r in [1.0, 0.5, -1.0, 0.0] {
        assert!(matches!(acceptance_probabilities(&d, &single_column_env(r)), Err(Error::InvalidEnvironment(_))));
    }
}

#[test]
fn environment_reaches_target_size() {
    let cov = CovariateConfig::new(0, 10, EnvKind::Linear, 0);
    let spec = beta_pattern(4, 10).unwrap();
    let d = sample_environment(&cov, &spec, &EnvironmentSpec::new(2.0), 1500, 13).unwrap();
    assert_eq!(d.n(), 1500);
    assert_eq!(d.outcome.as_ref().unwrap().len(), 1500);
    let again = sample_environment(&cov, &spec, &EnvironmentSpec::new(2.0), 1500, 13).unwrap();
    assert_eq!(d, again);
}

#[test]
fn linear_moments_converge() {
    let n = 100_000;
    let d = gen_covariates(&CovariateConfig::new(n, 5, EnvKind::Linear, 17)).unwrap();
    let target = 0.8f64 * 0.8 + 0.2 * 0.2;
    for j in 0..2 {
        let col = column(&d, j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * (target / n as f64).sqrt(), "mean {mean}");
        let se = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "variance {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn acceptance_decreases_with_distance(r in 1.01f64..6.0, lo in 0.0f64..3.0, extra in 0.0f64..3.0) {
        let env = single_column_env(r);
        let near = acceptance_probabilities(&fixed_distance_rows(1, lo, 0.0), &env).unwrap()[0];
        let far = acceptance_probabilities(&fixed_distance_rows(1, lo + extra, 0.0), &env).unwrap()[0];
        prop_assert!(far <= near);
        prop_assert!(far > 0.0 && near <= 1.0);
    }

    #[test]
    fn generated_data_deterministic(seed in 0u64..1000, p in 2usize..8) {
        let cfg = CovariateConfig::new(20, p, EnvKind::Nonlinear, seed);
        let a = gen_covariates(&cfg).unwrap();
        let spec = beta_pattern(cfg.stable_count().unwrap(), p).unwrap();
        let ya = gen_outcome(&a, &spec, seed).unwrap();
        let yb = gen_outcome(&gen_covariates(&cfg).unwrap(), &spec, seed).unwrap();
        prop_assert_eq!(ya, yb);
    }
}
