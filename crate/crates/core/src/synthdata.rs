//! Synthetic stable/unstable covariates, outcomes and selection-biased
//! environments.
//!
//! Stable features `S` are built from auxiliary normals `Z`, unstable
//! features `V` from auxiliary normals `X`; each feature mixes its own
//! auxiliary column with the next one, so neighbouring features are
//! dependent (linearly or through a cubic/exponential link).

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::median;
use crate::rng::{derive_seed, stream, Rng};
use crate::{Error, Result};

const BETA_CYCLE: [f64; 6] = [1.0 / 3.0, -2.0 / 3.0, 1.0, -1.0 / 3.0, 2.0 / 3.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub n: usize,
    pub p: usize,
    pub env_kind: EnvKind,
    pub seed: u64,
    /// Overrides the default stable count `round(0.4 p)`.
    #[serde(default)]
    pub p_stable: Option<usize>,
    /// Scale of the additive feature noise (1.0 reproduces the benchmark).
    #[serde(default = "unit")]
    pub feature_noise: f64,
}

fn unit() -> f64 {
    1.0
}

impl CovariateConfig {
    pub fn new(n: usize, p: usize, env_kind: EnvKind, seed: u64) -> Self {
        Self { n, p, env_kind, seed, p_stable: None, feature_noise: 1.0 }
    }

    pub fn stable_count(&self) -> Result<usize> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("p = {} but at least 2 features are needed", self.p)));
        }
        match self.p_stable {
            Some(ps) if ps == 0 || ps >= self.p => Err(Error::InvalidConfig(format!(
                "p_stable = {ps} must lie in 1..{}",
                self.p
            ))),
            Some(ps) => Ok(ps),
            None => Ok(((0.4 * self.p as f64).round() as usize).clamp(1, self.p - 1)),
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::InvalidConfig("feature_noise must be finite and non-negative".into()));
        }
        self.stable_count()
    }
}

/// Feature matrix plus optional outcome. Missing cells are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: DMatrix<f64>,
    pub outcome: Option<Vec<f64>>,
    pub stable_mask: Vec<bool>,
    pub names: Vec<String>,
    /// Noiseless part of the outcome, kept for biased resampling.
    pub signal: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, names: Vec<String>) -> Self {
        let p = features.ncols();
        Self { features, outcome: None, stable_mask: vec![false; p], names, signal: None }
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        self.outcome
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no outcome".into()))
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.features[(row, col)].is_nan()
    }

    pub fn missing_count(&self) -> usize {
        self.features.iter().filter(|v| v.is_nan()).count()
    }

    pub fn stable_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.stable_mask[j]).collect()
    }

    pub fn unstable_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| !self.stable_mask[j]).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let features = self.features.select_rows(rows);
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            features,
            outcome: self.outcome.as_ref().map(pick),
            stable_mask: self.stable_mask.clone(),
            names: self.names.clone(),
            signal: self.signal.as_ref().map(pick),
        }
    }

    /// Appends the rows of `other`; both must share the column layout.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.p() != other.p() {
            return Err(Error::DimensionMismatch(format!("{} vs {} columns", self.p(), other.p())));
        }
        let (n1, n2, p) = (self.n(), other.n(), self.p());
        let features = DMatrix::from_fn(n1 + n2, p, |i, j| {
            if i < n1 {
                self.features[(i, j)]
            } else {
                other.features[(i - n1, j)]
            }
        });
        let join = |a: &Option<Vec<f64>>, b: &Option<Vec<f64>>| match (a, b) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self {
            features,
            outcome: join(&self.outcome, &other.outcome),
            stable_mask: self.stable_mask.clone(),
            names: self.names.clone(),
            signal: join(&self.signal, &other.signal),
        })
    }
}

/// Cubic/exponential link used by the nonlinear environment, without noise.
pub fn nonlinear_link(own: f64, next: f64) -> f64 {
    own + 0.4 * next + 0.4 * next.exp() + 0.4 * next * next + 0.1 * next.powi(3)
}

pub fn linear_link(own: f64, next: f64) -> f64 {
    0.8 * own + 0.2 * next
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gen_covariates(cfg: &CovariateConfig) -> Result<LabeledDataset> {
    let ps = cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let pv = p - ps;
    let mut rng = stream(cfg.seed, 0);
    // Both auxiliary blocks get one extra column so the last feature has a successor.
    let z = DMatrix::from_fn(n, ps + 1, |_, _| normal(&mut rng));
    let x = DMatrix::from_fn(n, pv + 1, |_, _| normal(&mut rng));

    let mut features = DMatrix::zeros(n, p);
    for j in 0..p {
        let (aux, col, stable) = if j < ps { (&z, j, true) } else { (&x, j - ps, false) };
        for i in 0..n {
            let (own, next) = (aux[(i, col)], aux[(i, col + 1)]);
            features[(i, j)] = match cfg.env_kind {
                EnvKind::Nonlinear => nonlinear_link(own, next) + cfg.feature_noise * normal(&mut rng),
                EnvKind::Linear if stable => linear_link(own, next),
                EnvKind::Linear => linear_link(own, next) + cfg.feature_noise * normal(&mut rng),
            };
        }
    }

    let names = (0..ps).map(|j| format!("S{}", j + 1)).chain((0..pv).map(|j| format!("V{}", j + 1))).collect();
    let mut data = LabeledDataset::new(features, names);
    data.stable_mask = (0..p).map(|j| j < ps).collect();
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub beta_s: Vec<f64>,
    pub beta_v: Vec<f64>,
    pub noise_sd: f64,
}

impl BetaSpec {
    /// Coefficients laid out in column order of `stable_mask`.
    pub fn coefficients(&self, stable_mask: &[bool]) -> Result<Vec<f64>> {
        let ns = stable_mask.iter().filter(|s| **s).count();
        if ns != self.beta_s.len() || stable_mask.len() - ns != self.beta_v.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {ns} stable / {} unstable, spec has {} / {}",
                stable_mask.len() - ns,
                self.beta_s.len(),
                self.beta_v.len()
            )));
        }
        let (mut s, mut v) = (self.beta_s.iter(), self.beta_v.iter());
        Ok(stable_mask.iter().map(|&st| if st { *s.next().unwrap() } else { *v.next().unwrap() }).collect())
    }
}

pub fn beta_pattern(p_stable: usize, p_total: usize) -> Result<BetaSpec> {
    if p_stable == 0 || p_stable >= p_total {
        return Err(Error::InvalidConfig(format!("need 0 < p_stable ({p_stable}) < p_total ({p_total})")));
    }
    Ok(BetaSpec {
        beta_s: (0..p_stable).map(|i| BETA_CYCLE[i % BETA_CYCLE.len()]).collect(),
        beta_v: vec![0.0; p_total - p_stable],
        noise_sd: 0.3,
    })
}

/// Noiseless outcome: linear stable effects plus the product of the first two
/// stable features (absent when only one stable feature exists).
pub fn outcome_signal(data: &LabeledDataset, spec: &BetaSpec) -> Result<Vec<f64>> {
    let beta = spec.coefficients(&data.stable_mask)?;
    let stable = data.stable_indices();
    let x = &data.features;
    Ok((0..data.n())
        .map(|i| {
            let linear: f64 = (0..data.p()).map(|j| x[(i, j)] * beta[j]).sum();
            let inter = if stable.len() >= 2 { x[(i, stable[0])] * x[(i, stable[1])] } else { 0.0 };
            linear + inter
        })
        .collect())
}

pub fn gen_outcome(data: &LabeledDataset, spec: &BetaSpec, seed: u64) -> Result<LabeledDataset> {
    let signal = outcome_signal(data, spec)?;
    let mut rng = stream(seed, 1);
    let y = signal.iter().map(|f| f + spec.noise_sd * normal(&mut rng)).collect();
    let mut out = data.clone();
    out.outcome = Some(y);
    out.signal = Some(signal);
    Ok(out)
}

/// Replaces a real outcome with `1` above its sample median and `0` otherwise.
pub fn median_labels(data: &LabeledDataset) -> Result<LabeledDataset> {
    let y = data.outcome()?;
    let m = median(y);
    let mut out = data.clone();
    out.outcome = Some(y.iter().map(|v| if *v > m { 1.0 } else { 0.0 }).collect());
    Ok(out)
}

/// Which feature family drives the selection bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasFamily {
    #[default]
    Unstable,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub r: f64,
    /// Defaults to `ceil(0.2 p)`.
    #[serde(default)]
    pub biased_subset_size: Option<usize>,
    #[serde(default)]
    pub family: BiasFamily,
}

impl EnvironmentSpec {
    pub fn new(r: f64) -> Self {
        Self { r, biased_subset_size: None, family: BiasFamily::Unstable }
    }

    /// Column indices of the biased subset for the given dataset layout.
    pub fn biased_columns(&self, stable_mask: &[bool]) -> Result<Vec<usize>> {
        if !(self.r.abs() > 1.0 && self.r.is_finite()) {
            return Err(Error::InvalidEnvironment(format!("|r| must exceed 1, got r = {}", self.r)));
        }
        let p = stable_mask.len();
        let size = self.biased_subset_size.unwrap_or((0.2 * p as f64).ceil() as usize);
        let n_stable = stable_mask.iter().filter(|s| **s).count();
        let family: Vec<usize> = match self.family {
            BiasFamily::Unstable => (0..p).filter(|&j| !stable_mask[j]).collect(),
            BiasFamily::Stable => (0..p).filter(|&j| stable_mask[j]).collect(),
        };
        if size == 0 || size > n_stable || size > family.len() {
            return Err(Error::InvalidEnvironment(format!(
                "biased subset size {size} must be in 1..={}",
                n_stable.min(family.len())
            )));
        }
        Ok(family[..size].to_vec())
    }
}

/// Per-row acceptance probability `prod |r|^(-5 D_i)`.
pub fn acceptance_probabilities(data: &LabeledDataset, env: &EnvironmentSpec) -> Result<Vec<f64>> {
    let cols = env.biased_columns(&data.stable_mask)?;
    let signal = data
        .signal
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("outcome must be generated before biased sampling".into()))?;
    let (base, sign) = (env.r.abs(), env.r.signum());
    Ok((0..data.n())
        .map(|i| {
            let d: f64 = cols.iter().map(|&j| (signal[i] - sign * data.features[(i, j)]).abs()).sum();
            base.powf(-5.0 * d)
        })
        .collect())
}

/// Keeps each row independently with its acceptance probability.
pub fn bias_sample(data: &LabeledDataset, env: &EnvironmentSpec, seed: u64) -> Result<LabeledDataset> {
    let probs = acceptance_probabilities(data, env)?;
    let mut rng = stream(seed, 2);
    let keep: Vec<usize> = probs
        .iter()
        .enumerate()
        .filter_map(|(i, &pr)| (rng.gen::<f64>() < pr).then_some(i))
        .collect();
    Ok(data.select_rows(&keep))
}

const MAX_POOL_ROWS: usize = 200_000;
const MAX_POOLS: u64 = 2_000;

/// Draws fresh candidate pools until `n_target` rows survive the bias filter.
/// Pool sizes follow the running acceptance-rate estimate.
pub fn sample_environment(
    cov: &CovariateConfig,
    spec: &BetaSpec,
    env: &EnvironmentSpec,
    n_target: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut kept: Option<LabeledDataset> = None;
    let (mut drawn, mut accepted) = (0usize, 0usize);
    for batch in 0..MAX_POOLS {
        let have = kept.as_ref().map_or(0, LabeledDataset::n);
        if have >= n_target {
            break;
        }
        let need = n_target - have;
        let rate = if accepted == 0 { 0.05 } else { accepted as f64 / drawn as f64 };
        let pool = ((need as f64 / rate * 1.2).ceil() as usize).clamp(256, MAX_POOL_ROWS);
        let batch_seed = derive_seed(seed, batch);
        let cfg = CovariateConfig { n: pool, seed: batch_seed, ..cov.clone() };
        let candidates = gen_outcome(&gen_covariates(&cfg)?, spec, batch_seed)?;
        let biased = bias_sample(&candidates, env, batch_seed)?;
        drawn += pool;
        accepted += biased.n();
        kept = Some(match kept {
            None => biased,
            Some(k) => k.concat(&biased)?,
        });
    }
    let kept = kept.ok_or(Error::EmptyInput)?;
    if kept.n() < n_target {
        return Err(Error::InvalidEnvironment(format!(
            "acceptance rate too low: {} of {n_target} rows after {drawn} candidates",
            kept.n()
        )));
    }
    Ok(kept.select_rows(&(0..n_target).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_count_rounds_forty_percent() {
        let c = |p| CovariateConfig::new(10, p, EnvKind::Linear, 0).stable_count().unwrap();
        assert_eq!(c(5), 2);
        assert_eq!(c(10), 4);
        assert_eq!(c(15), 6);
        assert_eq!(c(2), 1);
        assert!(CovariateConfig::new(10, 1, EnvKind::Linear, 0).stable_count().is_err());
    }

    #[test]
    fn layout_and_names() {
        let d = gen_covariates(&CovariateConfig::new(4, 5, EnvKind::Nonlinear, 1)).unwrap();
        assert_eq!(d.names, ["S1", "S2", "V1", "V2", "V3"]);
        assert_eq!(d.stable_mask, [true, true, false, false, false]);
        assert!(d.outcome.is_none());
    }

    #[test]
    fn interaction_needs_two_stable_features() {
        let mut d = LabeledDataset::new(DMatrix::from_row_slice(1, 2, &[2.0, 5.0]), vec!["a".into(), "b".into()]);
        d.stable_mask = vec![true, false];
        let spec = beta_pattern(1, 2).unwrap();
        assert!((outcome_signal(&d, &spec).unwrap()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn biased_subset_must_fit() {
        let mask = [true, true, false, false, false];
        assert_eq!(EnvironmentSpec::new(2.0).biased_columns(&mask).unwrap(), vec![2]);
        let big = EnvironmentSpec { biased_subset_size: Some(3), ..EnvironmentSpec::new(2.0) };
        assert!(big.biased_columns(&mask).is_err());
        let stable = EnvironmentSpec { family: BiasFamily::Stable, ..EnvironmentSpec::new(-2.0) };
        assert_eq!(stable.biased_columns(&mask).unwrap(), vec![0]);
    }

    #[test]
    fn environment_reaches_requested_size() {
        let cov = CovariateConfig::new(0, 5, EnvKind::Nonlinear, 3);
        let spec = beta_pattern(2, 5).unwrap();
        let d = sample_environment(&cov, &spec, &EnvironmentSpec::new(2.0), 300, 11).unwrap();
        assert_eq!(d.n(), 300);
        let again = sample_environment(&cov, &spec, &EnvironmentSpec::new(2.0), 300, 11).unwrap();
        assert_eq!(d, again);
    }
}
