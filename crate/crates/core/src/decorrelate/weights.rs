//! Sample-weight learning and initialization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::penalty::{penalty_eval, RelationTarget};
use crate::linalg::std_dev;
use crate::optim::{minimize, DescentSettings, TrajectoryPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub w: Vec<f64>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Rescaled to average one, the scale the weighted models expect.
    pub fn mean_one(&self) -> Vec<f64> {
        let s = self.sum();
        let n = self.w.len() as f64;
        self.w.iter().map(|v| v * n / s).collect()
    }

    /// Kish effective sample size.
    pub fn effective_size(&self) -> f64 {
        let s = self.sum();
        s * s / self.w.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    Uniform,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecorrConfig {
    /// Polynomial degree of the pairwise relations.
    pub degree: usize,
    pub gamma: f64,
    /// Weight on `‖W‖²`. Its effect scales like `λ1 / n`; see [`DecorrConfig::scaled_for`].
    pub lambda1: f64,
    /// Weight on `(ΣW − 1)²`.
    pub lambda2: f64,
    /// L2 penalty on model coefficients.
    pub lambda3: f64,
    /// Offset added to every sample weight in the model loss.
    pub c: f64,
    /// Tube half-width of the weighted SVR.
    pub epsilon: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
    pub target: RelationTarget,
    pub init: WeightInit,
    /// Outer alternations in joint mode.
    pub joint_rounds: usize,
}

impl Default for DecorrConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            gamma: 1.0,
            lambda1: 100.0,
            lambda2: 100.0,
            lambda3: 1e-3,
            c: 0.5,
            epsilon: 0.1,
            max_iters: 1000,
            step_size: 1.0,
            tolerance: 1e-10,
            target: RelationTarget::Partner,
            init: WeightInit::Uniform,
            joint_rounds: 5,
        }
    }
}

impl DecorrConfig {
    /// Sets both weight penalties to `spread · n`, which keeps the trade-off
    /// against the scale-free decorrelation penalty independent of `n`.
    pub fn scaled_for(mut self, n: usize, spread: f64) -> Self {
        self.lambda1 = spread * n as f64;
        self.lambda2 = spread * n as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::InvalidConfig("degree must be at least 1".into()));
        }
        let weights = [self.gamma, self.lambda1, self.lambda2, self.lambda3, self.c, self.epsilon];
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("penalty weights, C and epsilon must be finite and non-negative".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn descent(&self, max_iters: usize) -> DescentSettings {
        DescentSettings {
            max_iters,
            step_size: self.step_size,
            tolerance: self.tolerance,
            grad_tolerance: 0.0,
            nonnegative: true,
        }
    }
}

/// `λ1‖W‖² + λ2(ΣW − 1)²` and its gradient.
pub(crate) fn weight_regularizer(w: &[f64], lambda1: f64, lambda2: f64) -> (f64, Vec<f64>) {
    let sum: f64 = w.iter().sum();
    let sq: f64 = w.iter().map(|v| v * v).sum();
    let value = lambda1 * sq + lambda2 * (sum - 1.0).powi(2);
    let shared = 2.0 * lambda2 * (sum - 1.0);
    (value, w.iter().map(|v| 2.0 * lambda1 * v + shared).collect())
}

/// Value and gradient of `γR(W) + λ1‖W‖² + λ2(ΣW−1)²`. A zero weight sum
/// leaves `R` undefined and is reported as `+∞`.
pub(crate) fn objective(
    x: &DMatrix<f64>,
    w: &[f64],
    cfg: &DecorrConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let (reg, mut grad) = weight_regularizer(w, cfg.lambda1, cfg.lambda2);
    if cfg.gamma == 0.0 {
        return Ok((reg, with_grad.then_some(grad)));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Ok((f64::INFINITY, with_grad.then(|| vec![0.0; w.len()])));
    }
    let (r, g) = penalty_eval(x, w, cfg.degree, &cfg.target, with_grad)?;
    if let Some(g) = g {
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += cfg.gamma * gi;
        }
    }
    Ok((cfg.gamma * r + reg, with_grad.then_some(grad)))
}

/// Minimizes `γR(W) + λ1‖W‖² + λ2(ΣW−1)²` over `W ⪰ 0` by projected gradient
/// descent with backtracking. Returns the weights and the objective trajectory.
pub fn learn_weights(
    x: &DMatrix<f64>,
    cfg: &DecorrConfig,
    init: &SampleWeights,
) -> Result<(SampleWeights, Vec<TrajectoryPoint>)> {
    cfg.validate()?;
    if init.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows but {} initial weights", x.nrows(), init.len())));
    }
    if init.w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || init.sum() <= 0.0 {
        return Err(Error::InvalidConfig("initial weights must be non-negative with positive sum".into()));
    }
    let result = minimize(&init.w, &cfg.descent(cfg.max_iters), |w, g| objective(x, w, cfg, g))?;
    Ok((SampleWeights { w: result.x }, result.trajectory))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h_j = σ_j n^(-1/(d+4))`.
    Scott,
    /// Scott's rule times `(4/(d+2))^(1/(d+4))`.
    Silverman,
    /// The same bandwidth for every feature.
    Fixed(f64),
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weights proportional to the ratio of the product of marginal Gaussian KDEs
/// to the product-kernel joint KDE, normalized to sum to one. Constant columns
/// cancel from the ratio and are skipped.
pub fn kde_init_weights(x: &DMatrix<f64>, rule: BandwidthRule) -> Result<SampleWeights> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::InvalidConfig("kernel density weights need at least two samples".into()));
    }
    if let BandwidthRule::Fixed(h) = rule {
        if !(h > 0.0) {
            return Err(Error::ZeroBandwidth);
        }
    }
    let cols: Vec<usize> = (0..p).filter(|&j| std_dev(x.column(j).as_slice()) > 0.0).collect();
    if cols.is_empty() {
        return Ok(SampleWeights::uniform(n));
    }
    let d = cols.len() as f64;
    let scott = (n as f64).powf(-1.0 / (d + 4.0));
    let h: Vec<f64> = cols
        .iter()
        .map(|&j| match rule {
            BandwidthRule::Scott => std_dev(x.column(j).as_slice()) * scott,
            BandwidthRule::Silverman => {
                std_dev(x.column(j).as_slice()) * scott * (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0))
            }
            BandwidthRule::Fixed(h) => h,
        })
        .collect();
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::ZeroBandwidth);
    }

    // Normalizing constants cancel between numerator and denominator up to a
    // common factor, which the final normalization removes.
    let log_w: Vec<f64> = (0..n)
        .map(|i| {
            let mut joint = vec![0.0; n];
            let mut log_marginals = 0.0;
            for (c, &j) in cols.iter().enumerate() {
                let xi = x[(i, j)];
                let terms: Vec<f64> = (0..n)
                    .map(|l| {
                        let z = (xi - x[(l, j)]) / h[c];
                        -0.5 * z * z
                    })
                    .collect();
                log_marginals += log_sum_exp(&terms);
                for (acc, t) in joint.iter_mut().zip(&terms) {
                    *acc += t;
                }
            }
            log_marginals - log_sum_exp(&joint)
        })
        .collect();
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(SampleWeights { w: raw.iter().map(|v| v / total).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularizer_gradient_matches_formula() {
        let w = [0.2, 0.5, 0.1];
        let (v, g) = weight_regularizer(&w, 2.0, 3.0);
        assert!((v - (2.0 * 0.3 + 3.0 * 0.04)).abs() < 1e-12);
        assert!((g[0] - (0.8 - 1.2)).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_uniform_kde_weights() {
        let x = DMatrix::from_element(5, 3, 1.5);
        let w = kde_init_weights(&x, BandwidthRule::Scott).unwrap();
        assert_eq!(w, SampleWeights::uniform(5));
        assert!(matches!(kde_init_weights(&x, BandwidthRule::Fixed(0.0)), Err(Error::ZeroBandwidth)));
    }

    #[test]
    fn effective_size_of_uniform_is_n() {
        assert!((SampleWeights::uniform(40).effective_size() - 40.0).abs() < 1e-9);
    }
}
