//! Reference estimators: least squares with optional L1/L2 penalty, plain
//! linear SVM and SVR, standard logistic regression, and DWR reweighting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decorrelate::models::check_labels;
use crate::decorrelate::{fit_weighted_classifier, fit_weighted_svr, DecorrConfig, SampleWeights, Task};
use crate::linalg::{reciprocal_condition, solve_spd, Standardizer};
use crate::model::{sigmoid, softplus, ModelKind, ModelParams};
use crate::optim::{minimize, DescentSettings, TrajectoryPoint};
use crate::svm::{fit_epsilon_svr, fit_hinge, SmoSettings};
use crate::synthdata::LabeledDataset;
use crate::{Error, Result};

const LASSO_TOLERANCE: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    #[default]
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearFitConfig {
    pub penalty: Penalty,
    pub lambda: f64,
    /// Per-sample cost of the SVM variants.
    pub c: f64,
    /// SVR tube half-width.
    pub epsilon: f64,
}

impl Default for LinearFitConfig {
    fn default() -> Self {
        Self { penalty: Penalty::None, lambda: 0.0, c: 1.0, epsilon: 0.1 }
    }
}

impl LinearFitConfig {
    pub fn ols() -> Self {
        Self::default()
    }

    pub fn ridge(lambda: f64) -> Self {
        Self { penalty: Penalty::L2, lambda, ..Self::default() }
    }

    pub fn lasso(lambda: f64) -> Self {
        Self { penalty: Penalty::L1, lambda, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and non-negative".into()));
        }
        if !(self.c >= 0.0 && self.c.is_finite() && self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("C and epsilon must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Centered copy of `x` with column means, and centered `y` with its mean.
fn center(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, Vec<f64>, DVector<f64>, f64) {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let ym = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    (xc, means, yc, ym)
}

fn intercept_for(beta: &[f64], means: &[f64], ym: f64) -> f64 {
    ym - beta.iter().zip(means).map(|(b, m)| b * m).sum::<f64>()
}

/// Soft-thresholding operator.
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes `‖y − Xβ − b‖² + λ‖β‖₁` by cyclic coordinate descent in
/// ascending column order, stopping when no coefficient moves by more than
/// the tolerance. The intercept is unpenalized.
fn lasso(xc: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let (_, p) = xc.shape();
    let norms: Vec<f64> = (0..p).map(|j| xc.column(j).norm_squared()).collect();
    let mut beta = vec![0.0; p];
    let mut resid = yc.clone();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut biggest = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho = col.dot(&resid) + norms[j] * beta[j];
            let next = shrink(rho, lambda / 2.0) / norms[j];
            let delta = next - beta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = next;
                biggest = biggest.max(delta.abs());
            }
        }
        if biggest < LASSO_TOLERANCE {
            return Ok(beta);
        }
    }
    Err(Error::Divergence(format!("lasso did not converge in {LASSO_MAX_SWEEPS} sweeps")))
}

/// OLS and ridge solve the centered normal equations; lasso runs coordinate
/// descent. All three minimize the unscaled residual sum of squares plus
/// `λ` times the penalty, with an unpenalized intercept.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], cfg: &LinearFitConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let (n, p) = x.shape();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} targets", y.len())));
    }
    let (xc, means, yc, ym) = center(x, y);
    let beta: Vec<f64> = match cfg.penalty {
        Penalty::L1 => lasso(&xc, &yc, cfg.lambda)?,
        Penalty::None | Penalty::L2 => {
            let mut gram = xc.transpose() * &xc;
            if cfg.penalty == Penalty::L2 {
                for j in 0..p {
                    gram[(j, j)] += cfg.lambda;
                }
            }
            let rhs = xc.transpose() * &yc;
            if p > 0 && reciprocal_condition(&gram) < 1e-14 {
                return Err(Error::SingularSystem(
                    "normal equations are singular; use a ridge penalty (penalty = l2, lambda > 0)".into(),
                ));
            }
            solve_spd(&gram, &rhs)
                .map_err(|_| {
                    Error::SingularSystem(
                        "normal equations are singular; use a ridge penalty (penalty = l2, lambda > 0)".into(),
                    )
                })?
                .iter()
                .copied()
                .collect()
        }
    };
    let intercept = intercept_for(&beta, &means, ym);
    Ok(ModelParams { beta, intercept, kind: ModelKind::Linear })
}

/// Weighted least squares `Σ ω_i (y_i − x_iβ − b)²`.
pub fn fit_weighted_linear(x: &DMatrix<f64>, y: &[f64], omega: &[f64]) -> Result<ModelParams> {
    let (n, p) = x.shape();
    if y.len() != n || omega.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows, {} targets, {} weights", y.len(), omega.len())));
    }
    if omega.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
    }
    let mut gram = DMatrix::zeros(p + 1, p + 1);
    let mut rhs = DVector::zeros(p + 1);
    let mut row = vec![0.0; p + 1];
    for i in 0..n {
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        row[p] = 1.0;
        for a in 0..=p {
            rhs[a] += omega[i] * row[a] * y[i];
            for b in 0..=p {
                gram[(a, b)] += omega[i] * row[a] * row[b];
            }
        }
    }
    let theta = solve_spd(&gram, &rhs)?;
    Ok(ModelParams { beta: theta.rows(0, p).iter().copied().collect(), intercept: theta[p], kind: ModelKind::Linear })
}

/// Linear hinge-loss SVM with cost `C` on every sample.
pub fn fit_svm(x: &DMatrix<f64>, labels: &[u8], cfg: &LinearFitConfig) -> Result<ModelParams> {
    cfg.validate()?;
    fit_hinge(x, labels, &vec![cfg.c; x.nrows()], &SmoSettings::default())
}

/// Linear epsilon-insensitive SVR with cost `C` on every sample.
pub fn fit_plain_svr(x: &DMatrix<f64>, y: &[f64], cfg: &LinearFitConfig) -> Result<ModelParams> {
    cfg.validate()?;
    fit_epsilon_svr(x, y, &vec![cfg.c; x.nrows()], cfg.epsilon, &SmoSettings::default())
}

/// `mean(logloss_i) + λ‖β‖²` minimized by gradient descent until the gradient's
/// largest entry is below `grad_tolerance`. Deliberately shares no code with
/// the Newton solver behind the weighted classifier.
pub fn fit_logistic(x: &DMatrix<f64>, labels: &[u8], lambda: f64, grad_tolerance: f64) -> Result<ModelParams> {
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    check_labels(labels)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let nf = n as f64;
    let settings = DescentSettings {
        max_iters: 200_000,
        step_size: 1.0,
        tolerance: 0.0,
        grad_tolerance,
        nonnegative: false,
    };
    let result = minimize(&vec![0.0; p + 1], &settings, |theta, want| {
        let mut value = lambda * theta[..p].iter().map(|b| b * b).sum::<f64>();
        let mut grad = want.then(|| vec![0.0; p + 1]);
        for i in 0..n {
            let z = theta[p] + (0..p).map(|j| x[(i, j)] * theta[j]).sum::<f64>();
            value += (softplus(z) - y[i] * z) / nf;
            if let Some(g) = grad.as_mut() {
                let r = (sigmoid(z) - y[i]) / nf;
                for j in 0..p {
                    g[j] += r * x[(i, j)];
                }
                g[p] += r;
            }
        }
        if let Some(g) = grad.as_mut() {
            for j in 0..p {
                g[j] += 2.0 * lambda * theta[j];
            }
        }
        Ok((value, grad))
    })?;
    if !result.converged {
        return Err(Error::Divergence("logistic regression did not reach the gradient tolerance".into()));
    }
    Ok(ModelParams { beta: result.x[..p].to_vec(), intercept: result.x[p], kind: ModelKind::Logistic })
}

/// Weighted first and second moments at the mean-one weights `ω`, and the
/// off-diagonal residual matrix `D_jl = mean(ω x_j x_l) − mean(ω x_j) mean(ω x_l)`.
fn dwr_moments(x: &DMatrix<f64>, omega: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let nf = n as f64;
    let m: Vec<f64> = (0..p).map(|j| (0..n).map(|i| omega[i] * x[(i, j)]).sum::<f64>() / nf).collect();
    let mut d = DMatrix::zeros(p, p);
    for j in 0..p {
        for l in (j + 1)..p {
            let a = (0..n).map(|i| omega[i] * x[(i, j)] * x[(i, l)]).sum::<f64>() / nf;
            d[(j, l)] = a - m[j] * m[l];
            d[(l, j)] = d[(j, l)];
        }
    }
    (m, d)
}

fn mean_one(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidConfig("weights must be non-negative with a positive finite sum".into()));
    }
    let n = w.len() as f64;
    Ok((w.iter().map(|v| v * n / total).collect(), total))
}

/// `Σ_j Σ_{l≠j} (mean(ω x_j x_l) − mean(ω x_j) mean(ω x_l))²` at `ω = nW/ΣW`,
/// with its gradient with respect to `W` when requested.
pub fn dwr_penalty_eval(x: &DMatrix<f64>, w: &[f64], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let (n, p) = x.shape();
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} weights", w.len())));
    }
    if p < 2 {
        return Err(Error::InvalidConfig("need at least two features".into()));
    }
    let (omega, total) = mean_one(w)?;
    let (m, d) = dwr_moments(x, &omega);
    let value = d.norm_squared();
    if !with_grad {
        return Ok((value, None));
    }
    let nf = n as f64;
    let dm = &d * DVector::from_vec(m);
    // dP/dω_i = (2/n)(x_iᵀ D x_i − 2 mᵀ D x_i)
    let g_omega: Vec<f64> = (0..n)
        .map(|i| {
            let xi = x.row(i).transpose();
            let quad = xi.dot(&(&d * &xi));
            (2.0 / nf) * (quad - 2.0 * dm.dot(&xi))
        })
        .collect();
    let centre: f64 = g_omega.iter().zip(&omega).map(|(g, o)| g * o).sum::<f64>() / nf;
    Ok((value, Some(g_omega.iter().map(|g| (nf / total) * (g - centre)).collect())))
}

pub fn dwr_penalty(x: &DMatrix<f64>, w: &[f64]) -> Result<f64> {
    Ok(dwr_penalty_eval(x, w, false)?.0)
}

/// Minimizes `γ · dwr_penalty(W) + λ1‖W‖² + λ2(ΣW − 1)²` over `W ⪰ 0` with
/// the optimizer used for the decorrelation weights, from uniform weights.
/// Reads `gamma`, `lambda1`, `lambda2` and the descent settings from `cfg`.
pub fn dwr_weights(x: &DMatrix<f64>, cfg: &DecorrConfig) -> Result<(SampleWeights, Vec<TrajectoryPoint>)> {
    cfg.validate()?;
    let (n, p) = x.shape();
    if p < 2 {
        return Err(Error::InvalidConfig("need at least two features".into()));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let settings = DescentSettings {
        max_iters: cfg.max_iters,
        step_size: cfg.step_size,
        tolerance: cfg.tolerance,
        grad_tolerance: 0.0,
        nonnegative: true,
    };
    let init = SampleWeights::uniform(n);
    let result = minimize(&init.w, &settings, |w, want| {
        let sum: f64 = w.iter().sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        let reg = cfg.lambda1 * sq + cfg.lambda2 * (sum - 1.0).powi(2);
        let mut grad = want.then(|| w.iter().map(|v| 2.0 * cfg.lambda1 * v + 2.0 * cfg.lambda2 * (sum - 1.0)).collect::<Vec<_>>());
        if cfg.gamma == 0.0 {
            return Ok((reg, grad));
        }
        if sum <= 0.0 {
            return Ok((f64::INFINITY, grad.map(|g| vec![0.0; g.len()])));
        }
        let (r, g) = dwr_penalty_eval(x, w, want)?;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += cfg.gamma * gi;
            }
        }
        Ok((cfg.gamma * r + reg, grad))
    })?;
    Ok((SampleWeights { w: result.x }, result.trajectory))
}

/// DWR weights learned on standardized features, then the weighted SVR (or,
/// for classification, the weighted logistic model) with per-sample costs
/// equal to the mean-one weights and no offset: `cfg.c` is ignored, so `γ = 0`
/// gives the plain model with unit costs.
pub fn fit_dwr_svm(data: &LabeledDataset, cfg: &DecorrConfig, task: Task) -> Result<(SampleWeights, ModelParams)> {
    let xs = Standardizer::fit(&data.features).transform(&data.features);
    let (weights, _) = dwr_weights(&xs, cfg)?;
    let omega = weights.mean_one();
    let model_cfg = DecorrConfig { c: 0.0, ..cfg.clone() };
    let y = data.outcome()?;
    let model = match task {
        Task::Regression => fit_weighted_svr(&data.features, y, &omega, &model_cfg)?,
        Task::Classification => {
            let labels = crate::decorrelate::labels_of(y)?;
            fit_weighted_classifier(&data.features, &labels, &omega, &model_cfg)?
        }
    };
    Ok((weights, model))
}

/// DWR weights followed by weighted least squares, the estimator DWR was
/// introduced with.
pub fn fit_dwr_regression(data: &LabeledDataset, cfg: &DecorrConfig) -> Result<(SampleWeights, ModelParams)> {
    let xs = Standardizer::fit(&data.features).transform(&data.features);
    let (weights, _) = dwr_weights(&xs, cfg)?;
    let model = fit_weighted_linear(&data.features, data.outcome()?, &weights.mean_one())?;
    Ok((weights, model))
}
