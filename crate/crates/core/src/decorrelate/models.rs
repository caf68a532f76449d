//! Weighted logistic classifier and weighted epsilon-insensitive regressor.

use nalgebra::{DMatrix, DVector};

use super::weights::DecorrConfig;
use crate::model::{sigmoid, softplus, ModelKind, ModelParams};
use crate::svm::{fit_epsilon_svr, SmoSettings};
use crate::{Error, Result};

pub(crate) fn check_labels(y: &[u8]) -> Result<()> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::DegenerateLabels("only one class present".into()));
    }
    Ok(())
}

fn sample_costs(w: &[f64], c: f64, n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} weights", w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
    }
    Ok(w.iter().map(|v| v + c).collect())
}

struct Logistic<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    costs: Vec<f64>,
    lambda: f64,
}

impl Logistic<'_> {
    fn margins(&self, theta: &DVector<f64>) -> Vec<f64> {
        let p = self.x.ncols();
        (0..self.x.nrows())
            .map(|i| theta[p] + (0..p).map(|j| self.x[(i, j)] * theta[j]).sum::<f64>())
            .collect()
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let p = self.x.ncols();
        let z = self.margins(theta);
        let data: f64 = (0..z.len()).map(|i| self.costs[i] * (softplus(z[i]) - f64::from(self.y[i]) * z[i])).sum();
        data + self.lambda * theta.rows(0, p).norm_squared()
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (n, p) = self.x.shape();
        let z = self.margins(theta);
        let mut g = DVector::zeros(p + 1);
        let mut h = DMatrix::zeros(p + 1, p + 1);
        let mut row = vec![0.0; p + 1];
        for i in 0..n {
            let pr = sigmoid(z[i]);
            let r = self.costs[i] * (pr - f64::from(self.y[i]));
            let curv = self.costs[i] * pr * (1.0 - pr);
            for j in 0..p {
                row[j] = self.x[(i, j)];
            }
            row[p] = 1.0;
            for a in 0..=p {
                g[a] += r * row[a];
                if curv > 0.0 {
                    for b in a..=p {
                        h[(a, b)] += curv * row[a] * row[b];
                    }
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 0..p {
            g[j] += 2.0 * self.lambda * theta[j];
            h[(j, j)] += 2.0 * self.lambda;
        }
        (g, h)
    }

    /// Damped Newton iterations with Armijo backtracking.
    fn solve(&self, max_iters: usize) -> DVector<f64> {
        let p = self.x.ncols();
        let mut theta = DVector::zeros(p + 1);
        let mut f = self.objective(&theta);
        for _ in 0..max_iters {
            let (g, h) = self.gradient_hessian(&theta);
            let mut damping = 0.0;
            let step = loop {
                let mut hd = h.clone();
                for a in 0..=p {
                    hd[(a, a)] += damping;
                }
                if let Some(ch) = hd.cholesky() {
                    break -ch.solve(&g);
                }
                damping = if damping == 0.0 { 1e-10 * (1.0 + h.trace()) } else { damping * 10.0 };
            };
            let slope = g.dot(&step);
            if -slope <= 1e-26 * f.abs().max(1e-300) {
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &theta + &step * t;
                let fc = self.objective(&cand);
                if fc <= f + 1e-4 * t * slope {
                    let tiny = (&cand - &theta).amax() <= 1e-14 * (1.0 + theta.amax());
                    theta = cand;
                    f = fc;
                    moved = !tiny;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        theta
    }
}

/// Minimizes `Σ (W_i + C) logloss_i + λ3 ‖β‖²` with Newton's method.
pub fn fit_weighted_classifier(x: &DMatrix<f64>, y: &[u8], w: &[f64], cfg: &DecorrConfig) -> Result<ModelParams> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", y.len())));
    }
    check_labels(y)?;
    let costs = sample_costs(w, cfg.c, n)?;
    if costs.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig("all sample costs are zero".into()));
    }
    let problem = Logistic { x, y, costs, lambda: cfg.lambda3 };
    let theta = problem.solve(cfg.max_iters.max(100));
    let params = ModelParams { beta: theta.rows(0, p).iter().copied().collect(), intercept: theta[p], kind: ModelKind::Logistic };
    if !params.is_finite() {
        return Err(Error::Divergence("logistic coefficients are not finite".into()));
    }
    Ok(params)
}

/// Minimizes `½‖β‖² + Σ (C + W_i) max(0, |y_i − x_iβ − b| − ε)`, solved exactly
/// in the dual.
pub fn fit_weighted_svr(x: &DMatrix<f64>, y: &[f64], w: &[f64], cfg: &DecorrConfig) -> Result<ModelParams> {
    let costs = sample_costs(w, cfg.c, x.nrows())?;
    fit_epsilon_svr(x, y, &costs, cfg.epsilon, &SmoSettings::default())
}
