//! Fitted linear model parameters shared by every estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Svr,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub kind: ModelKind,
}

impl ModelParams {
    pub fn zeros(p: usize, kind: ModelKind) -> Self {
        Self { beta: vec![0.0; p], intercept: 0.0, kind }
    }

    /// `x β + b` per row.
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + (0..x.ncols()).map(|j| x[(i, j)] * self.beta[j]).sum::<f64>())
            .collect()
    }

    /// Regression output, or the positive-class probability for logistic models.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let d = self.decision(x);
        match self.kind {
            ModelKind::Logistic => d.into_iter().map(sigmoid).collect(),
            _ => d,
        }
    }

    /// Class 1 where the decision value is positive.
    pub fn predict_labels(&self, x: &DMatrix<f64>) -> Vec<u8> {
        self.decision(x).into_iter().map(|v| u8::from(v > 0.0)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.beta.iter().all(|b| b.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
