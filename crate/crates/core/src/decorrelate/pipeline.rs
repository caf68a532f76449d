//! End-to-end fit: learn decorrelating weights, then the weighted model.

use serde::{Deserialize, Serialize};

use super::models::{fit_weighted_classifier, fit_weighted_svr};
use super::weights::{kde_init_weights, learn_weights, objective, BandwidthRule, DecorrConfig, SampleWeights, WeightInit};
use crate::linalg::Standardizer;
use crate::model::{softplus, ModelParams};
use crate::optim::{minimize, TrajectoryPoint};
use crate::synthdata::LabeledDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    TwoStage,
    Joint,
}

#[derive(Debug, Clone)]
pub struct CrtreFit {
    /// Raw learned weights.
    pub weights: SampleWeights,
    pub model: ModelParams,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Converts a 0/1 real outcome to class labels.
pub fn labels_of(y: &[f64]) -> Result<Vec<u8>> {
    y.iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            _ => Err(Error::InvalidConfig(format!("classification outcome {v} is not 0/1"))),
        })
        .collect()
}

fn fit_model(data: &LabeledDataset, omega: &[f64], cfg: &DecorrConfig, task: Task) -> Result<ModelParams> {
    let y = data.outcome()?;
    match task {
        Task::Classification => fit_weighted_classifier(&data.features, &labels_of(y)?, omega, cfg),
        Task::Regression => fit_weighted_svr(&data.features, y, omega, cfg),
    }
}

fn per_sample_loss(data: &LabeledDataset, model: &ModelParams, cfg: &DecorrConfig, task: Task) -> Result<Vec<f64>> {
    let y = data.outcome()?;
    let z = model.decision(&data.features);
    Ok(match task {
        Task::Classification => z.iter().zip(y).map(|(z, y)| softplus(*z) - y * z).collect(),
        Task::Regression => z.iter().zip(y).map(|(z, y)| ((y - z).abs() - cfg.epsilon).max(0.0)).collect(),
    })
}

/// Weights are learned on standardized features; the model is fit on the
/// original features with the weights rescaled to mean one plus the offset C.
pub fn crtre_fit(data: &LabeledDataset, cfg: &DecorrConfig, task: Task, mode: FitMode) -> Result<CrtreFit> {
    cfg.validate()?;
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if data.missing_count() > 0 {
        return Err(Error::InvalidConfig("impute missing cells before fitting".into()));
    }
    let xs = Standardizer::fit(&data.features).transform(&data.features);
    let init = match cfg.init {
        WeightInit::Uniform => SampleWeights::uniform(n),
        WeightInit::Kde => kde_init_weights(&xs, BandwidthRule::Scott)?,
    };

    match mode {
        FitMode::TwoStage => {
            let (weights, trajectory) = learn_weights(&xs, cfg, &init)?;
            let model = fit_model(data, &weights.mean_one(), cfg, task)?;
            Ok(CrtreFit { weights, model, trajectory })
        }
        FitMode::Joint => {
            let rounds = cfg.joint_rounds.max(1);
            let inner = (cfg.max_iters / rounds).max(1);
            let mut weights = init;
            let mut trajectory = Vec::new();
            for round in 0..rounds {
                let model = fit_model(data, &weights.mean_one(), cfg, task)?;
                let loss = per_sample_loss(data, &model, cfg, task)?;
                let result = minimize(&weights.w, &cfg.descent(inner), |w, want| {
                    let (v, g) = objective(&xs, w, cfg, want)?;
                    let fit: f64 = w.iter().zip(&loss).map(|(w, l)| w * l).sum();
                    Ok((v + fit, g.map(|g| g.iter().zip(&loss).map(|(g, l)| g + l).collect())))
                })?;
                let offset = trajectory.len();
                trajectory.extend(result.trajectory.into_iter().map(|mut t| {
                    t.iter += offset;
                    t
                }));
                weights = SampleWeights { w: result.x };
                if weights.sum() <= 0.0 {
                    return Err(Error::Divergence(format!("all weights vanished in joint round {round}")));
                }
            }
            let model = fit_model(data, &weights.mean_one(), cfg, task)?;
            Ok(CrtreFit { weights, model, trajectory })
        }
    }
}
