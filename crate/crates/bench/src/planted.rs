//! Binary-feature classification data with known per-feature effects, used
//! by the counterfactual experiment.

use crtre_core::model::sigmoid;
use crtre_core::rng::stream;
use crtre_core::synthdata::LabeledDataset;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n: usize,
    /// Log-odds effect of each binary feature.
    pub effects: Vec<f64>,
    pub intercept: f64,
    /// Probability that a feature is on.
    pub prevalence: f64,
    /// Chance that a feature copies the row's shared coin.
    pub shared: f64,
    /// Size of the clean sample that fixes the reference coefficient signs.
    pub oracle_n: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            effects: vec![2.0, 1.5, 1.0, -1.0, -1.5, -0.5, 0.0],
            intercept: 0.0,
            prevalence: 0.3,
            shared: 0.5,
            oracle_n: 20_000,
        }
    }
}

/// Each row draws one shared coin; feature `j` copies it with probability
/// `shared` and otherwise draws its own, both on with probability
/// `prevalence`. The label is Bernoulli with log-odds
/// `intercept + Σ effects_j x_j`. Features are named `f1, f2, ...`.
pub fn planted_rows(cfg: &PlantedConfig, n: usize, seed: u64) -> LabeledDataset {
    let p = cfg.effects.len();
    let mut rng = stream(seed, 7);
    let mut features = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let common = rng.gen::<f64>() < cfg.prevalence;
        let mut z = cfg.intercept;
        for j in 0..p {
            let on = if rng.gen::<f64>() < cfg.shared { common } else { rng.gen::<f64>() < cfg.prevalence };
            features[(i, j)] = f64::from(u8::from(on));
            if on {
                z += cfg.effects[j];
            }
        }
        labels.push(f64::from(u8::from(rng.gen::<f64>() < sigmoid(z))));
    }
    let names = (1..=p).map(|j| format!("f{j}")).collect();
    let mut data = LabeledDataset::new(features, names);
    data.outcome = Some(labels);
    data
}
