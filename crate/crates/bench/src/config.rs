//! Experiment configuration, read from a single JSON file.

use std::fmt;
use std::path::{Path, PathBuf};

use crtre_core::decorrelate::{DecorrConfig, FitMode};
use crtre_core::evalmetrics::SurgeryDirection;
use crtre_core::rulemine::MiningConfig;
use crtre_core::ruleselect::SelectionConfig;
use crtre_core::synthdata::EnvKind;
use serde::{Deserialize, Serialize};

use crate::planted::PlantedConfig;

/// Seeds per cell in `--fast` mode.
pub const FAST_SEEDS: usize = 5;
pub const DEFAULT_SEEDS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Grid,
    EnvShift,
    Hyper,
    Counterfactual,
    Mine,
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "OLS")]
    Ols,
    Lasso,
    Ridge,
    /// Linear SVR for regression, hinge SVM for classification.
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "DWR")]
    Dwr,
    #[serde(rename = "DWR_SVM")]
    DwrSvm,
    #[serde(rename = "CRTRE")]
    Crtre,
    Logistic,
}

impl ModelName {
    pub const REGRESSION: [ModelName; 7] = [
        ModelName::Ols,
        ModelName::Lasso,
        ModelName::Ridge,
        ModelName::Svm,
        ModelName::Dwr,
        ModelName::DwrSvm,
        ModelName::Crtre,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelName::Ols => "OLS",
            ModelName::Lasso => "Lasso",
            ModelName::Ridge => "Ridge",
            ModelName::Svm => "SVM",
            ModelName::Dwr => "DWR",
            ModelName::DwrSvm => "DWR_SVM",
            ModelName::Crtre => "CRTRE",
            ModelName::Logistic => "Logistic",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv { path: PathBuf, #[serde(default = "label_column")] label: String },
}

fn label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    pub n: usize,
    pub p: usize,
    pub env_kind: EnvKind,
    pub p_stable: Option<usize>,
    /// Bias rate of the training environment; unbiased when absent.
    pub train_r: Option<f64>,
    /// Replace the outcome with median-split labels.
    pub classification: bool,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self { n: 1000, p: 5, env_kind: EnvKind::Nonlinear, p_stable: None, train_r: Some(2.0), classification: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSettings {
    pub lasso_lambda: f64,
    pub ridge_lambda: f64,
    /// Cost of the plain SVM/SVR.
    pub c: f64,
    pub epsilon: f64,
    /// L2 penalty of the unweighted logistic model.
    pub logistic_lambda: f64,
}

impl Default for LinearSettings {
    fn default() -> Self {
        Self { lasso_lambda: 10.0, ridge_lambda: 1e-6, c: 1.0, epsilon: 0.1, logistic_lambda: 1e-3 }
    }
}

/// Sample-weight learner settings. When `spread` is set, both weight
/// penalties become `spread · n` for the training size at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightSettings {
    pub decorr: DecorrConfig,
    pub spread: Option<f64>,
    pub mode: FitMode,
}

impl Default for WeightSettings {
    fn default() -> Self {
        Self { decorr: DecorrConfig::default(), spread: Some(0.1), mode: FitMode::TwoStage }
    }
}

impl WeightSettings {
    pub fn for_size(&self, n: usize) -> DecorrConfig {
        match self.spread {
            Some(s) => self.decorr.clone().scaled_for(n, s),
            None => self.decorr.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub ns: Vec<usize>,
    pub ps: Vec<usize>,
    pub env_kind: EnvKind,
    pub train_r: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { ns: vec![1000, 2000, 3000], ps: vec![5, 10, 15], env_kind: EnvKind::Nonlinear, train_r: Some(2.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvShiftConfig {
    pub n: usize,
    pub p: usize,
    pub env_kind: EnvKind,
    pub train_r: f64,
    pub test_r: Vec<f64>,
    pub n_test: usize,
}

impl Default for EnvShiftConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            p: 5,
            env_kind: EnvKind::Nonlinear,
            train_r: 2.0,
            test_r: vec![-3.0, -2.5, -2.0, -1.5, 1.5, 2.0, 2.5, 3.0],
            n_test: 2000,
        }
    }
}

/// The grid values enter the weight learner as `gamma = γ · gamma_unit` and
/// `lambda1 = lambda2 = λ · lambda_unit · n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cs: Vec<f64>,
    pub gamma_unit: f64,
    pub lambda_unit: f64,
    pub n: usize,
    pub p: usize,
    pub env_kind: EnvKind,
    pub train_r: Option<f64>,
    pub test_r: f64,
    pub n_test: usize,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            gammas: vec![600.0, 800.0, 1000.0],
            lambdas: vec![0.0001, 0.0005, 0.001],
            cs: vec![0.0, 0.5, 1.0],
            gamma_unit: 1.0 / 600.0,
            lambda_unit: 200.0,
            n: 2000,
            p: 5,
            env_kind: EnvKind::Nonlinear,
            train_r: Some(2.0),
            test_r: -2.0,
            n_test: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    pub planted: PlantedConfig,
    pub bins: usize,
    pub mining: MiningConfig,
    pub selection: SelectionConfig,
    pub direction: SurgeryDirection,
    /// Share of rows held out before surgery.
    pub test_fraction: f64,
    /// Also run the pipeline without surgery.
    pub control: bool,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            planted: PlantedConfig::default(),
            bins: 3,
            mining: MiningConfig { min_support: 0.03, min_confidence: 0.6, max_len: 2 },
            selection: SelectionConfig { max_rules: 20, min_rules: 5, ..SelectionConfig::default() },
            direction: SurgeryDirection::IntoTrain,
            test_fraction: 0.3,
            control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub models: Vec<ModelName>,
    /// Input for `mine`, `select` and `fit`.
    pub data: Option<DataSource>,
    pub grid: GridConfig,
    pub env_shift: EnvShiftConfig,
    pub hyper: HyperConfig,
    pub counterfactual: CounterfactualConfig,
    pub linear: LinearSettings,
    pub crtre: WeightSettings,
    pub dwr: WeightSettings,
    pub bins: usize,
    pub mining: MiningConfig,
    pub selection: SelectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Grid,
            seeds: (0..DEFAULT_SEEDS).collect(),
            out_dir: PathBuf::from("out"),
            models: ModelName::REGRESSION.to_vec(),
            data: None,
            grid: GridConfig::default(),
            env_shift: EnvShiftConfig::default(),
            hyper: HyperConfig::default(),
            counterfactual: CounterfactualConfig::default(),
            linear: LinearSettings::default(),
            crtre: WeightSettings::default(),
            dwr: WeightSettings::default(),
            bins: 3,
            mining: MiningConfig::default(),
            selection: SelectionConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Keeps the first few seeds only.
    pub fn fast(mut self) -> Self {
        self.seeds.truncate(FAST_SEEDS);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(bad("at least one seed is required"));
        }
        if self.models.is_empty() {
            return Err(bad("model list is empty"));
        }
        if let Some(DataSource::Csv { path, .. }) = &self.data {
            if !path.exists() {
                return Err(bad(format!("data file {} does not exist", path.display())));
            }
        }
        let rates = self.env_shift.test_r.iter().chain([&self.env_shift.train_r, &self.hyper.test_r]);
        let trains = [self.grid.train_r, self.hyper.train_r];
        if rates.chain(trains.iter().flatten()).any(|r| !(r.abs() > 1.0)) {
            return Err(bad("every bias rate r must satisfy |r| > 1"));
        }
        if self.grid.ns.is_empty() || self.grid.ps.is_empty() || self.env_shift.test_r.is_empty() {
            return Err(bad("grid axes and test_r must be non-empty"));
        }
        let h = &self.hyper;
        if h.gammas.is_empty() || h.lambdas.is_empty() || h.cs.is_empty() {
            return Err(bad("hyperparameter axes must be non-empty"));
        }
        if !(0.0..1.0).contains(&self.counterfactual.test_fraction) || self.counterfactual.test_fraction == 0.0 {
            return Err(bad("test_fraction must lie in (0, 1)"));
        }
        for w in [&self.crtre, &self.dwr] {
            w.decorr.validate().map_err(|e| bad(e.to_string()))?;
        }
        self.selection.validate().map_err(|e| bad(e.to_string()))?;
        self.counterfactual.selection.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}
