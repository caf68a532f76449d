//! The four experiment families. Every (cell, seed) job is independent and
//! runs on the ambient rayon pool; records come back in job order.

use anyhow::{anyhow, bail, Result};
use crtre_core::baselines::{
    fit_dwr_regression, fit_dwr_svm, fit_linear, fit_logistic, fit_plain_svr, fit_svm, LinearFitConfig,
};
use crtre_core::decorrelate::{crtre_fit, DecorrConfig, ModelParams, Task};
use crtre_core::evalmetrics::{beta_error, classification_report, counterfactual_split, rmse, spearman};
use crtre_core::rng::{derive_seed, stream};
use crtre_core::rulemine::{apriori, rule_matrix, Rule};
use crtre_core::ruleselect::select_rules;
use crtre_core::synthdata::{
    beta_pattern, gen_covariates, gen_outcome, sample_environment, BetaSpec, CovariateConfig, EnvKind,
    EnvironmentSpec, LabeledDataset,
};
use crtre_core::tabular::{discretize, ItemizedDataset};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelName, WeightSettings};
use crate::planted::planted_rows;
use crate::report::{Chart, Failure, Record, Report};
use crate::svg::Series;

/// Tolerance for the unweighted logistic fit.
const LOGISTIC_GRAD_TOL: f64 = 1e-7;

#[derive(Default)]
struct JobOutput {
    records: Vec<Record>,
    failures: Vec<Failure>,
}

impl JobOutput {
    fn push(&mut self, cell: &str, model: &str, metric: &str, value: f64, seed: u64) {
        self.records.push(Record { cell: cell.into(), model: model.into(), metric: metric.into(), value, seed });
    }

    fn fail(&mut self, cell: &str, model: &str, seed: u64, error: impl ToString) {
        self.failures.push(Failure { cell: cell.into(), model: model.into(), seed, error: error.to_string() });
    }
}

fn merge(report: &mut Report, outputs: Vec<JobOutput>) {
    for o in outputs {
        report.records.extend(o.records);
        report.failures.extend(o.failures);
    }
}

fn config_echo(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn weights_for(settings: &WeightSettings, n: usize) -> DecorrConfig {
    settings.for_size(n)
}

pub fn fit_regression(model: ModelName, data: &LabeledDataset, cfg: &ExperimentConfig) -> Result<ModelParams> {
    let x = &data.features;
    let y = data.outcome()?;
    let lin = &cfg.linear;
    let plain = LinearFitConfig { c: lin.c, epsilon: lin.epsilon, ..LinearFitConfig::default() };
    Ok(match model {
        ModelName::Ols => fit_linear(x, y, &LinearFitConfig::ols())?,
        ModelName::Lasso => fit_linear(x, y, &LinearFitConfig::lasso(lin.lasso_lambda))?,
        ModelName::Ridge => fit_linear(x, y, &LinearFitConfig::ridge(lin.ridge_lambda))?,
        ModelName::Svm => fit_plain_svr(x, y, &plain)?,
        ModelName::Dwr => fit_dwr_regression(data, &weights_for(&cfg.dwr, data.n()))?.1,
        ModelName::DwrSvm => fit_dwr_svm(data, &weights_for(&cfg.dwr, data.n()), Task::Regression)?.1,
        ModelName::Crtre => {
            crtre_fit(data, &weights_for(&cfg.crtre, data.n()), Task::Regression, cfg.crtre.mode)?.model
        }
        ModelName::Logistic => bail!("Logistic is a classifier"),
    })
}

/// `x` holds rule columns, `labels` are 0/1.
pub fn fit_classifier(model: ModelName, x: &DMatrix<f64>, labels: &[u8], cfg: &ExperimentConfig) -> Result<ModelParams> {
    let lin = &cfg.linear;
    let data = || {
        let mut d = LabeledDataset::new(x.clone(), (0..x.ncols()).map(|j| format!("r{j}")).collect());
        d.outcome = Some(labels.iter().map(|&l| f64::from(l)).collect());
        d
    };
    Ok(match model {
        ModelName::Logistic => fit_logistic(x, labels, lin.logistic_lambda, LOGISTIC_GRAD_TOL)?,
        ModelName::Svm => fit_svm(x, labels, &LinearFitConfig { c: lin.c, ..LinearFitConfig::default() })?,
        ModelName::DwrSvm => fit_dwr_svm(&data(), &weights_for(&cfg.dwr, x.nrows()), Task::Classification)?.1,
        ModelName::Crtre => {
            crtre_fit(&data(), &weights_for(&cfg.crtre, x.nrows()), Task::Classification, cfg.crtre.mode)?.model
        }
        other => bail!("{other} is not a classifier"),
    })
}

fn covariates(env_kind: EnvKind, n: usize, p: usize, seed: u64) -> CovariateConfig {
    CovariateConfig::new(n, p, env_kind, seed)
}

/// Training or test sample: biased by `r` when given, plain otherwise.
fn environment(cov: &CovariateConfig, spec: &BetaSpec, r: Option<f64>, seed: u64) -> Result<LabeledDataset> {
    Ok(match r {
        Some(r) => sample_environment(cov, spec, &EnvironmentSpec::new(r), cov.n, seed)?,
        None => gen_outcome(&gen_covariates(&CovariateConfig { seed, ..cov.clone() })?, spec, seed)?,
    })
}

fn record_beta(out: &mut JobOutput, cell: &str, model: &str, seed: u64, est: &ModelParams, spec: &BetaSpec, mask: &[bool]) {
    match beta_error(est, spec, mask) {
        Ok(b) => {
            for (metric, v) in [
                ("beta_s_error", b.beta_s_error),
                ("beta_v_error", b.beta_v_error),
                ("beta_error", b.beta_error),
                ("beta_s_sum", b.beta_s_sum),
                ("beta_v_sum", b.beta_v_sum),
                ("beta_sum", b.beta_sum),
            ] {
                out.push(cell, model, metric, v, seed);
            }
        }
        Err(e) => out.fail(cell, model, seed, e),
    }
}

pub fn grid_cell_name(n: usize, p: usize) -> String {
    format!("n={n},m={p}")
}

/// Coefficient errors for every model on every `(n, m)` cell.
pub fn run_synthetic_grid(cfg: &ExperimentConfig) -> Report {
    let g = &cfg.grid;
    let cells: Vec<(usize, usize)> = g.ns.iter().flat_map(|&n| g.ps.iter().map(move |&p| (n, p))).collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let (n, p) = cells[c];
            let cell = grid_cell_name(n, p);
            let mut out = JobOutput::default();
            let data_seed = derive_seed(seed, c as u64);
            let cov = covariates(g.env_kind, n, p, data_seed);
            let prepared = cov
                .stable_count()
                .and_then(|ps| beta_pattern(ps, p))
                .map_err(anyhow::Error::from)
                .and_then(|spec| Ok((environment(&cov, &spec, g.train_r, data_seed)?, spec)));
            let (data, spec) = match prepared {
                Ok(d) => d,
                Err(e) => {
                    out.fail(&cell, "data", seed, e);
                    return out;
                }
            };
            for &model in &cfg.models {
                match fit_regression(model, &data, cfg) {
                    Ok(est) => record_beta(&mut out, &cell, model.label(), seed, &est, &spec, &data.stable_mask),
                    Err(e) => out.fail(&cell, model.label(), seed, e),
                }
            }
            out
        })
        .collect();
    let mut report = Report::new("grid", &cfg.seeds, config_echo(cfg));
    merge(&mut report, outputs);

    for &p in &g.ps {
        let series = cfg
            .models
            .iter()
            .map(|m| {
                let pts = g
                    .ns
                    .iter()
                    .filter_map(|&n| report.mean(&grid_cell_name(n, p), m.label(), "beta_error").map(|v| (n as f64, v)))
                    .collect();
                Series::line(m.label(), pts)
            })
            .collect();
        report.charts.push(Chart {
            name: format!("grid_beta_error_m{p}"),
            title: format!("Mean coefficient error, m = {p}"),
            x_label: "n".into(),
            y_label: "beta error".into(),
            series,
        });
    }
    report
}

pub fn env_cell_name(r: f64) -> String {
    format!("r={r}")
}

/// Train once per seed at `train_r`, score RMSE in every test environment.
pub fn run_env_shift(cfg: &ExperimentConfig) -> Report {
    let e = &cfg.env_shift;
    let outputs: Vec<JobOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut out = JobOutput::default();
            let cov = covariates(e.env_kind, e.n, e.p, seed);
            let spec = match cov.stable_count().and_then(|ps| beta_pattern(ps, e.p)) {
                Ok(s) => s,
                Err(err) => {
                    out.fail("train", "data", seed, err);
                    return out;
                }
            };
            let train = match environment(&cov, &spec, Some(e.train_r), derive_seed(seed, 0)) {
                Ok(d) => d,
                Err(err) => {
                    out.fail("train", "data", seed, err);
                    return out;
                }
            };
            let mut tests = Vec::new();
            for (k, &r) in e.test_r.iter().enumerate() {
                let test_cov = CovariateConfig { n: e.n_test, ..cov.clone() };
                match environment(&test_cov, &spec, Some(r), derive_seed(seed, 1 + k as u64)) {
                    Ok(d) => tests.push((r, d)),
                    Err(err) => out.fail(&env_cell_name(r), "data", seed, err),
                }
            }
            for &model in &cfg.models {
                let est = match fit_regression(model, &train, cfg) {
                    Ok(m) => m,
                    Err(err) => {
                        out.fail("train", model.label(), seed, err);
                        continue;
                    }
                };
                record_beta(&mut out, "train", model.label(), seed, &est, &spec, &train.stable_mask);
                let mut curve = Vec::new();
                for (r, test) in &tests {
                    let pred = est.predict(&test.features);
                    match test.outcome().map_err(anyhow::Error::from).and_then(|y| Ok(rmse(&pred, y)?)) {
                        Ok(v) => {
                            out.push(&env_cell_name(*r), model.label(), "rmse", v, seed);
                            curve.push(v);
                        }
                        Err(err) => out.fail(&env_cell_name(*r), model.label(), seed, err),
                    }
                }
                if curve.len() == e.test_r.len() {
                    let k = curve.len() as f64;
                    let mean = curve.iter().sum::<f64>() / k;
                    let var = curve.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
                    out.push("all", model.label(), "mean_rmse", mean, seed);
                    out.push("all", model.label(), "rmse_variance", var, seed);
                }
            }
            out
        })
        .collect();
    let mut report = Report::new("env-shift", &cfg.seeds, config_echo(cfg));
    merge(&mut report, outputs);
    let mut rs = e.test_r.clone();
    rs.sort_by(f64::total_cmp);
    let series = cfg
        .models
        .iter()
        .map(|m| {
            let pts = rs.iter().filter_map(|&r| report.mean(&env_cell_name(r), m.label(), "rmse").map(|v| (r, v))).collect();
            Series::line(m.label(), pts)
        })
        .collect();
    report.charts.push(Chart {
        name: "env_shift_rmse".into(),
        title: format!("RMSE across test environments (train r = {})", e.train_r),
        x_label: "test r".into(),
        y_label: "RMSE".into(),
        series,
    });
    report
}

/// Seed-mean metrics of one hyperparameter cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperCell {
    pub gamma: f64,
    pub lambda: f64,
    pub c: f64,
    pub beta_s_error: f64,
    pub beta_v_error: f64,
    pub rmse: f64,
}

/// Smallest RMSE; equal RMSE goes to the smaller `β_S + β_V` error, then to
/// the earlier cell.
pub fn select_hyper_cell(cells: &[HyperCell]) -> Option<usize> {
    let key = |c: &HyperCell| (c.rmse, c.beta_s_error + c.beta_v_error);
    (0..cells.len())
        .filter(|&k| cells[k].rmse.is_finite())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(&cells[a]), key(&cells[b]));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        })
}

pub fn hyper_cell_name(gamma: f64, lambda: f64, c: f64) -> String {
    format!("gamma={gamma},lambda={lambda},C={c}")
}

/// Grid cells in γ-major, then λ, then C order.
pub fn hyper_axes(cfg: &ExperimentConfig) -> Vec<(f64, f64, f64)> {
    let h = &cfg.hyper;
    let mut cells = Vec::new();
    for &g in &h.gammas {
        for &l in &h.lambdas {
            for &c in &h.cs {
                cells.push((g, l, c));
            }
        }
    }
    cells
}

pub fn hyper_table(report: &Report, axes: &[(f64, f64, f64)]) -> Vec<HyperCell> {
    axes.iter()
        .map(|&(gamma, lambda, c)| {
            let cell = hyper_cell_name(gamma, lambda, c);
            let m = |metric| report.mean(&cell, ModelName::Crtre.label(), metric).unwrap_or(f64::NAN);
            HyperCell { gamma, lambda, c, beta_s_error: m("beta_s_error"), beta_v_error: m("beta_v_error"), rmse: m("rmse") }
        })
        .collect()
}

/// CRTRE over the γ × λ × C grid; each seed shares one training and one test
/// sample across all cells.
pub fn run_hyperparam_grid(cfg: &ExperimentConfig) -> Report {
    let h = &cfg.hyper;
    let axes = hyper_axes(cfg);
    let datasets: Vec<Result<(LabeledDataset, LabeledDataset, BetaSpec), String>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let cov = covariates(h.env_kind, h.n, h.p, seed);
            let spec = beta_pattern(cov.stable_count().map_err(|e| e.to_string())?, h.p).map_err(|e| e.to_string())?;
            let train = environment(&cov, &spec, h.train_r, derive_seed(seed, 0)).map_err(|e| e.to_string())?;
            let test_cov = CovariateConfig { n: h.n_test, ..cov };
            let test = environment(&test_cov, &spec, Some(h.test_r), derive_seed(seed, 1)).map_err(|e| e.to_string())?;
            Ok((train, test, spec))
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..axes.len()).flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s))).collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let seed = cfg.seeds[s];
            let (gamma, lambda, cost) = axes[c];
            let cell = hyper_cell_name(gamma, lambda, cost);
            let model = ModelName::Crtre.label();
            let mut out = JobOutput::default();
            let (train, test, spec) = match &datasets[s] {
                Ok(d) => d,
                Err(e) => {
                    out.fail(&cell, "data", seed, e);
                    return out;
                }
            };
            let mut decorr = cfg.crtre.decorr.clone();
            decorr.gamma = gamma * h.gamma_unit;
            decorr.lambda1 = lambda * h.lambda_unit * train.n() as f64;
            decorr.lambda2 = decorr.lambda1;
            decorr.c = cost;
            match crtre_fit(train, &decorr, Task::Regression, cfg.crtre.mode) {
                Ok(fit) => {
                    if let Ok(b) = beta_error(&fit.model, spec, &train.stable_mask) {
                        out.push(&cell, model, "beta_s_error", b.beta_s_error, seed);
                        out.push(&cell, model, "beta_v_error", b.beta_v_error, seed);
                    }
                    let pred = fit.model.predict(&test.features);
                    match rmse(&pred, test.outcome().expect("generated outcome")) {
                        Ok(v) => out.push(&cell, model, "rmse", v, seed),
                        Err(e) => out.fail(&cell, model, seed, e),
                    }
                }
                Err(e) => out.fail(&cell, model, seed, e),
            }
            out
        })
        .collect();
    let mut report = Report::new("hyper", &cfg.seeds, config_echo(cfg));
    merge(&mut report, outputs);
    let table = hyper_table(&report, &axes);
    report.extra.insert("table".into(), serde_json::to_value(&table).expect("table serializes"));
    if let Some(k) = select_hyper_cell(&table) {
        report.extra.insert("selected".into(), serde_json::to_value(table[k]).expect("cell serializes"));
    }
    report
}

/// Everything the counterfactual pipeline produced for one seed and arm.
#[derive(Debug, Clone)]
pub struct CounterfactualArm {
    pub rules: Vec<Rule>,
    pub chosen_rule: usize,
    /// Clean-sample logistic coefficients, aligned with `rules`.
    pub reference: Vec<f64>,
    pub reference_sign: f64,
    pub train: ItemizedDataset,
    pub test: ItemizedDataset,
}

fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 8));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Planted data, mined and selected rules, the surgery split, and the sign
/// of the perturbed rule's coefficient in a logistic fit on a large clean
/// sample from the same generator.
pub fn prepare_counterfactual(cfg: &ExperimentConfig, seed: u64) -> Result<(CounterfactualArm, CounterfactualArm)> {
    let cf = &cfg.counterfactual;
    let n = cf.planted.n;
    let rows = planted_rows(&cf.planted, n + cf.planted.oracle_n, seed);
    let items = discretize(&rows, cf.bins)?;
    let sample: Vec<usize> = (0..n).collect();
    let oracle_rows: Vec<usize> = (n..n + cf.planted.oracle_n).collect();
    let (train_idx, test_idx) = split_rows(n, cf.test_fraction, seed);
    let data = items.subset(&sample);
    let (train, test) = (data.subset(&train_idx), data.subset(&test_idx));

    let mined = apriori(&train, &cf.mining)?;
    if mined.is_empty() {
        bail!("no rules mined");
    }
    let matrix = rule_matrix(&mined, &train, cf.selection.scaling);
    let selection = select_rules(&matrix, &train.labels, &cf.selection)?;
    let rules: Vec<Rule> = selection.selected.iter().map(|&k| mined[k].clone()).collect();
    let x = rule_matrix(&rules, &train, cf.selection.scaling).values;
    let classifier = fit_svm(&x, &train.labels, &LinearFitConfig { c: cf.selection.c, ..LinearFitConfig::default() })?;
    let split = counterfactual_split(&train, &test, &rules, &classifier.beta, cf.direction)?;

    let oracle = items.subset(&oracle_rows);
    let ox = rule_matrix(&rules, &oracle, cf.selection.scaling).values;
    let reference = fit_logistic(&ox, &oracle.labels, cfg.linear.logistic_lambda, LOGISTIC_GRAD_TOL)?;
    let reference_sign = reference.beta[split.chosen_rule].signum();

    let control = CounterfactualArm {
        rules: rules.clone(),
        chosen_rule: split.chosen_rule,
        reference: reference.beta.clone(),
        reference_sign,
        train,
        test,
    };
    let surgery = CounterfactualArm {
        rules,
        chosen_rule: split.chosen_rule,
        reference: reference.beta,
        reference_sign,
        train: split.train,
        test: split.test,
    };
    Ok((surgery, control))
}

fn score_arm(out: &mut JobOutput, arm: &CounterfactualArm, cell: &str, seed: u64, cfg: &ExperimentConfig) {
    let scaling = cfg.counterfactual.selection.scaling;
    let x = rule_matrix(&arm.rules, &arm.train, scaling).values;
    let xt = rule_matrix(&arm.rules, &arm.test, scaling).values;
    for &model in &cfg.models {
        let fit = match fit_classifier(model, &x, &arm.train.labels, cfg) {
            Ok(m) => m,
            Err(e) => {
                out.fail(cell, model.label(), seed, e);
                continue;
            }
        };
        let label = model.label();
        let coef = fit.beta[arm.chosen_rule];
        out.push(cell, label, "rule_coef", coef, seed);
        out.push(cell, label, "sign_retained", f64::from(u8::from(coef.signum() == arm.reference_sign)), seed);
        match classification_report(&fit.predict_labels(&xt), &arm.test.labels) {
            Ok(r) => {
                out.push(cell, label, "accuracy", r.accuracy, seed);
                out.push(cell, label, "precision", r.precision, seed);
                out.push(cell, label, "recall", r.recall, seed);
                out.push(cell, label, "f1", r.f1, seed);
            }
            Err(e) => out.fail(cell, label, seed, e),
        }
        // Alignment with the clean-sample coefficients stands in for an expert ranking.
        if let Ok(rho) = spearman(&fit.beta, &arm.reference) {
            out.push(cell, label, "spearman", rho, seed);
        }
    }
}

/// Mine, select, perturb and refit per seed. The control arm repeats the
/// fits on the unperturbed split.
pub fn run_counterfactual(cfg: &ExperimentConfig) -> Report {
    let outputs: Vec<JobOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut out = JobOutput::default();
            let (surgery, control) = match prepare_counterfactual(cfg, seed) {
                Ok(arms) => arms,
                Err(e) => {
                    out.fail("surgery", "pipeline", seed, e);
                    return out;
                }
            };
            out.push("surgery", "reference", "rule_sign", surgery.reference_sign, seed);
            score_arm(&mut out, &surgery, "surgery", seed, cfg);
            if cfg.counterfactual.control {
                score_arm(&mut out, &control, "control", seed, cfg);
            }
            out
        })
        .collect();
    let mut report = Report::new("counterfactual", &cfg.seeds, config_echo(cfg));
    merge(&mut report, outputs);
    report
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    use crate::config::Experiment;
    Ok(match cfg.experiment {
        Experiment::Grid => run_synthetic_grid(cfg),
        Experiment::EnvShift => run_env_shift(cfg),
        Experiment::Hyper => run_hyperparam_grid(cfg),
        Experiment::Counterfactual => run_counterfactual(cfg),
        other => return Err(anyhow!("{other:?} is a single-shot command, not an experiment")),
    })
}
