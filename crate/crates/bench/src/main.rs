use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crtre_bench::config::{DataSource, ExperimentConfig, ModelName};
use crtre_bench::experiments::{fit_classifier, fit_regression};
use crtre_bench::report::{emit_report, read_records, Format, Report};
use crtre_bench::{run, ConfigError, Experiment};
use crtre_core::decorrelate::labels_of;
use crtre_core::rulemine::{apriori, read_rules, rule_matrix, write_rules, MiningConfig};
use crtre_core::ruleselect::{select_rules, write_history};
use crtre_core::synthdata::{
    beta_pattern, gen_covariates, gen_outcome, median_labels, sample_environment, CovariateConfig, EnvKind,
    EnvironmentSpec, LabeledDataset,
};
use crtre_core::tabular::{discretize, impute_missing, load_csv, load_with_sidecar, write_csv, ItemizedDataset};

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "crtre", version, about = "Causal rule learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; the run uses consecutive seeds from here.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Five seeds per cell instead of the configured list.
    #[arg(long)]
    fast: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar).
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        p: usize,
        #[arg(long, value_enum, default_value = "nonlinear")]
        env: EnvArg,
        /// Bias rate of the sampled environment; unbiased when omitted.
        #[arg(long, allow_hyphen_values = true)]
        r: Option<f64>,
        /// Median-split the outcome into 0/1 labels.
        #[arg(long)]
        classification: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine class-association rules from a CSV with a 0/1 label column.
    Mine {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        bins: usize,
        #[arg(long, default_value_t = 0.05)]
        min_support: f64,
        #[arg(long, default_value_t = 0.6)]
        min_confidence: f64,
        #[arg(long, default_value_t = 3)]
        max_len: usize,
        /// Rules as JSON lines.
        #[arg(long)]
        out: PathBuf,
        /// Also write the itemized transactions here.
        #[arg(long)]
        items: Option<PathBuf>,
    },
    /// Backward rule elimination on mined rules.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = 3)]
        bins: usize,
        #[arg(long, default_value_t = 50)]
        max_rules: usize,
        #[arg(long, default_value_t = 1)]
        min_rules: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Fit one model on a CSV and print its parameters as JSON.
    Fit {
        /// CSV input; falls back to the config's `data` source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_model, default_value = "CRTRE")]
        model: ModelName,
        #[arg(long, value_enum, default_value = "regression")]
        task: TaskArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coefficient errors over the (n, m) grid.
    Grid(Common),
    /// RMSE across test environments.
    EnvShift(Common),
    /// CRTRE over the gamma/lambda/C grid.
    Hyper(Common),
    /// Rule surgery on planted-rule data.
    Counterfactual(Common),
    /// Re-aggregate a long-form CSV into a JSON summary.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model(s: &str) -> Result<ModelName, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of OLS, Lasso, Ridge, SVM, DWR, DWR_SVM, CRTRE, Logistic".to_string()
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn experiment_config(common: &Common, experiment: Experiment) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = load_config(common.config.as_deref())?;
    cfg.experiment = experiment;
    if experiment == Experiment::Counterfactual && common.config.is_none() {
        cfg.models = vec![ModelName::Logistic, ModelName::Svm, ModelName::DwrSvm, ModelName::Crtre];
    }
    if let Some(s) = common.seed {
        let count = cfg.seeds.len() as u64;
        cfg.seeds = (s..s + count.max(1)).collect();
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if common.fast {
        cfg = cfg.fast();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_experiment(common: &Common, experiment: Experiment) -> Result<ExitCode> {
    let cfg = match experiment_config(common, experiment) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let report = pool.build()?.install(|| run(&cfg))?;
    for path in emit_report(&report, &cfg.out_dir, &[Format::Csv, Format::Json, Format::Svg])? {
        println!("wrote {}", path.display());
    }
    print_summary(&report);
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} job(s) failed; see the failures list in the JSON report", report.failures.len());
        Ok(ExitCode::from(EXIT_PARTIAL))
    }
}

fn print_summary(report: &Report) {
    for a in report.aggregates() {
        println!("{:<28} {:<10} {:<14} {:>10.4} ± {:.4} (n={})", a.cell, a.model, a.metric, a.mean, a.sd, a.count);
    }
}

/// Synthetic sources are generated with `seed`.
fn load_source(source: &DataSource, seed: u64) -> Result<LabeledDataset> {
    Ok(match source {
        DataSource::Csv { path, label } if label == "label" => impute_missing(&load_with_sidecar(path)?)?,
        DataSource::Csv { path, label } => impute_missing(&load_csv(path, label)?)?,
        DataSource::Synthetic(s) => {
            let mut cov = CovariateConfig::new(s.n, s.p, s.env_kind, seed);
            cov.p_stable = s.p_stable;
            let spec = beta_pattern(cov.stable_count()?, s.p)?;
            let data = match s.train_r {
                Some(r) => sample_environment(&cov, &spec, &EnvironmentSpec::new(r), s.n, seed)?,
                None => gen_outcome(&gen_covariates(&cov)?, &spec, seed)?,
            };
            if s.classification {
                median_labels(&data)?
            } else {
                data
            }
        }
    })
}

fn itemize(path: &Path, bins: usize) -> Result<ItemizedDataset> {
    let data = impute_missing(&load_csv(path, "label")?)?;
    Ok(discretize(&data, bins)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth { n, p, env, r, classification, seed, out } => {
            let env_kind = match env {
                EnvArg::Linear => EnvKind::Linear,
                EnvArg::Nonlinear => EnvKind::Nonlinear,
            };
            let cov = CovariateConfig::new(n, p, env_kind, seed);
            let spec = beta_pattern(cov.stable_count()?, p)?;
            let mut data = match r {
                Some(r) => sample_environment(&cov, &spec, &EnvironmentSpec::new(r), n, seed)?,
                None => gen_outcome(&gen_covariates(&cov)?, &spec, seed)?,
            };
            if classification {
                data = median_labels(&data)?;
            }
            let echo = serde_json::json!({ "n": n, "p": p, "env_kind": env_kind, "r": r, "seed": seed,
                "classification": classification, "beta": spec });
            write_csv(&data, &out, Some(&echo))?;
            println!("wrote {} ({} rows, {} features)", out.display(), data.n(), data.p());
        }
        Command::Mine { data, bins, min_support, min_confidence, max_len, out, items } => {
            let itemized = itemize(&data, bins)?;
            let rules = apriori(&itemized, &MiningConfig { min_support, min_confidence, max_len })?;
            write_rules(&rules, &itemized.item_names, &out)?;
            if let Some(path) = items {
                itemized.write(&path)?;
            }
            println!("{} rules from {} transactions", rules.len(), itemized.len());
        }
        Command::Select { data, rules, bins, max_rules, min_rules, seed, out, history } => {
            let itemized = itemize(&data, bins)?;
            let rules = read_rules(&rules, &itemized.item_names)?;
            let cfg = crtre_core::ruleselect::SelectionConfig { max_rules, min_rules, seed, ..Default::default() };
            let matrix = rule_matrix(&rules, &itemized, cfg.scaling);
            let selection = match select_rules(&matrix, &itemized.labels, &cfg) {
                Err(crtre_core::Error::InvalidConfig(msg)) => {
                    eprintln!("config error: {msg}");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
                other => other?,
            };
            let kept: Vec<_> = selection.selected.iter().map(|&k| rules[k].clone()).collect();
            write_rules(&kept, &itemized.item_names, &out)?;
            if let Some(path) = history {
                write_history(&selection.history, &path)?;
            }
            println!("kept {} of {} rules, cv accuracy {:.4}", kept.len(), rules.len(), selection.cv_accuracy);
        }
        Command::Fit { data, model, task, config, out } => {
            let cfg = match load_config(config.as_deref()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            };
            let source = match (data, &cfg.data) {
                (Some(path), _) => DataSource::Csv { path, label: "label".into() },
                (None, Some(src)) => src.clone(),
                (None, None) => {
                    eprintln!("config error: no --data given and the config has no data source");
                    return Ok(ExitCode::from(EXIT_CONFIG));
                }
            };
            let dataset = load_source(&source, cfg.seeds.first().copied().unwrap_or(0))?;
            let params = match task {
                TaskArg::Regression => fit_regression(model, &dataset, &cfg)?,
                TaskArg::Classification => {
                    let labels = labels_of(dataset.outcome()?)?;
                    fit_classifier(model, &dataset.features, &labels, &cfg)?
                }
            };
            let body = serde_json::to_string_pretty(&serde_json::json!({
                "model": model, "names": dataset.names, "params": params,
            }))?;
            match out {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?,
                // A reader that closes early (`| head`) is not an error.
                None => {
                    let _ = writeln!(std::io::stdout().lock(), "{body}");
                }
            }
        }
        Command::Grid(c) => return run_experiment(&c, Experiment::Grid),
        Command::EnvShift(c) => return run_experiment(&c, Experiment::EnvShift),
        Command::Hyper(c) => return run_experiment(&c, Experiment::Hyper),
        Command::Counterfactual(c) => return run_experiment(&c, Experiment::Counterfactual),
        Command::Report { input, out } => {
            let mut report = Report::new("report", &[], serde_json::Value::Null);
            report.records = read_records(&input)?;
            let mut seeds: Vec<u64> = report.records.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            report.seeds = seeds;
            for path in emit_report(&report, &out, &[Format::Json])? {
                println!("wrote {}", path.display());
            }
            print_summary(&report);
        }
    }
    Ok(ExitCode::SUCCESS)
}
