//! Long-form result records, per-cell aggregates and the file emitters.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::svg::{line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cell: String,
    pub model: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cell: String,
    pub model: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: String,
    pub model: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub sd: f64,
    pub count: usize,
}

/// One polyline chart: x positions are given per series point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
    pub seeds: Vec<u64>,
    /// Exact configuration the run used.
    pub config: serde_json::Value,
    /// Experiment-specific extras (selected cell, flags, notes).
    pub extra: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub charts: Vec<Chart>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    experiment: &'a str,
    seeds: &'a [u64],
    config: &'a serde_json::Value,
    aggregates: Vec<Aggregate>,
    failures: &'a [Failure],
    extra: &'a BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Report {
    pub fn new(experiment: &str, seeds: &[u64], config: serde_json::Value) -> Self {
        Self { experiment: experiment.into(), seeds: seeds.to_vec(), config, ..Self::default() }
    }

    pub fn push(&mut self, cell: &str, model: &str, metric: &str, value: f64, seed: u64) {
        self.records.push(Record { cell: cell.into(), model: model.into(), metric: metric.into(), value, seed });
    }

    /// Mean and sample sd per (cell, model, metric), in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<(String, String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            let key = (r.cell.clone(), r.model.clone(), r.metric.clone());
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(r.value);
        }
        order
            .into_iter()
            .map(|key| {
                let v = &groups[&key];
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                Aggregate { cell: key.0, model: key.1, metric: key.2, mean, sd, count: v.len() }
            })
            .collect()
    }

    pub fn mean(&self, cell: &str, model: &str, metric: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.cell == cell && r.model == model && r.metric == metric)
            .map(|r| r.value)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn values(&self, cell: &str, model: &str, metric: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.cell == cell && r.model == model && r.metric == metric)
            .map(|r| (r.seed, r.value))
            .collect()
    }
}

pub fn write_records(records: &[Record], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `<experiment>.csv`, `<experiment>.json` and one SVG per chart into
/// `dir`, returning the paths written.
pub fn emit_report(report: &Report, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    let stem = report.experiment.replace('-', "_");
    if formats.contains(&Format::Csv) {
        let path = dir.join(format!("{stem}.csv"));
        write_records(&report.records, &path)?;
        written.push(path);
    }
    if formats.contains(&Format::Json) {
        let path = dir.join(format!("{stem}.json"));
        let body = JsonReport {
            experiment: &report.experiment,
            seeds: &report.seeds,
            config: &report.config,
            aggregates: report.aggregates(),
            failures: &report.failures,
            extra: &report.extra,
        };
        fs::write(&path, serde_json::to_string_pretty(&body)?).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
    }
    if formats.contains(&Format::Svg) {
        for chart in &report.charts {
            let path = dir.join(format!("{}.svg", chart.name));
            fs::write(&path, line_chart(chart)).with_context(|| format!("cannot write {}", path.display()))?;
            written.push(path);
        }
    }
    Ok(written)
}
