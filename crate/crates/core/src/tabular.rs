//! CSV loading, median imputation, equal-frequency itemization and fold plans.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::median;
use crate::rng::stream;
use crate::synthdata::LabeledDataset;
use crate::{Error, Result};

pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemizedDataset {
    /// Each transaction is sorted ascending and free of duplicates.
    pub transactions: Vec<Vec<ItemId>>,
    pub labels: Vec<u8>,
    pub item_names: Vec<String>,
}

impl ItemizedDataset {
    pub fn new(mut transactions: Vec<Vec<ItemId>>, labels: Vec<u8>, item_names: Vec<String>) -> Result<Self> {
        if transactions.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} transactions but {} labels",
                transactions.len(),
                labels.len()
            )));
        }
        for t in &mut transactions {
            t.sort_unstable();
            t.dedup();
            if t.is_empty() {
                return Err(Error::InvalidConfig("empty transaction".into()));
            }
            if t.iter().any(|&i| i as usize >= item_names.len()) {
                return Err(Error::InvalidConfig("item id outside vocabulary".into()));
            }
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(Self { transactions, labels, item_names })
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.item_names.iter().position(|n| n == name).map(|i| i as ItemId)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            transactions: rows.iter().map(|&i| self.transactions[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            item_names: self.item_names.clone(),
        }
    }

    /// One transaction per line: comma-separated item names, a tab, the label.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (t, l) in self.transactions.iter().zip(&self.labels) {
            let items: Vec<&str> = t.iter().map(|&i| self.item_names[i as usize].as_str()).collect();
            writeln!(w, "{}\t{}", items.join(","), l)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Item ids are assigned in order of first appearance.
    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut names: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, ItemId> = BTreeMap::new();
        let (mut transactions, mut labels) = (Vec::new(), Vec::new());
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: lineno as u64 + 1, msg: msg.to_string() };
            let (items, label) = line.rsplit_once('\t').ok_or_else(|| bad("missing tab before label"))?;
            let label: u8 = match label.trim() {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("label must be 0 or 1")),
            };
            let mut t = Vec::new();
            for name in items.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let id = *index.entry(name.to_string()).or_insert_with(|| {
                    names.push(name.to_string());
                    (names.len() - 1) as ItemId
                });
                t.push(id);
            }
            if t.is_empty() {
                return Err(bad("transaction has no items"));
            }
            transactions.push(t);
            labels.push(label);
        }
        Self::new(transactions, labels, names)
    }
}

/// Reads a headed numeric CSV. Blank cells and `NA`/`?` become missing (NaN).
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("label column `{label_column}` not found in header")))?;

    let mut cells: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, raw) in record.iter().enumerate() {
            let raw = raw.trim();
            let value = if raw.is_empty() || raw == "NA" || raw == "?" {
                f64::NAN
            } else {
                raw.parse::<f64>()
                    .map_err(|_| Error::Parse { line, msg: format!("column `{}`: `{raw}` is not numeric", headers[j]) })?
            };
            if j == label_idx {
                if value.is_nan() {
                    return Err(Error::Parse { line, msg: "label cell is missing".into() });
                }
                labels.push(value);
            } else {
                cells.push(value);
            }
        }
        n += 1;
    }
    let p = headers.len() - 1;
    let features = DMatrix::from_row_slice(n, p, &cells);
    let names = headers.iter().enumerate().filter(|(j, _)| *j != label_idx).map(|(_, h)| h.clone()).collect();
    let mut data = LabeledDataset::new(features, names);
    data.outcome = Some(labels);
    Ok(data)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    names: &'a [String],
    stable_mask: &'a [bool],
    config: Option<&'a serde_json::Value>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes features plus a final `label` column, and the JSON sidecar holding
/// the feature roles and the generating config.
pub fn write_csv(data: &LabeledDataset, path: &Path, config: Option<&serde_json::Value>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.names.clone();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.p())
            .map(|j| {
                let v = data.features[(i, j)];
                if v.is_nan() {
                    String::new()
                } else {
                    format!("{v}")
                }
            })
            .collect();
        row.push(data.outcome.as_ref().map_or(String::new(), |y| format!("{}", y[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    let sidecar = Sidecar { names: &data.names, stable_mask: &data.stable_mask, config };
    serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &sidecar)?;
    Ok(())
}

/// Restores `stable_mask` from a sidecar written by [`write_csv`], when present.
pub fn load_with_sidecar(path: &Path) -> Result<LabeledDataset> {
    let mut data = load_csv(path, "label")?;
    let side = sidecar_path(path);
    if side.exists() {
        let v: serde_json::Value = serde_json::from_reader(File::open(side)?)?;
        if let Some(mask) = v.get("stable_mask").and_then(|m| m.as_array()) {
            let mask: Vec<bool> = mask.iter().map(|b| b.as_bool().unwrap_or(false)).collect();
            if mask.len() == data.p() {
                data.stable_mask = mask;
            }
        }
    }
    Ok(data)
}

pub fn impute_missing(data: &LabeledDataset) -> Result<LabeledDataset> {
    let mut out = data.clone();
    for j in 0..data.p() {
        let col = data.features.column(j);
        if !col.iter().any(|v| v.is_nan()) {
            continue;
        }
        let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::EmptyColumn(data.names[j].clone()));
        }
        let fill = median(&observed);
        for v in out.features.column_mut(j).iter_mut().filter(|v| v.is_nan()) {
            *v = fill;
        }
    }
    Ok(out)
}

/// Duplicates minority-class rows with small Gaussian jitter until classes
/// balance. A simple stand-in for synthetic oversampling.
pub fn oversample_minority(data: &LabeledDataset, jitter: f64, seed: u64) -> Result<LabeledDataset> {
    let y = data.outcome()?;
    let ones: Vec<usize> = (0..data.n()).filter(|&i| y[i] == 1.0).collect();
    let zeros: Vec<usize> = (0..data.n()).filter(|&i| y[i] == 0.0).collect();
    if ones.len() + zeros.len() != data.n() {
        return Err(Error::DegenerateLabels("outcome must be 0/1".into()));
    }
    let (minority, deficit) = if ones.len() < zeros.len() {
        let d = zeros.len() - ones.len();
        (ones, d)
    } else {
        let d = ones.len() - zeros.len();
        (zeros, d)
    };
    if deficit == 0 {
        return Ok(data.clone());
    }
    if minority.is_empty() {
        return Err(Error::DegenerateLabels("one class is absent".into()));
    }
    let mut rng = stream(seed, 3);
    let scales: Vec<f64> = (0..data.p()).map(|j| crate::linalg::std_dev(data.features.column(j).as_slice())).collect();
    let rows: Vec<usize> = (0..deficit).map(|_| minority[rng.gen_range(0..minority.len())]).collect();
    let mut extra = data.select_rows(&rows);
    for j in 0..data.p() {
        for v in extra.features.column_mut(j).iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += jitter * scales[j] * e;
        }
    }
    data.concat(&extra)
}

fn bin_labels(bins: usize) -> Vec<String> {
    match bins {
        2 => vec!["low".into(), "high".into()],
        3 => vec!["low".into(), "mid".into(), "high".into()],
        _ => (1..=bins).map(|b| format!("q{b}")).collect(),
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Equal-frequency bin index per row. Rows sorted by value (ties kept in row
/// order) get bin `floor(rank * bins / n)`, and every tied value shares the bin
/// of its first occurrence.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut current = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 || values[i] != values[order[rank - 1]] {
            current = rank * bins / n;
        }
        out[i] = current;
    }
    out
}

/// Labels must be 0/1; missing cells contribute no item. Binary 0/1 features
/// map to one item per value, constant features to a single catch-all item.
pub fn discretize(data: &LabeledDataset, bins: usize) -> Result<ItemizedDataset> {
    if bins < 2 {
        return Err(Error::InvalidConfig("bins must be at least 2".into()));
    }
    let y = data.outcome()?;
    let labels = y
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0u8),
            v if v == 1.0 => Ok(1u8),
            _ => Err(Error::Schema(format!("label {v} is not 0/1"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let n = data.n();
    let mut names: Vec<String> = Vec::new();
    let mut transactions: Vec<Vec<ItemId>> = vec![Vec::new(); n];
    for j in 0..data.p() {
        let col = data.features.column(j);
        let rows: Vec<usize> = (0..n).filter(|&i| !col[i].is_nan()).collect();
        let values: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        let mut distinct = values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let base = names.len() as ItemId;
        let feature = &data.names[j];
        if distinct.len() <= 1 {
            names.push(format!("{feature}=any"));
            for &i in &rows {
                transactions[i].push(base);
            }
        } else if distinct == [0.0, 1.0] {
            names.extend(distinct.iter().map(|v| format!("{feature}={}", format_value(*v))));
            for (&i, v) in rows.iter().zip(&values) {
                let k = distinct.iter().position(|d| d == v).unwrap();
                transactions[i].push(base + k as ItemId);
            }
        } else {
            names.extend(bin_labels(bins).into_iter().map(|l| format!("{feature}={l}")));
            for (&i, b) in rows.iter().zip(equal_frequency_bins(&values, bins)) {
                transactions[i].push(base + b as ItemId);
            }
        }
    }
    ItemizedDataset::new(transactions, labels, names)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(train, test)` row indices for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(i)
            } else {
                train.push(i)
            }
        }
        (train, test)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignments {
            s[f] += 1;
        }
        s
    }
}

pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 4));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(cols: &[&[f64]], y: &[f64]) -> LabeledDataset {
        let n = y.len();
        let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let mut d = LabeledDataset::new(m, (0..cols.len()).map(|j| format!("f{j}")).collect());
        d.outcome = Some(y.to_vec());
        d
    }

    fn items(d: &ItemizedDataset) -> Vec<Vec<&str>> {
        d.transactions.iter().map(|t| t.iter().map(|&i| d.item_names[i as usize].as_str()).collect()).collect()
    }

    #[test]
    fn four_values_split_at_median() {
        let d = discretize(&dataset(&[&[1.0, 2.0, 3.0, 4.0]], &[0.0, 1.0, 0.0, 1.0]), 2).unwrap();
        assert_eq!(items(&d), [["f0=low"], ["f0=low"], ["f0=high"], ["f0=high"]]);
        assert_eq!(d.labels, [0, 1, 0, 1]);
    }

    #[test]
    fn binary_feature_keeps_two_items() {
        let d = discretize(&dataset(&[&[0.0, 1.0, 1.0, 0.0, 1.0]], &[0.0; 5]), 3).unwrap();
        assert_eq!(d.item_names, ["f0=0", "f0=1"]);
    }

    #[test]
    fn constant_feature_gets_catch_all() {
        let d = discretize(&dataset(&[&[7.0, 7.0, 7.0]], &[0.0, 1.0, 1.0]), 3).unwrap();
        assert_eq!(d.item_names, ["f0=any"]);
    }

    #[test]
    fn ties_stay_in_one_bin() {
        let d = discretize(&dataset(&[&[1.0, 9.0, 1.0, 1.0]], &[0.0; 4]), 2).unwrap();
        assert_eq!(items(&d), [["f0=low"], ["f0=high"], ["f0=low"], ["f0=low"]]);
    }

    #[test]
    fn imputation_uses_observed_median() {
        let d = dataset(&[&[1.0, f64::NAN, 3.0], &[5.0, 9.0, f64::NAN]], &[0.0; 3]);
        let out = impute_missing(&d).unwrap();
        assert_eq!(out.features.column(0).as_slice(), [1.0, 2.0, 3.0]);
        assert_eq!(out.features.column(1).as_slice(), [5.0, 9.0, 7.0]);
        let d = dataset(&[&[f64::NAN, f64::NAN]], &[0.0; 2]);
        assert!(matches!(impute_missing(&d), Err(Error::EmptyColumn(_))));
    }

    #[test]
    fn oversampling_balances_classes() {
        let d = dataset(&[&[1.0, 2.0, 3.0, 4.0, 5.0]], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let out = oversample_minority(&d, 0.01, 3).unwrap();
        let y = out.outcome().unwrap();
        assert_eq!(y.iter().filter(|v| **v == 1.0).count(), 4);
        assert_eq!(out.n(), 8);
    }

    #[test]
    fn folds_are_balanced() {
        let plan = split_folds(11, 5, 3).unwrap();
        let mut s = plan.sizes();
        s.sort_unstable();
        assert_eq!(s, [2, 2, 2, 2, 3]);
        assert!(split_folds(3, 4, 0).is_err());
        let (train, test) = plan.split(0);
        assert_eq!(train.len() + test.len(), 11);
    }
}
