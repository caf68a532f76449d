//! Evaluation: coefficient errors, RMSE, weighted correlation profiles,
//! classification scores, rank correlation and the counterfactual split.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::rulemine::Rule;
use crate::synthdata::BetaSpec;
use crate::tabular::ItemizedDataset;
use crate::{Error, Result};

/// Per-coordinate means, with the raw sums kept alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaErrorReport {
    pub beta_s_error: f64,
    pub beta_v_error: f64,
    /// Mean over all coordinates.
    pub beta_error: f64,
    pub beta_s_sum: f64,
    pub beta_v_sum: f64,
    pub beta_sum: f64,
}

pub fn beta_error(est: &ModelParams, truth: &BetaSpec, stable_mask: &[bool]) -> Result<BetaErrorReport> {
    if est.beta.len() != stable_mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients but mask of length {}",
            est.beta.len(),
            stable_mask.len()
        )));
    }
    let beta = truth.coefficients(stable_mask)?;
    let (mut s, mut v, mut ns, mut nv) = (0.0, 0.0, 0usize, 0usize);
    for ((b, t), &stable) in est.beta.iter().zip(&beta).zip(stable_mask) {
        let d = (b - t).abs();
        if stable {
            s += d;
            ns += 1;
        } else {
            v += d;
            nv += 1;
        }
    }
    let avg = |sum: f64, k: usize| if k == 0 { 0.0 } else { sum / k as f64 };
    Ok(BetaErrorReport {
        beta_s_error: avg(s, ns),
        beta_v_error: avg(v, nv),
        beta_error: avg(s + v, ns + nv),
        beta_s_sum: s,
        beta_v_sum: v,
        beta_sum: s + v,
    })
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} targets", pred.len(), actual.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sq: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Pearson correlation; undefined when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) || !(saa.is_finite() && sbb.is_finite()) {
        return Err(Error::Undefined("correlation with a constant or non-finite vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Square,
    Cube,
    Exp,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::Identity, Transform::Square, Transform::Cube, Transform::Exp];
    pub const NONLINEAR: [Transform; 3] = [Transform::Square, Transform::Cube, Transform::Exp];

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Square => v * v,
            Transform::Cube => v * v * v,
            Transform::Exp => v.exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Square => "square",
            Transform::Cube => "cube",
            Transform::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairsMode {
    /// Every ordered pair `(i, j)`, `i ≠ j`.
    #[default]
    All,
    /// Only `(i, i+1)`.
    Consecutive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrRecord {
    pub i: usize,
    pub j: usize,
    pub transform: Transform,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrProfile {
    pub records: Vec<CorrRecord>,
    /// Pairs and transforms left out because a side had zero variance.
    pub skipped: Vec<(usize, usize, Transform)>,
}

impl CorrProfile {
    pub fn values(&self, t: Transform) -> Vec<f64> {
        self.records.iter().filter(|r| r.transform == t).map(|r| r.pearson).collect()
    }

    /// Mean `|pearson|` for one transform; `None` when every pair was skipped.
    pub fn mean_abs(&self, t: Transform) -> Option<f64> {
        let v = self.values(t);
        (!v.is_empty()).then(|| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64)
    }

    /// Mean `|pearson|` over all square, cube and exp records.
    pub fn nonlinear_mean_abs(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.transform != Transform::Identity)
            .map(|r| r.pearson.abs())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair", "transform", "pearson"])?;
        for r in &self.records {
            w.write_record([format!("{}-{}", r.i, r.j), r.transform.name().to_string(), r.pearson.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Correlates column `i` of `ω ⊙ X` with each transform of column `j`, where
/// `ω = nW/ΣW`. The rescaling makes uniform weights reproduce `X` itself;
/// without it the exponential transform of `W ⊙ X` at sum-one weights is
/// indistinguishable from the identity.
pub fn corr_profile(x: &DMatrix<f64>, w: &[f64], mode: PairsMode) -> Result<CorrProfile> {
    let (n, p) = x.shape();
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} weights", w.len())));
    }
    if p < 2 {
        return Err(Error::InvalidConfig("need at least two features".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidConfig("weights must be non-negative with a positive finite sum".into()));
    }
    let w: Vec<f64> = w.iter().map(|v| v * n as f64 / total).collect();
    let weighted: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| w[i] * x[(i, j)]).collect()).collect();
    let pairs: Vec<(usize, usize)> = match mode {
        PairsMode::All => (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).collect(),
        PairsMode::Consecutive => (0..p - 1).map(|i| (i, i + 1)).collect(),
    };
    let mut profile = CorrProfile { records: Vec::new(), skipped: Vec::new() };
    for (i, j) in pairs {
        for t in Transform::ALL {
            let tj: Vec<f64> = weighted[j].iter().map(|&v| t.apply(v)).collect();
            match pearson(&weighted[i], &tj) {
                Ok(r) => profile.records.push(CorrRecord { i, j, transform: t, pearson: r }),
                Err(Error::Undefined(_)) => profile.skipped.push((i, j, t)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Zero when nothing is predicted positive.
    pub precision: f64,
    /// Zero when there are no positives.
    pub recall: f64,
    pub f1: f64,
}

pub fn classification_report(pred: &[u8], truth: &[u8]) -> Result<ClassificationReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.iter().chain(truth).any(|&l| l > 1) {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fneg += 1.0,
            _ => {}
        }
        correct += f64::from(u8::from(p == t));
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    Ok(ClassificationReport {
        accuracy: correct / pred.len() as f64,
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    })
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput);
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurgeryDirection {
    /// Training rows with `{r=1, y=1}` go to test; test rows with
    /// `{r=0, y=0}` go to training.
    #[default]
    TrainToTest,
    /// Test rows with `{r=1, y=1}` or `{r=0, y=0}` go to training, which
    /// inflates both joint probabilities in the data the models learn from.
    IntoTrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSplit {
    pub train: ItemizedDataset,
    pub test: ItemizedDataset,
    /// Index into the rule list.
    pub chosen_rule: usize,
    /// The least-supported negative rules that were considered.
    pub candidates: Vec<usize>,
    /// Fewer than ten negative rules were available.
    pub short_candidate_list: bool,
    pub moved_to_test: usize,
    pub moved_to_train: usize,
}

pub const SURGERY_CANDIDATES: usize = 10;

/// Among the ten lowest-support rules with consequent 0, the one with the
/// smallest `|weight|` (ties go to the earlier rule).
pub fn choose_surgery_rule(rules: &[Rule], weights: &[f64]) -> Result<(usize, Vec<usize>, bool)> {
    if rules.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} rules but {} weights", rules.len(), weights.len())));
    }
    let mut negative: Vec<usize> = (0..rules.len()).filter(|&k| rules[k].consequent == 0).collect();
    if negative.is_empty() {
        return Err(Error::InvalidConfig("no negative-class rules to perturb".into()));
    }
    negative.sort_by(|&a, &b| rules[a].support.total_cmp(&rules[b].support).then(a.cmp(&b)));
    let short = negative.len() < SURGERY_CANDIDATES;
    negative.truncate(SURGERY_CANDIDATES);
    let chosen = *negative
        .iter()
        .min_by(|&&a, &&b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)))
        .expect("non-empty");
    Ok((chosen, negative, short))
}

pub fn counterfactual_split(
    train: &ItemizedDataset,
    test: &ItemizedDataset,
    rules: &[Rule],
    classifier_weights: &[f64],
    direction: SurgeryDirection,
) -> Result<CounterfactualSplit> {
    if train.item_names != test.item_names {
        return Err(Error::Schema("train and test use different item vocabularies".into()));
    }
    let (chosen, candidates, short) = choose_surgery_rule(rules, classifier_weights)?;
    let rule = &rules[chosen];
    let fires = |d: &ItemizedDataset, i: usize| rule.matches(&d.transactions[i]);
    let agree = |d: &ItemizedDataset, i: usize| {
        let r = fires(d, i);
        (r && d.labels[i] == 1, !r && d.labels[i] == 0)
    };

    let (mut keep_train, mut to_test) = (Vec::new(), Vec::new());
    for i in 0..train.len() {
        let (pos, _) = agree(train, i);
        if direction == SurgeryDirection::TrainToTest && pos {
            to_test.push(i);
        } else {
            keep_train.push(i);
        }
    }
    let (mut keep_test, mut to_train) = (Vec::new(), Vec::new());
    for i in 0..test.len() {
        let (pos, neg) = agree(test, i);
        let moves = match direction {
            SurgeryDirection::TrainToTest => neg,
            SurgeryDirection::IntoTrain => pos || neg,
        };
        if moves {
            to_train.push(i);
        } else {
            keep_test.push(i);
        }
    }

    let concat = |a: ItemizedDataset, b: ItemizedDataset| -> Result<ItemizedDataset> {
        let mut t = a.transactions;
        t.extend(b.transactions);
        let mut l = a.labels;
        l.extend(b.labels);
        ItemizedDataset::new(t, l, a.item_names)
    };
    Ok(CounterfactualSplit {
        train: concat(train.subset(&keep_train), test.subset(&to_train))?,
        test: concat(test.subset(&keep_test), train.subset(&to_test))?,
        chosen_rule: chosen,
        candidates,
        short_candidate_list: short,
        moved_to_test: to_test.len(),
        moved_to_train: to_train.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_of_three_four_residuals() {
        let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn all_positive_predictions() {
        let r = classification_report(&[1, 1, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall), (0.5, 0.5, 1.0));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_hand_value() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), [3.5, 1.0, 3.5, 2.0]);
    }
}
