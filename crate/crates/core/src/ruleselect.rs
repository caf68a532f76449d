//! Compact rule sets: backward elimination by smallest squared coefficient of
//! a linear hinge classifier, and greedy item pruning inside rules. Both keep
//! whatever cross-validated accuracy the full set had.
//!
//! The integer program over rule indicators is not solved exactly; only the
//! greedy relaxation is implemented.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decorrelate::models::check_labels;
use crate::rulemine::{rule_matrix, rule_metrics, Rule, RuleMatrix, RuleScaling};
use crate::svm::{fit_hinge, SmoSettings};
use crate::tabular::{split_folds, FoldPlan, ItemizedDataset};
use crate::{Error, Result};

/// Accuracy comparisons tolerate this much slack so plateaus terminate.
pub const ACCURACY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Largest rule count a selected subset may have.
    pub max_rules: usize,
    /// Elimination never goes below this many rules.
    pub min_rules: usize,
    pub cv_folds: usize,
    /// Hinge cost per sample.
    pub c: f64,
    /// Seeds the fold assignment.
    pub seed: u64,
    pub scaling: RuleScaling,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { max_rules: 50, min_rules: 1, cv_folds: 5, c: 1.0, seed: 0, scaling: RuleScaling::Binary }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_rules > self.max_rules {
            return Err(Error::InvalidConfig(format!(
                "min_rules {} exceeds max_rules {}",
                self.min_rules, self.max_rules
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidConfig("cv_folds must be at least 2".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig("classifier C must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub iteration: usize,
    /// Index into the original rule list; empty for the starting set.
    pub removed: Option<usize>,
    pub cv_accuracy: f64,
    pub best_accuracy: f64,
    pub n_rules: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Ascending indices into the input matrix columns.
    pub selected: Vec<usize>,
    pub cv_accuracy: f64,
    pub history: Vec<SelectionStep>,
}

pub fn write_history(history: &[SelectionStep], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for step in history {
        w.serialize(step)?;
    }
    w.flush()?;
    Ok(())
}

fn fit_columns(x: &DMatrix<f64>, labels: &[u8], c: f64) -> Result<Vec<f64>> {
    let costs = vec![c; x.nrows()];
    Ok(fit_hinge(x, labels, &costs, &SmoSettings::default())?.beta)
}

/// Predicts held-out rows of every fold and returns the pooled accuracy.
/// A training fold with a single class, or no columns, predicts its majority.
pub fn cv_accuracy(x: &DMatrix<f64>, labels: &[u8], plan: &FoldPlan, c: f64) -> Result<f64> {
    let n = labels.len();
    let mut correct = 0usize;
    for fold in 0..plan.k {
        let (train, test) = plan.split(fold);
        if test.is_empty() {
            continue;
        }
        let ty: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let ones = ty.iter().filter(|&&l| l == 1).count();
        let majority = u8::from(2 * ones >= ty.len());
        let predictions: Vec<u8> = if ones == 0 || ones == ty.len() || x.ncols() == 0 {
            vec![majority; test.len()]
        } else {
            let costs = vec![c; train.len()];
            let model = fit_hinge(&x.select_rows(&train), &ty, &costs, &SmoSettings::default())?;
            model.predict_labels(&x.select_rows(&test))
        };
        correct += test.iter().zip(&predictions).filter(|(&i, &p)| labels[i] == p).count();
    }
    Ok(correct as f64 / n as f64)
}

/// Index (into `cols`) of the smallest squared coefficient; ties go to the
/// higher original column.
fn weakest(weights: &[f64], cols: &[usize]) -> usize {
    let mut pick = 0;
    for k in 1..weights.len() {
        let (a, b) = (weights[k] * weights[k], weights[pick] * weights[pick]);
        let tie = (a - b).abs() <= 1e-12 * a.max(b).max(f64::MIN_POSITIVE);
        if (a < b && !tie) || (tie && cols[k] > cols[pick]) {
            pick = k;
        }
    }
    pick
}

/// Backward elimination. While more than `max_rules` columns remain the
/// removal is forced; afterwards it continues as long as cross-validated
/// accuracy does not fall below the best seen, and stops at `min_rules`.
pub fn select_rules(matrix: &RuleMatrix, labels: &[u8], cfg: &SelectionConfig) -> Result<Selection> {
    cfg.validate()?;
    let (n, r) = matrix.values.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    check_labels(labels)?;
    if r < cfg.min_rules {
        return Err(Error::InvalidConfig(format!("{r} rules but min_rules is {}", cfg.min_rules)));
    }
    let plan = split_folds(n, cfg.cv_folds, cfg.seed)?;

    let mut current: Vec<usize> = (0..r).collect();
    let mut acc = cv_accuracy(&matrix.values, labels, &plan, cfg.c)?;
    let mut best: Option<(f64, Vec<usize>)> = (r <= cfg.max_rules).then(|| (acc, current.clone()));
    let mut history = vec![SelectionStep {
        iteration: 0,
        removed: None,
        cv_accuracy: acc,
        best_accuracy: best.as_ref().map_or(f64::NAN, |b| b.0),
        n_rules: r,
    }];

    while current.len() > cfg.min_rules && !current.is_empty() {
        let x = matrix.values.select_columns(&current);
        let weights = fit_columns(&x, labels, cfg.c)?;
        let removed = current.remove(weakest(&weights, &current));
        acc = cv_accuracy(&matrix.values.select_columns(&current), labels, &plan, cfg.c)?;
        let within_cap = current.len() <= cfg.max_rules;
        let keep_going = match &best {
            _ if !within_cap => true,
            None => true,
            Some((b, _)) => acc >= b - ACCURACY_SLACK,
        };
        if within_cap && keep_going {
            let b = best.as_ref().map_or(acc, |b| b.0.max(acc));
            best = Some((b, current.clone()));
        }
        history.push(SelectionStep {
            iteration: history.len(),
            removed: Some(removed),
            cv_accuracy: acc,
            best_accuracy: best.as_ref().map_or(f64::NAN, |b| b.0),
            n_rules: current.len(),
        });
        if !keep_going {
            break;
        }
    }
    let (cv_accuracy, selected) = best.expect("elimination reaches max_rules before stopping");
    Ok(Selection { selected, cv_accuracy, history })
}

fn without_item(rules: &[Rule], rule: usize, item: usize) -> Vec<Rule> {
    let mut out = Vec::with_capacity(rules.len());
    for (k, r) in rules.iter().enumerate() {
        if k != rule {
            out.push(r.clone());
            continue;
        }
        let mut shorter = r.clone();
        shorter.antecedent.remove(item);
        let duplicate = rules
            .iter()
            .any(|o| o.consequent == shorter.consequent && o.antecedent == shorter.antecedent);
        if !shorter.antecedent.is_empty() && !duplicate {
            out.push(shorter);
        }
    }
    out
}

/// Greedy single-item deletion across all rules. The deletion with the
/// highest cross-validated accuracy is applied while it does not lower the
/// current accuracy; rules left without items, or identical to another rule,
/// are dropped. Support, confidence and lift are recomputed for shortened
/// rules.
pub fn reduce_items(rules: &[Rule], data: &ItemizedDataset, cfg: &SelectionConfig) -> Result<Vec<Rule>> {
    cfg.validate()?;
    if rules.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_labels(&data.labels)?;
    let plan = split_folds(data.len(), cfg.cv_folds, cfg.seed)?;
    let score =
        |rs: &[Rule]| cv_accuracy(&rule_matrix(rs, data, cfg.scaling).values, &data.labels, &plan, cfg.c);

    let mut current = rules.to_vec();
    let mut acc = score(&current)?;
    loop {
        let candidates: Vec<(usize, usize)> = current
            .iter()
            .enumerate()
            .flat_map(|(k, r)| (0..r.antecedent.len()).map(move |i| (k, i)))
            .collect();
        let scored: Vec<(f64, Vec<Rule>)> = candidates
            .par_iter()
            .filter_map(|&(k, i)| {
                let next = without_item(&current, k, i);
                (!next.is_empty()).then_some(next)
            })
            .map(|next| Ok((score(&next)?, next)))
            .collect::<Result<_>>()?;
        // First candidate wins ties, which keeps the result order-independent of threads.
        let Some((best_acc, next)) = scored.into_iter().fold(None, |b: Option<(f64, Vec<Rule>)>, c| match b {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        }) else {
            break;
        };
        if best_acc < acc - ACCURACY_SLACK {
            break;
        }
        acc = best_acc;
        current = next;
    }
    for r in &mut current {
        if let Ok((support, confidence, lift)) = rule_metrics(&r.antecedent, r.consequent, data) {
            r.support = support;
            r.confidence = confidence;
            r.lift = lift;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_matrix(cols: &[Vec<f64>]) -> RuleMatrix {
        let n = cols[0].len();
        let rules = (0..cols.len())
            .map(|j| Rule { antecedent: vec![j as u32], consequent: 1, support: 0.0, confidence: 0.0, lift: 0.0 })
            .collect();
        RuleMatrix {
            values: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]),
            rules,
            scaling: RuleScaling::Binary,
        }
    }

    #[test]
    fn bounds_equal_to_rule_count_keep_everything() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let a: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let b: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let m = binary_matrix(&[a, b]);
        let cfg = SelectionConfig { max_rules: 2, min_rules: 2, ..Default::default() };
        let s = select_rules(&m, &labels, &cfg).unwrap();
        assert_eq!(s.selected, [0, 1]);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn weakest_breaks_ties_towards_higher_index() {
        assert_eq!(weakest(&[0.5, -0.5, 1.0], &[3, 7, 9]), 1);
        assert_eq!(weakest(&[0.1, 0.5], &[4, 2]), 0);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let cfg = SelectionConfig { max_rules: 1, min_rules: 2, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}
