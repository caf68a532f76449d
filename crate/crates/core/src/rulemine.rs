//! Class-association rules: Apriori over per-item row bitsets, mined
//! separately for each class, plus the rule design matrix.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tabular::{ItemId, ItemizedDataset};
use crate::{Error, Result};

/// Negative-class rules score `1/θ`, capped here.
pub const INVERSE_CONFIDENCE_CAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted, non-empty.
    pub antecedent: Vec<ItemId>,
    pub consequent: u8,
    /// Support of antecedent and consequent together.
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl Rule {
    pub fn matches(&self, transaction: &[ItemId]) -> bool {
        is_subset(&self.antecedent, transaction)
    }

    pub fn describe(&self, names: &[String]) -> String {
        let items: Vec<&str> = self.antecedent.iter().map(|&i| names[i as usize].as_str()).collect();
        format!("{{{}}} => {}", items.join(", "), self.consequent)
    }
}

/// Both slices sorted ascending.
pub fn is_subset(small: &[ItemId], big: &[ItemId]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.by_ref().any(|b| b == s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    pub max_len: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { min_support: 0.05, min_confidence: 0.6, max_len: 3 }
    }
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

struct Index {
    items: Vec<Bits>,
    classes: [Bits; 2],
    n: usize,
}

impl Index {
    fn build(data: &ItemizedDataset) -> Self {
        let n = data.len();
        let mut items = vec![Bits::empty(n); data.item_names.len()];
        let mut classes = [Bits::empty(n), Bits::empty(n)];
        for (i, t) in data.transactions.iter().enumerate() {
            for &item in t {
                items[item as usize].set(i);
            }
            classes[data.labels[i] as usize].set(i);
        }
        Self { items, classes, n }
    }

    fn rows(&self, itemset: &[ItemId]) -> Bits {
        let mut acc = self.items[itemset[0] as usize].clone();
        for &item in &itemset[1..] {
            acc = acc.and(&self.items[item as usize]);
        }
        acc
    }
}

fn check_thresholds(cfg: &MiningConfig) -> Result<()> {
    let ok = |v: f64| v > 0.0 && v <= 1.0;
    if !ok(cfg.min_support) || !ok(cfg.min_confidence) || cfg.max_len == 0 {
        return Err(Error::InvalidConfig("thresholds must lie in (0, 1] and max_len must be at least 1".into()));
    }
    Ok(())
}

/// Joins itemsets sharing all but their last item, then drops candidates
/// with an infrequent subset.
fn next_candidates(frequent: &[Vec<ItemId>]) -> Vec<Vec<ItemId>> {
    let known: HashSet<&[ItemId]> = frequent.iter().map(Vec::as_slice).collect();
    let mut out = Vec::new();
    for (a_idx, a) in frequent.iter().enumerate() {
        let k = a.len();
        for b in &frequent[a_idx + 1..] {
            if a[..k - 1] != b[..k - 1] {
                break;
            }
            let mut cand = a.clone();
            cand.push(b[k - 1]);
            let all_subsets_frequent = (0..cand.len()).all(|skip| {
                let sub: Vec<ItemId> =
                    cand.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
                known.contains(sub.as_slice())
            });
            if all_subsets_frequent {
                out.push(cand);
            }
        }
    }
    out
}

fn mine_class(index: &Index, class: u8, cfg: &MiningConfig) -> Vec<Rule> {
    let n = index.n as f64;
    let class_rows = &index.classes[class as usize];
    let class_support = class_rows.count() as f64 / n;
    if class_support == 0.0 {
        return Vec::new();
    }
    let mut rules = Vec::new();
    let mut level: Vec<Vec<ItemId>> = (0..index.items.len() as ItemId).map(|i| vec![i]).collect();
    for _ in 0..cfg.max_len {
        // (itemset, antecedent count, joint count)
        let counted: Vec<(Vec<ItemId>, usize, usize)> = level
            .into_par_iter()
            .filter_map(|set| {
                let rows = index.rows(&set);
                let joint = rows.and(class_rows).count();
                (joint as f64 / n >= cfg.min_support).then(|| (set, rows.count(), joint))
            })
            .collect();
        for (set, count, joint) in &counted {
            let confidence = *joint as f64 / *count as f64;
            if confidence >= cfg.min_confidence {
                rules.push(Rule {
                    antecedent: set.clone(),
                    consequent: class,
                    support: *joint as f64 / n,
                    confidence,
                    lift: confidence / class_support,
                });
            }
        }
        let frequent: Vec<Vec<ItemId>> = counted.into_iter().map(|c| c.0).collect();
        level = next_candidates(&frequent);
        if level.is_empty() {
            break;
        }
    }
    rules
}

/// All rules `A ⇒ c` with `|A| ≤ max_len`, `support(A ∪ c) ≥ min_support` and
/// `confidence ≥ min_confidence`, for both classes. Class-0 rules come first;
/// within a class rules are ordered by length, then lexicographically.
pub fn apriori(data: &ItemizedDataset, cfg: &MiningConfig) -> Result<Vec<Rule>> {
    check_thresholds(cfg)?;
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let index = Index::build(data);
    let mut rules = Vec::new();
    for class in [0u8, 1] {
        let mut mined = mine_class(&index, class, cfg);
        mined.sort_by(|a, b| a.antecedent.len().cmp(&b.antecedent.len()).then_with(|| a.antecedent.cmp(&b.antecedent)));
        rules.extend(mined);
    }
    Ok(rules)
}

/// `(support(A ∪ C), confidence, lift)` by exact counting.
pub fn rule_metrics(antecedent: &[ItemId], consequent: u8, data: &ItemizedDataset) -> Result<(f64, f64, f64)> {
    if antecedent.iter().any(|&i| i as usize >= data.item_names.len()) {
        return Err(Error::InvalidConfig("antecedent item outside vocabulary".into()));
    }
    let mut sorted = antecedent.to_vec();
    sorted.sort_unstable();
    let n = data.len() as f64;
    let (mut count_a, mut count_ac, mut count_c) = (0usize, 0usize, 0usize);
    for (t, &l) in data.transactions.iter().zip(&data.labels) {
        let hit = is_subset(&sorted, t);
        count_a += usize::from(hit);
        count_c += usize::from(l == consequent);
        count_ac += usize::from(hit && l == consequent);
    }
    if count_a == 0 {
        return Err(Error::UndefinedConfidence);
    }
    if count_c == 0 {
        return Err(Error::UndefinedLift);
    }
    let confidence = count_ac as f64 / count_a as f64;
    Ok((count_ac as f64 / n, confidence, confidence / (count_c as f64 / n)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleScaling {
    #[default]
    Binary,
    /// `θ` for positive-class rules, `min(1/θ, 10)` for negative-class rules.
    Confidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleMatrix {
    pub values: DMatrix<f64>,
    pub rules: Vec<Rule>,
    pub scaling: RuleScaling,
}

impl RuleMatrix {
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            values: self.values.select_columns(cols),
            rules: cols.iter().map(|&c| self.rules[c].clone()).collect(),
            scaling: self.scaling,
        }
    }
}

pub fn rule_scale(rule: &Rule, scaling: RuleScaling) -> f64 {
    match scaling {
        RuleScaling::Binary => 1.0,
        RuleScaling::Confidence if rule.consequent == 1 => rule.confidence,
        RuleScaling::Confidence if rule.confidence > 0.0 => (1.0 / rule.confidence).min(INVERSE_CONFIDENCE_CAP),
        RuleScaling::Confidence => INVERSE_CONFIDENCE_CAP,
    }
}

/// Entry `(i, j)` is the scale of rule `j` when its antecedent holds in
/// transaction `i`, else zero.
pub fn rule_matrix(rules: &[Rule], data: &ItemizedDataset, scaling: RuleScaling) -> RuleMatrix {
    let scales: Vec<f64> = rules.iter().map(|r| rule_scale(r, scaling)).collect();
    let values = DMatrix::from_fn(data.len(), rules.len(), |i, j| {
        if rules[j].matches(&data.transactions[i]) {
            scales[j]
        } else {
            0.0
        }
    });
    RuleMatrix { values, rules: rules.to_vec(), scaling }
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    antecedent: Vec<String>,
    consequent: u8,
    support: f64,
    confidence: f64,
    lift: f64,
}

pub fn write_rules(rules: &[Rule], names: &[String], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rules {
        let rec = RuleRecord {
            antecedent: r.antecedent.iter().map(|&i| names[i as usize].clone()).collect(),
            consequent: r.consequent,
            support: r.support,
            confidence: r.confidence,
            lift: r.lift,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Item names are resolved against `names`; unknown names are a schema error.
pub fn read_rules(path: &Path, names: &[String]) -> Result<Vec<Rule>> {
    let mut rules = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RuleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno as u64 + 1, msg: e.to_string() })?;
        let mut antecedent = rec
            .antecedent
            .iter()
            .map(|a| {
                names
                    .iter()
                    .position(|n| n == a)
                    .map(|i| i as ItemId)
                    .ok_or_else(|| Error::Schema(format!("unknown item `{a}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        antecedent.sort_unstable();
        rules.push(Rule {
            antecedent,
            consequent: rec.consequent,
            support: rec.support,
            confidence: rec.confidence,
            lift: rec.lift,
        });
    }
    Ok(rules)
}
