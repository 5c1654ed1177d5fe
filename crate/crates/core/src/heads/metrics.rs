//! Precision / recall / F1 for category detection and category-sentiment
//! classification.
//!
//! A category takes part in the macro average only if it occurs in the gold
//! labels or in the predictions; ratios with a zero denominator are 0.

use std::collections::BTreeSet;

use serde_json::{Map, Value};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskMetrics {
    pub macro_avg: Prf,
    pub micro: Prf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub acd: TaskMetrics,
    pub acsc: TaskMetrics,
}

impl Metrics {
    /// Mean of the two macro-F1 scores; the model-selection criterion.
    pub fn selection_score(&self) -> f64 {
        0.5 * (self.acd.macro_avg.f1 + self.acsc.macro_avg.f1)
    }

    /// Flat object with keys `acd.macro.p`, …, `acsc.micro.f1`.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (task, m) in [("acd", &self.acd), ("acsc", &self.acsc)] {
            for (avg, prf) in [("macro", &m.macro_avg), ("micro", &m.micro)] {
                for (k, v) in [("p", prf.p), ("r", prf.r), ("f1", prf.f1)] {
                    map.insert(format!("{task}.{avg}.{k}"), Value::from(v));
                }
            }
        }
        Value::Object(map)
    }
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn task_metrics<T: Ord + Copy>(
    preds: &[BTreeSet<T>],
    gold: &[BTreeSet<T>],
    m: usize,
    category_of: impl Fn(&T) -> usize,
) -> TaskMetrics {
    let mut per = vec![Counts::default(); m];
    for (p, g) in preds.iter().zip(gold) {
        for item in p {
            let c = &mut per[category_of(item)];
            if g.contains(item) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for item in g.difference(p) {
            per[category_of(item)].fn_ += 1;
        }
    }
    let active: Vec<Prf> = per
        .iter()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(|c| Prf::from_counts(c.tp, c.fp, c.fn_))
        .collect();
    let macro_avg = if active.is_empty() {
        Prf::default()
    } else {
        let n = active.len() as f64;
        Prf {
            p: active.iter().map(|x| x.p).sum::<f64>() / n,
            r: active.iter().map(|x| x.r).sum::<f64>() / n,
            f1: active.iter().map(|x| x.f1).sum::<f64>() / n,
        }
    };
    let (tp, fp, fn_) = per
        .iter()
        .fold((0, 0, 0), |(a, b, c), x| (a + x.tp, b + x.fp, c + x.fn_));
    TaskMetrics {
        macro_avg,
        micro: Prf::from_counts(tp, fp, fn_),
    }
}

/// Scores per-sentence predictions against per-sentence gold labels over `m`
/// categories.
pub fn evaluate(preds: &[Vec<Label>], gold: &[Vec<Label>], m: usize) -> Result<Metrics> {
    if preds.len() != gold.len() {
        return Err(Error::Misaligned {
            preds: preds.len(),
            gold: gold.len(),
        });
    }
    let pairs = |v: &[Vec<Label>]| -> Vec<BTreeSet<Label>> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    };
    let cats = |v: &[Vec<Label>]| -> Vec<BTreeSet<usize>> {
        v.iter().map(|s| s.iter().map(|&(c, _)| c).collect()).collect()
    };
    Ok(Metrics {
        acd: task_metrics(&cats(preds), &cats(gold), m, |&c| c),
        acsc: task_metrics(&pairs(preds), &pairs(gold), m, |&(c, _)| c),
    })
}
