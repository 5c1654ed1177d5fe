//! Category detection and sentiment heads, the multi-task objective and
//! hierarchical prediction.

mod metrics;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Polarity};
use crate::model::Ctx;
use crate::numerics::{sigmoid, softmax_rows, Graph, ModelParams, Tensor, Var, LOG_EPS};

pub use metrics::{evaluate, Metrics, Prf, TaskMetrics};

pub const ACD_WEIGHT: &str = "acd.w";
pub const ACD_BIAS: &str = "acd.b";
pub const ACSC_BIAS: &str = "acsc.b";

pub fn acsc_weight(category: usize) -> String {
    format!("acsc.w.{category}")
}

pub(crate) fn init_params<R: Rng + ?Sized>(p: &mut ModelParams, m: usize, d_m: usize, rng: &mut R) {
    p.init_uniform(ACD_WEIGHT, m, d_m, d_m, rng);
    p.init_zeros(ACD_BIAS, 1, m);
    for j in 0..m {
        p.init_uniform(acsc_weight(j), 3, 2 * d_m, 2 * d_m, rng);
    }
    p.init_zeros(ACSC_BIAS, 1, 3);
}

/// `p^c = sigmoid(W^c r_c + b^c)`, `1 × m`.
pub fn acd_predict(ctx: &mut Ctx, r_c: Var) -> Var {
    let w = ctx.param(ACD_WEIGHT);
    let wt = ctx.g.transpose(w);
    let logits = ctx.g.matmul(r_c, wt);
    let b = ctx.param(ACD_BIAS);
    let logits = ctx.g.add_row(logits, b);
    ctx.g.sigmoid(logits)
}

/// Row `j` is `softmax(W^s_j r_s + b^s)`; `m × 3`, columns in
/// [`Polarity`] order.
pub fn acsc_predict(ctx: &mut Ctx, r_s: Var, m: usize) -> Var {
    let rows: Vec<Var> = (0..m)
        .map(|j| {
            let w = ctx.param(&acsc_weight(j));
            let wt = ctx.g.transpose(w);
            ctx.g.matmul(r_s, wt)
        })
        .collect();
    let logits = ctx.g.concat_rows(&rows);
    let b = ctx.param(ACSC_BIAS);
    let logits = ctx.g.add_row(logits, b);
    ctx.g.softmax_rows(logits)
}

/// Binary cross-entropy summed over categories, logs clamped at `LOG_EPS`.
pub fn acd_loss(g: &mut Graph, p_c: Var, gold: &[bool]) -> Var {
    let [_, m] = g.shape(p_c);
    assert_eq!(m, gold.len(), "acd_loss: {m} probabilities but {} labels", gold.len());
    let y = Tensor::row(gold.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    let not_y = y.map(|v| 1.0 - v);
    let y = g.constant(y);
    let not_y = g.constant(not_y);
    let log_p = g.log(p_c);
    let neg = g.scale(p_c, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_1mp = g.log(one_minus);
    let a = g.mul(y, log_p);
    let b = g.mul(not_y, log_1mp);
    let s = g.add(a, b);
    let s = g.sum_all(s);
    g.scale(s, -1.0)
}

/// Cross-entropy over gold-present categories only. Rows of absent
/// categories are never read, so they cannot influence the value.
pub fn acsc_loss(g: &mut Graph, p_s: Var, gold: &[Option<Polarity>]) -> Var {
    let [m, k] = g.shape(p_s);
    assert_eq!(m, gold.len(), "acsc_loss: {m} rows but {} labels", gold.len());
    assert_eq!(k, 3, "acsc_loss: expected 3 polarity columns, got {k}");
    let present: Vec<(usize, Polarity)> = gold
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .collect();
    if present.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let rows: Vec<usize> = present.iter().map(|&(i, _)| i).collect();
    let picked = g.gather_rows(p_s, &rows);
    let mut onehot = Tensor::zeros(rows.len(), 3);
    for (r, &(_, p)) in present.iter().enumerate() {
        onehot.set(r, p.index(), 1.0);
    }
    let onehot = g.constant(onehot);
    let logs = g.log(picked);
    let sel = g.mul(onehot, logs);
    let s = g.sum_all(sel);
    g.scale(s, -1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            delta1: 0.1,
            delta2: 0.5,
            delta3: 0.5,
        }
    }
}

/// `δ1·l_cl + δ2·l_acd + δ3·l_acsc`. Terms with a zero weight are left out
/// of the graph entirely, so nothing upstream of them receives a gradient.
pub fn total_loss(g: &mut Graph, l_cl: Var, l_acd: Var, l_acsc: Var, w: LossWeights) -> Var {
    let terms: Vec<Var> = [(l_cl, w.delta1), (l_acd, w.delta2), (l_acsc, w.delta3)]
        .into_iter()
        .filter(|&(_, d)| d != 0.0)
        .map(|(l, d)| g.scale(l, d))
        .collect();
    match terms.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &t| g.add(acc, t)),
    }
}

pub fn total_loss_value(l_cl: f64, l_acd: f64, l_acsc: f64, w: LossWeights) -> f64 {
    w.delta1 * l_cl + w.delta2 * l_acd + w.delta3 * l_acsc
}

/// Scalar form of [`acd_loss`].
pub fn acd_loss_value(p_c: &[f64], gold: &[bool]) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(Tensor::row(p_c.to_vec()));
    let l = acd_loss(&mut g, p, gold);
    g.value(l).item()
}

/// Scalar form of [`acsc_loss`]; `p_s` is `m × 3`.
pub fn acsc_loss_value(p_s: &Tensor, gold: &[Option<Polarity>]) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(p_s.clone());
    let l = acsc_loss(&mut g, p, gold);
    g.value(l).item()
}

/// Sigmoid of a logit row, for callers holding raw scores.
pub fn acd_probabilities(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}

/// Row-softmax of an `m × 3` logit matrix.
pub fn acsc_probabilities(logits: &Tensor) -> Tensor {
    softmax_rows(logits)
}

/// Emits `(i, argmax_j p^s_ij)` for every category with `p^c_i ≥ threshold`.
/// Ties go to the earlier polarity.
pub fn hierarchical_predict(p_c: &[f64], p_s: &Tensor, threshold: f64) -> Vec<Label> {
    assert_eq!(p_s.rows(), p_c.len(), "p^s rows must match the category count");
    p_c.iter()
        .enumerate()
        .filter(|&(_, &p)| p >= threshold)
        .map(|(i, _)| {
            let row = p_s.row_slice(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            (i, Polarity::from_index(best))
        })
        .collect()
}

/// Upper bound of a loss term whose probability matches its target exactly.
pub fn perfect_term_bound() -> f64 {
    -(1.0 - LOG_EPS).ln()
}
