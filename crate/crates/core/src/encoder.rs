//! Document encoder, coherence scoring and the sentence-ordering loss.
//!
//! The encoder is a token embedding (scaled by √d_m) plus fixed sinusoidal
//! positions, followed by `enc_layers` residual multi-head self-attention
//! blocks. It has no normalisation layers.

use rand::Rng;

use crate::corpus::EncodedDoc;
use crate::error::{Error, Result};
use crate::model::Ctx;
use crate::numerics::{logsumexp, ModelParams, Tensor, Var};

pub const EMBEDDING: &str = "emb";
pub const COHERENCE_WEIGHT: &str = "coh.w";
pub const COHERENCE_BIAS: &str = "coh.b";

pub(crate) fn init_params<R: Rng + ?Sized>(
    p: &mut ModelParams,
    vocab_size: usize,
    d_m: usize,
    d_h: usize,
    layers: usize,
    rng: &mut R,
) {
    p.init_uniform(EMBEDDING, vocab_size, d_m, d_m, rng);
    for l in 0..layers {
        for w in ["wq", "wk", "wv", "wo"] {
            p.init_uniform(format!("enc.{l}.{w}"), d_m, d_m, d_m, rng);
        }
        p.init_uniform(format!("enc.{l}.fc1.w"), d_m, d_h, d_m, rng);
        p.init_zeros(format!("enc.{l}.fc1.b"), 1, d_h);
        p.init_uniform(format!("enc.{l}.fc2.w"), d_h, d_m, d_h, rng);
        p.init_zeros(format!("enc.{l}.fc2.b"), 1, d_m);
    }
    p.init_uniform(COHERENCE_WEIGHT, d_m, 1, d_m, rng);
    p.init_zeros(COHERENCE_BIAS, 1, 1);
}

/// Sinusoidal position table, `len × d`.
pub fn positions(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

fn self_attention(ctx: &mut Ctx, x: Var, layer: usize) -> Var {
    let heads = ctx.cfg.enc_heads;
    let d_head = ctx.cfg.d_m / heads;
    let q = ctx.linear(x, &format!("enc.{layer}.wq"), None);
    let k = ctx.linear(x, &format!("enc.{layer}.wk"), None);
    let v = ctx.linear(x, &format!("enc.{layer}.wv"), None);
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = ctx.g.slice_cols(q, lo, hi);
        let kh = ctx.g.slice_cols(k, lo, hi);
        let vh = ctx.g.slice_cols(v, lo, hi);
        let kt = ctx.g.transpose(kh);
        let scores = ctx.g.matmul(qh, kt);
        let scores = ctx.g.scale(scores, scale);
        let attn = ctx.g.softmax_rows(scores);
        outs.push(ctx.g.matmul(attn, vh));
    }
    let joined = if heads == 1 { outs[0] } else { ctx.g.concat_cols(&outs) };
    ctx.linear(joined, &format!("enc.{layer}.wo"), None)
}

/// Contextual states for a token-id sequence, `len × d_m`.
pub fn encode_tokens(ctx: &mut Ctx, ids: &[usize]) -> Result<Var> {
    let max_len = ctx.cfg.max_len;
    if ids.len() > max_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max_len,
        });
    }
    let d_m = ctx.cfg.d_m;
    let emb = ctx.param(EMBEDDING);
    let x = ctx.g.gather_rows(emb, ids);
    let x = ctx.g.scale(x, (d_m as f64).sqrt());
    let pos = ctx.constant(positions(ids.len(), d_m));
    let x = ctx.g.add(x, pos);
    let mut x = ctx.dropout(x);
    for layer in 0..ctx.cfg.enc_layers {
        let a = self_attention(ctx, x, layer);
        let a = ctx.dropout(a);
        x = ctx.g.add(x, a);
        let f = ctx.feed_forward(x, &format!("enc.{layer}"));
        let f = ctx.dropout(f);
        x = ctx.g.add(x, f);
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Per-position states of the whole review, `len × d_m`.
    pub token_states: Var,
    /// States at each sentence's `[SEP]`, `I × d_m`.
    pub sentence_reps: Var,
    /// State at the final `[CLS]`, `1 × d_m`.
    pub doc_summary: Var,
}

pub fn encode_document(ctx: &mut Ctx, input: &EncodedDoc) -> Result<EncoderOutput> {
    let token_states = encode_tokens(ctx, &input.ids)?;
    let sentence_reps = ctx.g.gather_rows(token_states, &input.sep_positions);
    let cls = input.cls_position();
    let doc_summary = ctx.g.slice_rows(token_states, cls, cls + 1);
    Ok(EncoderOutput {
        token_states,
        sentence_reps,
        doc_summary,
    })
}

/// Linear coherence score `w · x + b` of a `1 × d_m` summary.
pub fn coherence_score(ctx: &mut Ctx, summary: Var) -> Var {
    ctx.linear(summary, COHERENCE_WEIGHT, Some(COHERENCE_BIAS))
}

/// `−log(e^{pos} / (e^{pos} + Σ_j e^{neg_j − τ}))`, evaluated as
/// `logsumexp(pos, neg − τ) − pos`. With no negatives the loss is the
/// constant 0.
pub fn contrastive_loss(ctx: &mut Ctx, pos: Var, negs: &[Var], tau: f64) -> Var {
    if negs.is_empty() {
        return ctx.constant(Tensor::scalar(0.0));
    }
    let negs: Vec<Var> = negs.iter().map(|&n| ctx.g.add_scalar(n, -tau)).collect();
    let mut all = vec![pos];
    all.extend(negs);
    let row = ctx.g.concat_cols(&all);
    let lse = ctx.g.logsumexp_rows(row);
    ctx.g.sub(lse, pos)
}

/// Scalar form of [`contrastive_loss`].
pub fn contrastive_loss_value(pos: f64, negs: &[f64], tau: f64) -> Result<f64> {
    if !pos.is_finite() || negs.iter().any(|n| !n.is_finite()) {
        return Err(Error::NonFinite("coherence score".into()));
    }
    if negs.is_empty() {
        return Ok(0.0);
    }
    let mut all = vec![pos];
    all.extend(negs.iter().map(|n| n - tau));
    Ok(logsumexp(&all) - pos)
}
