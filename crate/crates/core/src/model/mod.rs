//! The full network: parameter layout and the per-review forward pass.

mod ctx;

use rand::Rng;

pub use ctx::Ctx;

use crate::config::TrainConfig;
use crate::corpus::{encode_input, encode_sentence, Label, ReviewDoc, Vocab};
use crate::disentangle::{self, ChannelOutput, CATEGORY_PREFIX, SENTIMENT_PREFIX};
use crate::encoder::{self, coherence_score, contrastive_loss, encode_document, encode_tokens};
use crate::error::Result;
use crate::heads::{self, acd_loss, acd_predict, acsc_loss, acsc_predict, hierarchical_predict, LossWeights};
use crate::numerics::{ModelParams, Tensor, Var};
use crate::syntax::{self, gcn_forward, normalize_adjacency};

/// Initialises every parameter; biases start at zero, weights uniform in
/// `±1/√fan_in`.
pub fn init_params<R: Rng + ?Sized>(cfg: &TrainConfig, vocab_size: usize, m: usize, rng: &mut R) -> ModelParams {
    let mut p = ModelParams::new();
    encoder::init_params(&mut p, vocab_size, cfg.d_m, cfg.d_h, cfg.enc_layers, rng);
    disentangle::init_stack(&mut p, CATEGORY_PREFIX, cfg.d_c, cfg.l_ch, cfg.d_m, cfg.d_k, cfg.d_h, rng);
    disentangle::init_pool(&mut p, cfg.d_m, rng);
    disentangle::init_stack(&mut p, SENTIMENT_PREFIX, cfg.d_s, cfg.l_ch, cfg.d_m, cfg.d_k, cfg.d_h, rng);
    disentangle::init_mixer(&mut p, cfg.d_s, cfg.d_m, cfg.d_h, rng);
    syntax::init_params(&mut p, cfg.l_g, cfg.d_m, rng);
    heads::init_params(&mut p, m, cfg.d_m, rng);
    p
}

/// Parameters trained at the encoder learning rate: the token embedding and
/// the self-attention backbone.
pub fn is_encoder_param(name: &str) -> bool {
    name == encoder::EMBEDDING || name.starts_with("enc.")
}

pub struct SentenceForward {
    /// Category probabilities, `1 × m`.
    pub p_c: Var,
    /// Polarity distributions, `m × 3`.
    pub p_s: Var,
    pub category_channels: Vec<ChannelOutput>,
    pub sentiment_channels: Vec<ChannelOutput>,
    /// Channel weights of the category pool (absent when ablated).
    pub alpha: Option<Var>,
}

pub struct DocForward {
    pub l_cl: Var,
    pub l_acd: Var,
    pub l_acsc: Var,
    pub total: Var,
    pub pos_score: Var,
    pub neg_scores: Vec<Var>,
    pub sentences: Vec<SentenceForward>,
}

fn sum(ctx: &mut Ctx, terms: &[Var]) -> Var {
    match terms.split_first() {
        None => ctx.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &t| ctx.g.add(acc, t)),
    }
}

/// Forward pass over one review. `negatives` are shuffled copies used only
/// by the coherence term.
pub fn forward_doc(ctx: &mut Ctx, doc: &ReviewDoc, vocab: &Vocab, negatives: &[ReviewDoc]) -> Result<DocForward> {
    let cfg = ctx.cfg;
    let m = vocab.num_categories();
    let input = encode_input(doc, vocab);
    let enc = encode_document(ctx, &input)?;

    let pos_score = coherence_score(ctx, enc.doc_summary);
    let mut neg_scores = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let out = encode_document(ctx, &encode_input(neg, vocab))?;
        neg_scores.push(coherence_score(ctx, out.doc_summary));
    }
    let l_cl = contrastive_loss(ctx, pos_score, &neg_scores, cfg.tau);

    let mut acd_terms = Vec::with_capacity(doc.sentences.len());
    let mut acsc_terms = Vec::with_capacity(doc.sentences.len());
    let mut sentences = Vec::with_capacity(doc.sentences.len());
    for (sentence, span) in doc.sentences.iter().zip(&input.spans) {
        let states = ctx.g.slice_rows(enc.token_states, span.start, span.end);

        let (r_c, category_channels, alpha) = if cfg.ablate_cate_dis {
            (ctx.g.mean_rows(states), Vec::new(), None)
        } else {
            let channels = disentangle::category_channels(ctx, states);
            let blocks: Vec<Var> = channels.iter().map(|c| c.block).collect();
            let pool = disentangle::attention_pool(ctx, &blocks);
            (pool.r_c, channels, Some(pool.alpha))
        };

        let (u_s, sentiment_channels) = if cfg.ablate_senti_dis {
            (ctx.g.mean_rows(states), Vec::new())
        } else {
            let out = disentangle::sentiment_channels(ctx, states);
            (out.u_s, out.channels)
        };

        let g_hat = if cfg.ablate_syntax {
            ctx.constant(Tensor::zeros(1, cfg.d_m))
        } else {
            let n = sentence.tokens.len();
            let local = encode_tokens(ctx, &encode_sentence(sentence, vocab))?;
            let g0 = ctx.g.slice_rows(local, 0, n);
            let adj = normalize_adjacency(&sentence.dep_edges, n);
            gcn_forward(ctx, g0, &adj).g_hat
        };

        let r_s = ctx.g.concat_cols(&[g_hat, u_s]);
        let p_c = acd_predict(ctx, r_c);
        let p_s = acsc_predict(ctx, r_s, m);

        let gold = sentence.gold_by_category(m);
        let present: Vec<bool> = gold.iter().map(Option::is_some).collect();
        acd_terms.push(acd_loss(&mut ctx.g, p_c, &present));
        acsc_terms.push(acsc_loss(&mut ctx.g, p_s, &gold));
        sentences.push(SentenceForward {
            p_c,
            p_s,
            category_channels,
            sentiment_channels,
            alpha,
        });
    }
    let l_acd = sum(ctx, &acd_terms);
    let l_acsc = sum(ctx, &acsc_terms);
    let weights = LossWeights {
        delta1: cfg.delta1,
        delta2: cfg.delta2,
        delta3: cfg.delta3,
    };
    let total = heads::total_loss(&mut ctx.g, l_cl, l_acd, l_acsc, weights);
    Ok(DocForward {
        l_cl,
        l_acd,
        l_acsc,
        total,
        pos_score,
        neg_scores,
        sentences,
    })
}

/// Hierarchical predictions for every sentence of `doc`, dropout off.
pub fn predict_doc(cfg: &TrainConfig, params: &ModelParams, vocab: &Vocab, doc: &ReviewDoc) -> Result<Vec<Vec<Label>>> {
    let mut ctx = Ctx::eval(cfg, params);
    let fwd = forward_doc(&mut ctx, doc, vocab, &[])?;
    Ok(fwd
        .sentences
        .iter()
        .map(|s| hierarchical_predict(ctx.value(s.p_c).data(), ctx.value(s.p_s), cfg.threshold))
        .collect())
}

/// Coherence score of a review as ordered, dropout off.
pub fn coherence_of(cfg: &TrainConfig, params: &ModelParams, vocab: &Vocab, doc: &ReviewDoc) -> Result<f64> {
    let mut ctx = Ctx::eval(cfg, params);
    let out = encode_document(&mut ctx, &encode_input(doc, vocab))?;
    let s = coherence_score(&mut ctx, out.doc_summary);
    Ok(ctx.value(s).item())
}

/// Per-sentence attention summary for visualisation.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceAttention {
    pub tokens: Vec<String>,
    /// `[channel][token]`: column mean of the channel's last attention
    /// matrix, i.e. the attention mass each token receives.
    pub category: Vec<Vec<f64>>,
    pub sentiment: Vec<Vec<f64>>,
    /// Category pool weights over channels.
    pub alpha: Vec<f64>,
}

fn received_mass(attn: &Tensor) -> Vec<f64> {
    let n = attn.rows() as f64;
    (0..attn.cols())
        .map(|j| (0..attn.rows()).map(|i| attn.get(i, j)).sum::<f64>() / n)
        .collect()
}

pub fn attention_summary(
    cfg: &TrainConfig,
    params: &ModelParams,
    vocab: &Vocab,
    doc: &ReviewDoc,
) -> Result<Vec<SentenceAttention>> {
    let mut ctx = Ctx::eval(cfg, params);
    let fwd = forward_doc(&mut ctx, doc, vocab, &[])?;
    let summarize = |ctx: &Ctx, chans: &[ChannelOutput]| -> Vec<Vec<f64>> {
        chans.iter().map(|c| received_mass(ctx.value(c.last_attention()))).collect()
    };
    Ok(doc
        .sentences
        .iter()
        .zip(&fwd.sentences)
        .map(|(s, f)| SentenceAttention {
            tokens: s.tokens.clone(),
            category: summarize(&ctx, &f.category_channels),
            sentiment: summarize(&ctx, &f.sentiment_channels),
            alpha: f.alpha.map(|a| ctx.value(a).data().to_vec()).unwrap_or_default(),
        })
        .collect())
}
