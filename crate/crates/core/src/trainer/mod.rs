//! Multi-task training: one review per optimizer step.

pub mod checkpoint;
mod gradcheck;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub use gradcheck::{gradcheck, gradcheck_corpus, GradcheckReport, TensorCheck};

use crate::config::TrainConfig;
use crate::corpus::{build_vocab, make_negatives, Label, ReviewDoc, Vocab};
use crate::error::{Error, Result};
use crate::heads::{evaluate, Metrics};
use crate::model::{forward_doc, init_params, is_encoder_param, predict_doc, Ctx};
use crate::numerics::{adamw_step, ModelParams, OptimizerState};

/// Everything needed to resume or evaluate a run; also what a checkpoint
/// file holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    pub fn new(config: TrainConfig, vocab: Vocab) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&config, vocab.len(), vocab.num_categories(), &mut rng);
        let optimizer = OptimizerState::new(config.beta1, config.beta2, config.adam_eps, config.weight_decay);
        TrainState {
            config,
            vocab,
            params,
            optimizer,
            epoch: 0,
            rng,
        }
    }

    pub fn predict(&self, doc: &ReviewDoc) -> Result<Vec<Vec<Label>>> {
        predict_doc(&self.config, &self.params, &self.vocab, doc)
    }

    pub fn evaluate(&self, docs: &[ReviewDoc]) -> Result<Metrics> {
        evaluate_docs(&self.config, &self.params, &self.vocab, docs)
    }
}

/// Loss components of one step, before weighting (except `total`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_cl: f64,
    pub l_acd: f64,
    pub l_acsc: f64,
    pub total: f64,
}

/// Forward, backward and one AdamW update on a single review.
///
/// Only parameters the weighted loss reaches are updated; with a loss weight
/// of zero the corresponding branch is left bitwise unchanged.
pub fn train_step(state: &mut TrainState, doc: &ReviewDoc) -> Result<StepLosses> {
    let TrainState {
        config,
        vocab,
        params,
        optimizer,
        rng,
        ..
    } = state;
    let negatives = make_negatives(doc, config.negatives, rng);
    let (losses, grads) = {
        let mut ctx = Ctx::train(config, params, rng);
        let fwd = forward_doc(&mut ctx, doc, vocab, &negatives)?;
        let losses = StepLosses {
            l_cl: ctx.value(fwd.l_cl).item(),
            l_acd: ctx.value(fwd.l_acd).item(),
            l_acsc: ctx.value(fwd.l_acsc).item(),
            total: ctx.value(fwd.total).item(),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                l_cl: losses.l_cl,
                l_acd: losses.l_acd,
                l_acsc: losses.l_acsc,
            });
        }
        let grads = ctx.g.backward(fwd.total);
        (losses, ctx.param_grads(&grads))
    };
    let (lr_enc, lr_other) = (config.lr_encoder, config.lr_other);
    adamw_step(params, &grads, optimizer, |name| {
        if is_encoder_param(name) {
            lr_enc
        } else {
            lr_other
        }
    })?;
    Ok(losses)
}

/// Gold labels of every sentence, in corpus order.
pub fn gold_labels(docs: &[ReviewDoc]) -> Vec<Vec<Label>> {
    docs.iter()
        .flat_map(|d| d.sentences.iter().map(|s| s.labels.clone()))
        .collect()
}

pub fn evaluate_docs(cfg: &TrainConfig, params: &ModelParams, vocab: &Vocab, docs: &[ReviewDoc]) -> Result<Metrics> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut preds = Vec::new();
    for doc in docs {
        preds.extend(predict_doc(cfg, params, vocab, doc)?);
    }
    evaluate(&preds, &gold_labels(docs), vocab.num_categories())
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-review means over the epoch.
    pub l_cl: f64,
    pub l_acd: f64,
    pub l_acsc: f64,
    pub total: f64,
    pub dev: Metrics,
}

impl EpochRecord {
    pub fn to_json(&self) -> Value {
        json!({
            "epoch": self.epoch,
            "l_cl": self.l_cl,
            "l_acd": self.l_acd,
            "l_acsc": self.l_acsc,
            "total": self.total,
            "dev": self.dev.to_json(),
        })
    }
}

pub struct TrainOutcome {
    /// State after the epoch with the best dev score (the initial state when
    /// no epoch ran).
    pub best: TrainState,
    pub best_epoch: usize,
    pub last: TrainState,
    pub log: Vec<EpochRecord>,
}

/// Splits off a seeded tenth of `docs` (at least one review when there are
/// two or more) as the development set. Returns `(train, dev)`.
pub fn split_dev(docs: &[ReviewDoc], seed: u64) -> (Vec<ReviewDoc>, Vec<ReviewDoc>) {
    let n = docs.len();
    let k = if n > 1 { ((n as f64 * 0.1).round() as usize).max(1) } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut is_dev = vec![false; n];
    for &i in &idx[..k] {
        is_dev[i] = true;
    }
    let (dev, train): (Vec<_>, Vec<_>) = docs.iter().cloned().zip(is_dev).partition(|(_, d)| *d);
    (train.into_iter().map(|(d, _)| d).collect(), dev.into_iter().map(|(d, _)| d).collect())
}

/// Trains for `cfg.epochs` epochs, evaluating on the dev set after each and
/// keeping the best state. Without a dev set a tenth of `corpus` is held
/// out. `on_epoch` sees every log record as it is produced.
pub fn train(
    corpus: &[ReviewDoc],
    dev: Option<&[ReviewDoc]>,
    categories: Vec<String>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (train_docs, dev_docs) = match dev {
        Some(d) => (corpus.to_vec(), d.to_vec()),
        None => split_dev(corpus, cfg.seed),
    };
    if dev.is_some() && dev_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = build_vocab(&train_docs, cfg.min_count, categories)?;
    let mut state = TrainState::new(cfg.clone(), vocab);
    let mut best = state.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut state.rng);
        let mut sums = StepLosses::default();
        for &i in &order {
            let l = train_step(&mut state, &train_docs[i])?;
            sums.l_cl += l.l_cl;
            sums.l_acd += l.l_acd;
            sums.l_acsc += l.l_acsc;
            sums.total += l.total;
        }
        state.epoch = epoch;
        let n = train_docs.len() as f64;
        let metrics = if dev_docs.is_empty() {
            Metrics::default()
        } else {
            state.evaluate(&dev_docs)?
        };
        let record = EpochRecord {
            epoch,
            l_cl: sums.l_cl / n,
            l_acd: sums.l_acd / n,
            l_acsc: sums.l_acsc / n,
            total: sums.total / n,
            dev: metrics,
        };
        on_epoch(&record);
        log.push(record);
        let score = metrics.selection_score();
        if score > best_score {
            best_score = score;
            best = state.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: state,
        log,
    })
}
