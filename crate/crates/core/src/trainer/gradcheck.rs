use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::{build_vocab, make_negatives, Polarity, ReviewDoc, SentenceRec, Vocab};
use crate::error::Result;
use crate::model::{forward_doc, init_params, Ctx};
use crate::numerics::{ModelParams, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub shape: [usize; 2],
    pub max_abs_err: f64,
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, 1e-6)`.
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub eps: f64,
    pub tol: f64,
    pub loss: f64,
    /// One entry per parameter tensor, in name order.
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.rel_err.is_nan() || t.rel_err >= self.tol)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }
}

/// The fixed two-sentence, four-token review the check runs on, with its
/// category list.
pub fn gradcheck_corpus() -> (Vec<String>, ReviewDoc) {
    let sentence = |words: [&str; 4], labels| SentenceRec {
        tokens: words.iter().map(|w| w.to_string()).collect(),
        dep_edges: vec![(1, 0), (1, 2), (2, 3)],
        labels,
    };
    let doc = ReviewDoc {
        review_id: "gradcheck".into(),
        sentences: vec![
            sentence(["the", "food", "was", "great"], vec![(0, Polarity::Positive)]),
            sentence(
                ["then", "service", "seemed", "slow"],
                vec![(1, Polarity::Negative), (0, Polarity::Neutral)],
            ),
        ],
    };
    (vec!["food".into(), "service".into()], doc)
}

fn loss(cfg: &TrainConfig, params: &ModelParams, vocab: &Vocab, doc: &ReviewDoc, negs: &[ReviewDoc]) -> Result<f64> {
    let mut ctx = Ctx::eval(cfg, params);
    let fwd = forward_doc(&mut ctx, doc, vocab, negs)?;
    Ok(ctx.value(fwd.total).item())
}

/// Compares the analytic gradient of the weighted total loss with central
/// differences of step `eps`, for every parameter tensor. Dropout is off.
pub fn gradcheck(cfg: &TrainConfig, eps: f64, tol: f64) -> Result<GradcheckReport> {
    let cfg = TrainConfig {
        dropout: 0.0,
        ..cfg.clone()
    };
    cfg.validate()?;
    let (categories, doc) = gradcheck_corpus();
    let vocab = build_vocab(std::slice::from_ref(&doc), 1, categories)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(&cfg, vocab.len(), vocab.num_categories(), &mut rng);
    let negs = make_negatives(&doc, cfg.negatives, &mut rng);

    let (value, analytic) = {
        let mut ctx = Ctx::eval(&cfg, &params);
        let fwd = forward_doc(&mut ctx, &doc, &vocab, &negs)?;
        let grads = ctx.g.backward(fwd.total);
        (ctx.value(fwd.total).item(), ctx.param_grads(&grads))
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut numeric: BTreeMap<String, Tensor> = BTreeMap::new();
    for name in &names {
        let shape = params.tensor(name).shape();
        let mut g = Tensor::zeros(shape[0], shape[1]);
        for i in 0..g.len() {
            let orig = params.tensor(name).data()[i];
            params.get_mut(name).expect("known").data_mut()[i] = orig + eps;
            let up = loss(&cfg, &params, &vocab, &doc, &negs)?;
            params.get_mut(name).expect("known").data_mut()[i] = orig - eps;
            let down = loss(&cfg, &params, &vocab, &doc, &negs)?;
            params.get_mut(name).expect("known").data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        numeric.insert(name.clone(), g);
    }

    let tensors = names
        .into_iter()
        .map(|name| {
            let n = &numeric[&name];
            let zero = Tensor::zeros(n.rows(), n.cols());
            let a = analytic.get(&name).unwrap_or(&zero);
            let inf = |t: &Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_abs_err = a.max_abs_diff(n);
            let scale = inf(a).max(inf(n)).max(1e-6);
            TensorCheck {
                shape: n.shape(),
                rel_err: max_abs_err / scale,
                max_abs_err,
                name,
            }
        })
        .collect();
    Ok(GradcheckReport {
        eps,
        tol,
        loss: value,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_passes() {
        let report = gradcheck(&TrainConfig::tiny(), 1e-5, 1e-4).unwrap();
        let bad: Vec<_> = report.failures().collect();
        assert!(bad.is_empty(), "{bad:?}");
        let params = report.tensors.iter().map(|t| t.name.as_str()).collect::<Vec<_>>();
        let mut sorted = params.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), params.len());
    }

    #[test]
    fn zero_tolerance_fails() {
        let report = gradcheck(&TrainConfig::tiny(), 1e-5, 0.0).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn isolated_paths() {
        let acd_only = TrainConfig {
            enc_layers: 0,
            delta1: 0.0,
            delta2: 1.0,
            delta3: 0.0,
            ..TrainConfig::tiny()
        };
        assert!(gradcheck(&acd_only, 1e-5, 1e-4).unwrap().passed());
        let cl_only = TrainConfig {
            delta1: 1.0,
            delta2: 0.0,
            delta3: 0.0,
            negatives: 1,
            ..TrainConfig::tiny()
        };
        assert!(gradcheck(&cl_only, 1e-5, 1e-4).unwrap().passed());
    }
}
