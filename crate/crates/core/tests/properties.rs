use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ecan::config::TrainConfig;
use ecan::corpus::{build_vocab, encode_input, ReviewDoc, SentenceRec};
use ecan::disentangle::attention_pool;
use ecan::encoder::{contrastive_loss_value, encode_document};
use ecan::model::{init_params, Ctx};
use ecan::numerics::{softmax_rows, ModelParams, Tensor};
use ecan::syntax::{gcn_forward, normalize_adjacency};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-30.0f64..30.0, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d))
}

/// Random edge list over `n` tokens; may contain duplicates and self-loops.
fn edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..n, 0..n), 0..2 * n)
}

fn model(cfg: &TrainConfig, seed: u64) -> ModelParams {
    init_params(cfg, 40, 3, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_normalised_and_shift_invariant(x in matrix(3, 5), c in -50.0f64..50.0) {
        let p = softmax_rows(&x);
        for r in 0..3 {
            let s: f64 = p.row_slice(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        let q = softmax_rows(&x.map(|v| v + c));
        prop_assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn adjacency_symmetric_with_sqrt_degree_eigenvector(n in 1usize..9, es in edges(8)) {
        let es: Vec<_> = es.into_iter().filter(|&(h, d)| h < n && d < n).collect();
        let a = normalize_adjacency(&es, n);
        let t = a.tensor();
        let mut deg = vec![0.0f64; n];
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(t.get(i, j), t.get(j, i));
                if t.get(i, j) != 0.0 {
                    deg[i] += 1.0;
                }
            }
        }
        for i in 0..n {
            let row: f64 = t.row_slice(i).iter().sum();
            prop_assert!(row > 0.0 && row <= deg[i].sqrt() + 1e-12);
            let av: f64 = (0..n).map(|j| t.get(i, j) * deg[j].sqrt()).sum();
            prop_assert!((av - deg[i].sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_loss_monotone(
        pos in -5.0f64..5.0,
        negs in prop::collection::vec(-5.0f64..5.0, 1..6),
        bump in 0.01f64..2.0,
        tau in 0.0f64..0.2,
    ) {
        let base = contrastive_loss_value(pos, &negs, tau).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!(contrastive_loss_value(pos + bump, &negs, tau).unwrap() < base);
        let mut raised = negs.clone();
        raised[0] += bump;
        prop_assert!(contrastive_loss_value(pos, &raised, tau).unwrap() > base);
        prop_assert!(contrastive_loss_value(pos, &negs, tau + bump).unwrap() <= base);
    }

    #[test]
    fn pool_weights_normalised(blocks in prop::collection::vec(matrix(1, 8), 1..6), seed in any::<u64>()) {
        let cfg = TrainConfig { d_c: blocks.len(), ..TrainConfig::tiny() };
        let params = model(&cfg, seed);
        let mut ctx = Ctx::eval(&cfg, &params);
        let vs: Vec<_> = blocks.into_iter().map(|b| ctx.constant(b)).collect();
        let out = attention_pool(&mut ctx, &vs);
        let s: f64 = ctx.value(out.alpha).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gcn_permutation_equivariant(n in 2usize..6, es in edges(5), x in matrix(5, 8), seed in any::<u64>()) {
        let es: Vec<_> = es.into_iter().filter(|&(h, d)| h < n && d < n).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row_slice(i).to_vec()).collect();
        let cfg = TrainConfig::tiny();
        let params = model(&cfg, seed);
        // reverse the token order and relabel the edges accordingly
        let perm = |i: usize| n - 1 - i;
        let prows: Vec<Vec<f64>> = (0..n).map(|i| rows[perm(i)].clone()).collect();
        let pes: Vec<_> = es.iter().map(|&(h, d)| (perm(h), perm(d))).collect();

        let mut ctx = Ctx::eval(&cfg, &params);
        let a = ctx.constant(Tensor::from_rows(&rows));
        let out = gcn_forward(&mut ctx, a, &normalize_adjacency(&es, n));
        let b = ctx.constant(Tensor::from_rows(&prows));
        let pout = gcn_forward(&mut ctx, b, &normalize_adjacency(&pes, n));
        prop_assert!(ctx.value(out.g_hat).max_abs_diff(ctx.value(pout.g_hat)) < 1e-9);
        for i in 0..n {
            let r = ctx.value(out.states).row_slice(perm(i)).to_vec();
            let pr = ctx.value(pout.states).row_slice(i).to_vec();
            for (u, v) in r.iter().zip(&pr) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

fn sentence(words: &[&str]) -> SentenceRec {
    SentenceRec {
        tokens: words.iter().map(|w| w.to_string()).collect(),
        dep_edges: vec![],
        labels: vec![],
    }
}

#[test]
fn encoder_is_order_sensitive() {
    let doc = ReviewDoc {
        review_id: "r".into(),
        sentences: vec![sentence(&["a", "b"]), sentence(&["c"]), sentence(&["d", "e", "f"])],
    };
    let vocab = build_vocab(std::slice::from_ref(&doc), 1, vec!["x".into()]).unwrap();
    let cfg = TrainConfig::tiny();
    for seed in 0..20 {
        let params = init_params(&cfg, vocab.len(), 1, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut ctx = Ctx::eval(&cfg, &params);
        let base = encode_document(&mut ctx, &encode_input(&doc, &vocab)).unwrap().doc_summary;
        let base = ctx.value(base).clone();
        let differs = [[1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]].iter().any(|order| {
            let out = encode_document(&mut ctx, &encode_input(&doc.permuted(order), &vocab)).unwrap();
            ctx.value(out.doc_summary).max_abs_diff(&base) > 1e-9
        });
        assert!(differs, "seed {seed}: every permutation gave the same summary");
    }
}
