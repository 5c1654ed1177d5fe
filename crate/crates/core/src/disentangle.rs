//! Parallel attention channels that split a sentence's token states into
//! category and sentiment components.
//!
//! Each channel owns its projections: `L_ch` layers of scaled dot-product
//! self-attention over the sentence tokens (no residual), a feed-forward map
//! back to `d_m`, then a mean over tokens. Category blocks are combined by
//! attention pooling over channels; sentiment blocks are concatenated,
//! mixed linearly and passed through a feed-forward map.

use rand::Rng;

use crate::model::Ctx;
use crate::numerics::{ModelParams, Var};

pub const CATEGORY_PREFIX: &str = "cat";
pub const SENTIMENT_PREFIX: &str = "sent";

#[allow(clippy::too_many_arguments)]
pub(crate) fn init_stack<R: Rng + ?Sized>(
    p: &mut ModelParams,
    prefix: &str,
    channels: usize,
    layers: usize,
    d_m: usize,
    d_k: usize,
    d_h: usize,
    rng: &mut R,
) {
    for c in 0..channels {
        for l in 0..layers {
            let d_in = if l == 0 { d_m } else { d_k };
            for w in ["wq", "wk", "wv"] {
                p.init_uniform(format!("{prefix}.{c}.{l}.{w}"), d_in, d_k, d_in, rng);
            }
        }
        p.init_uniform(format!("{prefix}.{c}.fc1.w"), d_k, d_h, d_k, rng);
        p.init_zeros(format!("{prefix}.{c}.fc1.b"), 1, d_h);
        p.init_uniform(format!("{prefix}.{c}.fc2.w"), d_h, d_m, d_h, rng);
        p.init_zeros(format!("{prefix}.{c}.fc2.b"), 1, d_m);
    }
}

pub(crate) fn init_pool<R: Rng + ?Sized>(p: &mut ModelParams, d_m: usize, rng: &mut R) {
    p.init_uniform("pool.wm", d_m, d_m, d_m, rng);
    p.init_zeros("pool.bm", 1, d_m);
    p.init_uniform("pool.wj", d_m, 1, d_m, rng);
}

pub(crate) fn init_mixer<R: Rng + ?Sized>(p: &mut ModelParams, d_s: usize, d_m: usize, d_h: usize, rng: &mut R) {
    p.init_uniform("mix.wu", d_s * d_m, d_m, d_s * d_m, rng);
    p.init_uniform("mix.fc1.w", d_m, d_h, d_m, rng);
    p.init_zeros("mix.fc1.b", 1, d_h);
    p.init_uniform("mix.fc2.w", d_h, d_m, d_h, rng);
    p.init_zeros("mix.fc2.b", 1, d_m);
}

#[derive(Clone, Debug)]
pub struct ChannelOutput {
    /// Row-stochastic attention matrix of every layer, `n × n`.
    pub attention: Vec<Var>,
    /// Feed-forward output per token, `n × d_m`.
    pub tokens: Var,
    /// Token mean, `1 × d_m`.
    pub block: Var,
}

impl ChannelOutput {
    pub fn last_attention(&self) -> Var {
        *self.attention.last().expect("at least one layer")
    }
}

/// Channel `index` of the stack named `prefix` over `n × d_m` states.
pub fn channel(ctx: &mut Ctx, prefix: &str, index: usize, states: Var) -> ChannelOutput {
    let scale = 1.0 / (ctx.cfg.d_k as f64).sqrt();
    let mut h = states;
    let mut attention = Vec::with_capacity(ctx.cfg.l_ch);
    for l in 0..ctx.cfg.l_ch {
        let q = ctx.linear(h, &format!("{prefix}.{index}.{l}.wq"), None);
        let k = ctx.linear(h, &format!("{prefix}.{index}.{l}.wk"), None);
        let v = ctx.linear(h, &format!("{prefix}.{index}.{l}.wv"), None);
        let kt = ctx.g.transpose(k);
        let scores = ctx.g.matmul(q, kt);
        let scores = ctx.g.scale(scores, scale);
        let a = ctx.g.softmax_rows(scores);
        attention.push(a);
        let out = ctx.g.matmul(a, v);
        h = ctx.dropout(out);
    }
    let tokens = ctx.feed_forward(h, &format!("{prefix}.{index}"));
    let block = ctx.g.mean_rows(tokens);
    ChannelOutput {
        attention,
        tokens,
        block,
    }
}

/// The `d_c` category channels, in channel order.
pub fn category_channels(ctx: &mut Ctx, states: Var) -> Vec<ChannelOutput> {
    (0..ctx.cfg.d_c)
        .map(|c| channel(ctx, CATEGORY_PREFIX, c, states))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct PoolOutput {
    /// Category representation, `1 × d_m`.
    pub r_c: Var,
    /// Channel weights, `1 × d_c`, summing to one.
    pub alpha: Var,
}

/// `score_i = w_jᵀ tanh(W_Mᵀ v_i + b_M)`, `α = softmax(score)`,
/// `r_c = Σ_i α_i v_i`.
pub fn attention_pool(ctx: &mut Ctx, blocks: &[Var]) -> PoolOutput {
    let stacked = ctx.g.concat_rows(blocks);
    let m = ctx.linear(stacked, "pool.wm", Some("pool.bm"));
    let m = ctx.g.tanh(m);
    let scores = ctx.linear(m, "pool.wj", None);
    let scores = ctx.g.transpose(scores);
    let alpha = ctx.g.softmax_rows(scores);
    let r_c = ctx.g.matmul(alpha, stacked);
    PoolOutput { r_c, alpha }
}

#[derive(Clone, Debug)]
pub struct SentimentOutput {
    /// Disentangled sentiment representation, `1 × d_m`.
    pub u_s: Var,
    pub channels: Vec<ChannelOutput>,
}

/// The `d_s` sentiment channels, concatenated, mixed by `W_U` and passed
/// through a feed-forward map.
pub fn sentiment_channels(ctx: &mut Ctx, states: Var) -> SentimentOutput {
    let channels: Vec<ChannelOutput> = (0..ctx.cfg.d_s)
        .map(|c| channel(ctx, SENTIMENT_PREFIX, c, states))
        .collect();
    let blocks: Vec<Var> = channels.iter().map(|c| c.block).collect();
    let joined = ctx.g.concat_cols(&blocks);
    let u = ctx.linear(joined, "mix.wu", None);
    let u_s = ctx.feed_forward(u, "mix");
    SentimentOutput { u_s, channels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &TrainConfig, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        init_stack(&mut p, CATEGORY_PREFIX, cfg.d_c, cfg.l_ch, cfg.d_m, cfg.d_k, cfg.d_h, &mut rng);
        init_stack(&mut p, SENTIMENT_PREFIX, cfg.d_s, cfg.l_ch, cfg.d_m, cfg.d_k, cfg.d_h, &mut rng);
        init_pool(&mut p, cfg.d_m, &mut rng);
        init_mixer(&mut p, cfg.d_s, cfg.d_m, cfg.d_h, &mut rng);
        p
    }

    fn random_states(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_token_attends_to_itself() {
        let cfg = TrainConfig { l_ch: 2, ..TrainConfig::tiny() };
        let params = setup(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ctx = Ctx::eval(&cfg, &params);
        let x = ctx.constant(random_states(&mut rng, 1, cfg.d_m));
        for ch in category_channels(&mut ctx, x) {
            for a in &ch.attention {
                assert_eq!(ctx.value(*a).data(), &[1.0]);
            }
            assert_eq!(ctx.value(ch.block), ctx.value(ch.tokens));
        }
    }

    #[test]
    fn identical_tokens_give_uniform_attention() {
        let cfg = TrainConfig::default();
        let params = setup(&cfg, 2);
        let row: Vec<f64> = (0..cfg.d_m).map(|i| (i as f64).cos()).collect();
        let x = Tensor::from_rows(&vec![row; 5]);
        let mut ctx = Ctx::eval(&cfg, &params);
        let xv = ctx.constant(x);
        for ch in category_channels(&mut ctx, xv) {
            for a in &ch.attention {
                for v in ctx.value(*a).data() {
                    assert!((v - 0.2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_over_one_block_returns_it() {
        let cfg = TrainConfig { d_c: 1, ..TrainConfig::tiny() };
        let params = setup(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ctx = Ctx::eval(&cfg, &params);
        let v = ctx.constant(random_states(&mut rng, 1, cfg.d_m));
        let out = attention_pool(&mut ctx, &[v]);
        assert_eq!(ctx.value(out.alpha).data(), &[1.0]);
        assert!(ctx.value(out.r_c).max_abs_diff(ctx.value(v)) < 1e-15);
    }

    #[test]
    fn identical_blocks_pool_to_that_block() {
        let cfg = TrainConfig::default();
        let params = setup(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = random_states(&mut rng, 1, cfg.d_m);
        let mut ctx = Ctx::eval(&cfg, &params);
        let blocks: Vec<Var> = (0..cfg.d_c).map(|_| ctx.constant(block.clone())).collect();
        let out = attention_pool(&mut ctx, &blocks);
        assert!(ctx.value(out.r_c).max_abs_diff(&block) < 1e-14);
    }

    #[test]
    fn engineered_pool_scores() {
        // v₁ = 0 scores 0; v₂ = a·e₀ with w_j[0] = ln3 / tanh(a) scores ln 3.
        let cfg = TrainConfig { d_c: 2, ..TrainConfig::tiny() };
        let d = cfg.d_m;
        let mut params = setup(&cfg, 6);
        params.insert("pool.wm", Tensor::identity(d));
        params.insert("pool.bm", Tensor::zeros(1, d));
        let a = 0.8f64;
        let mut wj = Tensor::zeros(d, 1);
        wj.set(0, 0, 3f64.ln() / a.tanh());
        params.insert("pool.wj", wj);
        let mut v2 = Tensor::zeros(1, d);
        v2.set(0, 0, a);
        let mut ctx = Ctx::eval(&cfg, &params);
        let b1 = ctx.constant(Tensor::zeros(1, d));
        let b2 = ctx.constant(v2.clone());
        let out = attention_pool(&mut ctx, &[b1, b2]);
        let alpha = ctx.value(out.alpha).data().to_vec();
        assert!((alpha[0] - 0.25).abs() < 1e-15 && (alpha[1] - 0.75).abs() < 1e-15);
        let expected = v2.map(|x| 0.75 * x);
        assert!(ctx.value(out.r_c).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_sentiment() {
        let cfg = TrainConfig::default();
        let params = setup(&cfg, 7);
        let mut ctx = Ctx::eval(&cfg, &params);
        let x = ctx.constant(Tensor::zeros(3, cfg.d_m));
        let out = sentiment_channels(&mut ctx, x);
        assert!(ctx.value(out.u_s).data().iter().all(|&v| v == 0.0));
        assert_eq!(out.channels.len(), 4);
    }

    #[test]
    fn single_token_sentiment_ignores_key_scaling() {
        // With one token the softmax row is [1] whatever the scores are, so
        // the channel output does not depend on d_k's scaling factor.
        let cfg = TrainConfig { l_ch: 1, ..TrainConfig::tiny() };
        let mut params = setup(&cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_states(&mut rng, 1, cfg.d_m);
        let run = |params: &ModelParams| {
            let mut ctx = Ctx::eval(&cfg, params);
            let xv = ctx.constant(x.clone());
            let out = sentiment_channels(&mut ctx, xv);
            ctx.value(out.u_s).clone()
        };
        let before = run(&params);
        for c in 0..cfg.d_s {
            let k = params.tensor(&format!("sent.{c}.0.wk")).map(|v| v * 37.0);
            params.insert(format!("sent.{c}.0.wk"), k);
        }
        assert_eq!(before, run(&params));
    }

    #[test]
    fn category_and_sentiment_channels_share_machinery() {
        let cfg = TrainConfig::tiny();
        let mut params = setup(&cfg, 10);
        let names: Vec<String> = params.names().filter(|n| n.starts_with("cat.")).map(String::from).collect();
        for n in names {
            let t = params.tensor(&n).clone();
            params.insert(n.replacen("cat.", "sent.", 1), t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ctx = Ctx::eval(&cfg, &params);
        let x = ctx.constant(random_states(&mut rng, 4, cfg.d_m));
        let cat = category_channels(&mut ctx, x);
        let sent = sentiment_channels(&mut ctx, x);
        for (a, b) in cat.iter().zip(&sent.channels) {
            assert_eq!(ctx.value(a.tokens), ctx.value(b.tokens));
            assert_eq!(ctx.value(a.block), ctx.value(b.block));
        }
    }
}
