//! Training configuration.
//!
//! The JSON form is a flat object whose keys are the field names below;
//! missing keys take their defaults and unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Model width.
    pub d_m: usize,
    /// Attention width inside each disentanglement channel.
    pub d_k: usize,
    /// Hidden width of every feed-forward block.
    pub d_h: usize,
    /// Category channels.
    pub d_c: usize,
    /// Sentiment channels.
    pub d_s: usize,
    /// Stacked attention layers per channel.
    pub l_ch: usize,
    /// Graph convolution layers.
    pub l_g: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub max_len: usize,

    /// Shuffled negatives per review.
    pub negatives: usize,
    /// Margin of the coherence ranking loss.
    pub tau: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,

    pub dropout: f64,
    pub weight_decay: f64,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub epochs: usize,
    pub seed: u64,
    pub min_count: usize,
    /// Category detection threshold (inclusive).
    pub threshold: f64,

    /// Replace r_c by the mean of the sentence token states.
    pub ablate_cate_dis: bool,
    /// Replace u_s by the mean of the sentence token states.
    pub ablate_senti_dis: bool,
    /// Replace the syntax vector by zeros.
    pub ablate_syntax: bool,

    /// Progress line every this many epochs (0 = silent).
    pub log_every: usize,
    pub categories_file: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_m: 16,
            d_k: 16,
            d_h: 32,
            d_c: 4,
            d_s: 4,
            l_ch: 2,
            l_g: 3,
            enc_layers: 1,
            enc_heads: 2,
            max_len: 512,
            negatives: 5,
            tau: 0.1,
            delta1: 0.1,
            delta2: 0.5,
            delta3: 0.5,
            dropout: 0.1,
            weight_decay: 1e-3,
            lr_encoder: 8e-6,
            lr_other: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 300,
            seed: 42,
            min_count: 1,
            threshold: 0.5,
            ablate_cate_dis: false,
            ablate_senti_dis: false,
            ablate_syntax: false,
            log_every: 0,
            categories_file: None,
        }
    }
}

/// Closed interval of an allowed setting.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    pub key: &'static str,
    pub min: f64,
    pub max: f64,
}

/// Ranges a training run is validated against: the hyperparameter search
/// space, widened to admit the ablation settings (a loss weight of 0),
/// disabled dropout, and the single-negative gradient-check setup.
pub const SEARCH_BOUNDS: [Bound; 11] = [
    Bound { key: "lr_encoder", min: 1e-6, max: 1e-5 },
    Bound { key: "lr_other", min: 1e-5, max: 1e-4 },
    Bound { key: "weight_decay", min: 1e-4, max: 1e-2 },
    Bound { key: "dropout", min: 0.0, max: 0.3 },
    Bound { key: "negatives", min: 1.0, max: 10.0 },
    Bound { key: "tau", min: 0.0, max: 0.2 },
    Bound { key: "delta1", min: 0.0, max: 1.0 },
    Bound { key: "delta2", min: 0.0, max: 1.0 },
    Bound { key: "delta3", min: 0.0, max: 1.0 },
    Bound { key: "l_g", min: 1.0, max: 3.0 },
    Bound { key: "d_c", min: 1.0, max: 7.0 },
];

impl TrainConfig {
    /// The configuration used by gradient checks: every width tiny, one
    /// negative, dropout off.
    pub fn tiny() -> Self {
        TrainConfig {
            d_m: 8,
            d_k: 8,
            d_h: 16,
            d_c: 2,
            d_s: 2,
            l_ch: 1,
            l_g: 2,
            enc_layers: 1,
            enc_heads: 2,
            negatives: 1,
            dropout: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    fn numeric(&self, key: &str) -> f64 {
        match key {
            "lr_encoder" => self.lr_encoder,
            "lr_other" => self.lr_other,
            "weight_decay" => self.weight_decay,
            "dropout" => self.dropout,
            "negatives" => self.negatives as f64,
            "tau" => self.tau,
            "delta1" => self.delta1,
            "delta2" => self.delta2,
            "delta3" => self.delta3,
            "l_g" => self.l_g as f64,
            "d_c" => self.d_c as f64,
            "d_s" => self.d_s as f64,
            _ => unreachable!("no numeric key {key}"),
        }
    }

    /// Structural validity: anything violating this cannot be run.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (k, v) in [
            ("d_m", self.d_m),
            ("d_k", self.d_k),
            ("d_h", self.d_h),
            ("d_c", self.d_c),
            ("d_s", self.d_s),
            ("l_ch", self.l_ch),
            ("l_g", self.l_g),
            ("enc_heads", self.enc_heads),
            ("max_len", self.max_len),
            ("negatives", self.negatives),
            ("min_count", self.min_count),
        ] {
            if v == 0 {
                return fail(format!("{k} must be positive"));
            }
        }
        if !self.d_m.is_multiple_of(self.enc_heads) {
            return fail(format!("d_m = {} is not divisible by enc_heads = {}", self.d_m, self.enc_heads));
        }
        for (k, v) in [("delta1", self.delta1), ("delta2", self.delta2), ("delta3", self.delta3)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{k} = {v} outside [0, 1]"));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return fail(format!("tau = {} must be finite and non-negative", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold = {} outside (0, 1)", self.threshold));
        }
        for (k, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_other", self.lr_other),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{k} = {v} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return fail("AdamW betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the [`SEARCH_BOUNDS`] (the latter
    /// also applied to `d_s`).
    pub fn validate_bounds(&self) -> Result<()> {
        self.validate()?;
        let checks = SEARCH_BOUNDS
            .iter()
            .copied()
            .chain(std::iter::once(Bound { key: "d_s", min: 1.0, max: 7.0 }));
        for b in checks {
            let v = self.numeric(b.key);
            if !(b.min..=b.max).contains(&v) {
                return Err(Error::Config(format!(
                    "{} = {v} outside the allowed range [{}, {}]",
                    b.key, b.min, b.max
                )));
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override. The value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value = serde_json::from_str::<serde_json::Value>(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut obj = serde_json::to_value(&*self).expect("config serializes");
        let map = obj.as_object_mut().expect("config is an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(obj).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
