use std::collections::BTreeMap;

use rand::RngCore;

use crate::config::TrainConfig;
use crate::numerics::{Gradients, Graph, ModelParams, Tensor, Var};

/// One forward pass: the graph under construction, the parameters it reads,
/// and (when training) the dropout source.
///
/// Parameters are bound to graph leaves lazily, on first use, so the set of
/// bound names is exactly the set of parameters the pass touched.
pub struct Ctx<'a> {
    pub g: Graph,
    pub cfg: &'a TrainConfig,
    params: &'a ModelParams,
    bound: BTreeMap<String, Var>,
    dropout: Option<(f64, &'a mut dyn RngCore)>,
}

impl<'a> Ctx<'a> {
    /// Deterministic pass with dropout disabled.
    pub fn eval(cfg: &'a TrainConfig, params: &'a ModelParams) -> Self {
        Ctx {
            g: Graph::new(),
            cfg,
            params,
            bound: BTreeMap::new(),
            dropout: None,
        }
    }

    pub fn train(cfg: &'a TrainConfig, params: &'a ModelParams, rng: &'a mut dyn RngCore) -> Self {
        Ctx {
            g: Graph::new(),
            cfg,
            params,
            bound: BTreeMap::new(),
            dropout: Some((cfg.dropout, rng)),
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.g.param(self.params.tensor(name).clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        match &mut self.dropout {
            Some((p, rng)) if *p > 0.0 => self.g.dropout(x, *p, &mut **rng),
            _ => x,
        }
    }

    /// `x · W + b` with `W` stored as `in × out`.
    pub fn linear(&mut self, x: Var, weight: &str, bias: Option<&str>) -> Var {
        let w = self.param(weight);
        let y = self.g.matmul(x, w);
        match bias {
            Some(b) => {
                let b = self.param(b);
                self.g.add_row(y, b)
            }
            None => y,
        }
    }

    /// `ReLU(x W₁ + b₁) W₂ + b₂` using parameters `{prefix}.fc1.{w,b}` and
    /// `{prefix}.fc2.{w,b}`.
    pub fn feed_forward(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.fc1.w"), Some(&format!("{prefix}.fc1.b")));
        let h = self.g.relu(h);
        self.linear(h, &format!("{prefix}.fc2.w"), Some(&format!("{prefix}.fc2.b")))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.g.value(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients of the bound parameters that the loss actually reached.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}
