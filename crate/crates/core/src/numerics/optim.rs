//! AdamW with decoupled weight decay.
//!
//! ```text
//! θ ← θ · (1 − lr · wd)
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! ```
//!
//! Only parameters present in the gradient map are touched. Parameters that
//! the loss never reached are left exactly as they were, including their
//! moments, so an ablated branch stays bitwise frozen.

use std::collections::BTreeMap;

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
    /// Number of updates this parameter has received; drives bias correction.
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Calls to [`adamw_step`] so far.
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        OptimizerState {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One AdamW update. `lr_for` maps a parameter name to its learning rate.
///
/// Every gradient is checked for finiteness before anything is modified, so a
/// rejected step leaves `params` and `state` untouched.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr_for: impl Fn(&str) -> f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.try_get(name)?;
        assert_eq!(
            p.shape(),
            g.shape(),
            "gradient shape {:?} does not match parameter `{name}` {:?}",
            g.shape(),
            p.shape()
        );
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let (b1, b2, eps, wd) = (state.beta1, state.beta2, state.eps, state.weight_decay);
    for (name, g) in grads {
        let lr = lr_for(name);
        let p = params.get_mut(name).expect("checked above");
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            first: Tensor::zeros(p.rows(), p.cols()),
            second: Tensor::zeros(p.rows(), p.cols()),
            steps: 0,
        });
        mom.steps += 1;
        let c1 = 1.0 - b1.powi(mom.steps as i32);
        let c2 = 1.0 - b2.powi(mom.steps as i32);
        let decay = 1.0 - lr * wd;
        let m = mom.first.data_mut();
        let v = mom.second.data_mut();
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            *w *= decay;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
