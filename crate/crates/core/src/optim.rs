//! Adam with per-tensor moment buffers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regulator::TaskId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Multiplier on `lr` for pathway-selection parameters.
    pub selection_lr_scale: f64,
    /// Multiplier on `lr` for the regulator's LSTM cells and embeddings. Every
    /// generated weight depends on the LSTM output, so full-size steps there
    /// perturb whole layers at once.
    pub recurrent_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            selection_lr_scale: 0.5,
            recurrent_lr_scale: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 50,
        }
    }
}

impl OptimizerConfig {
    /// Multiplier on `lr` for the parameter group `key` belongs to.
    pub fn scale_for(&self, key: ParamKey) -> f64 {
        match key {
            ParamKey::SelectionA(..) | ParamKey::SelectionATilde(..) => self.selection_lr_scale,
            ParamKey::Recurrent(_) | ParamKey::LayerEmbedding(_) | ParamKey::TaskEmbedding(_) => {
                self.recurrent_lr_scale
            }
            ParamKey::Head(_) | ParamKey::DenseWeight(_) => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optimizer.lr", "must be finite and non-negative"));
        }
        for (name, k) in [
            ("optimizer.selection_lr_scale", self.selection_lr_scale),
            ("optimizer.recurrent_lr_scale", self.recurrent_lr_scale),
        ] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("optimizer.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optimizer.eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optimizer.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Identifies a trainable tensor across steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    /// LSTM tensor by storage index.
    Recurrent(usize),
    /// Head tensor by storage index.
    Head(usize),
    LayerEmbedding(usize),
    TaskEmbedding(TaskId),
    SelectionA(TaskId, usize),
    SelectionATilde(TaskId, usize),
    DenseWeight(usize),
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: OptimizerConfig,
    state: BTreeMap<ParamKey, Moments>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            state: BTreeMap::new(),
        }
    }

    /// Applies one bias-corrected step to `param`.
    pub fn step(&mut self, key: ParamKey, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        let lr = self.cfg.lr * self.cfg.scale_for(key);
        let OptimizerConfig {
            beta1,
            beta2,
            eps,
            ..
        } = self.cfg;
        let s = self.state.entry(key).or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            t: 0,
        });
        s.t += 1;
        let c1 = 1.0 - beta1.powi(s.t);
        let c2 = 1.0 - beta2.powi(s.t);
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut s.m).zip(&mut s.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }

    pub fn tracked(&self) -> usize {
        self.state.len()
    }
}
