//! Training objective: cross-entropy, memory, pathway-orthogonality and
//! selection-anchoring terms.
//!
//! Each term has a plain evaluator (used for reporting and as a reference)
//! and a tape builder (used for training). Both compute the same quantity.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::pathway::SelectionSet;
use crate::regulator::GeneratedWeights;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Memory-loss weight.
    pub alpha: f64,
    /// Orthogonality weight.
    pub beta: f64,
    /// Pulls selection parameters toward 0.5.
    pub gamma: f64,
    /// Include the current task's own mask among the orthogonality partners.
    pub orth_include_self: bool,
    /// Orthogonality on binary masks; otherwise on masked weights.
    pub orth_on_masks: bool,
    /// Memory loss against every earlier snapshot instead of only the latest.
    pub memory_all_past: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1e-5,
            gamma: 1e-4,
            orth_include_self: false,
            orth_on_masks: true,
            memory_all_past: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("loss.alpha", self.alpha),
            ("loss.beta", self.beta),
            ("loss.gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Unweighted terms plus their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_class: f64,
    pub l_mem: f64,
    pub l_orth: f64,
    pub l_anchor: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_class, self.l_mem, self.l_orth, self.l_anchor, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Combines unweighted terms: `class + alpha*mem + beta*orth + gamma*anchor`.
pub fn total_loss(
    l_class: f64,
    l_mem: f64,
    l_orth: f64,
    l_anchor: f64,
    cfg: &LossConfig,
) -> LossBreakdown {
    LossBreakdown {
        l_class,
        l_mem,
        l_orth,
        l_anchor,
        total: l_class + cfg.alpha * l_mem + cfg.beta * l_orth + cfg.gamma * l_anchor,
    }
}

/// Mean softmax cross-entropy of `[batch, classes]` logits.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.softmax_cross_entropy(l, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// `||current - target||_2` over all layers; `0` without a target.
pub fn memory_loss(current: &GeneratedWeights, target: Option<&GeneratedWeights>) -> Result<f64> {
    match target {
        Some(t) => current.distance(t),
        None => Ok(0.0),
    }
}

fn check_layers(op: &'static str, current: &[Tensor], past: &[Tensor]) -> Result<()> {
    if current.len() != past.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![current.len()],
            rhs: vec![past.len()],
        });
    }
    for (c, p) in current.iter().zip(past) {
        if c.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: c.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// `sum_k sum_layers sum(current * past_k)`.
pub fn orthogonal_loss(current: &[Tensor], past: &[Vec<Tensor>]) -> Result<f64> {
    let mut total = 0.0;
    for partner in past {
        check_layers("orthogonal_loss", current, partner)?;
        for (c, p) in current.iter().zip(partner) {
            total += c.data().iter().zip(p.data()).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    Ok(total)
}

/// `sum (a - 0.5)^2 + (a_tilde - 0.5)^2` over one task's selection.
pub fn anchor_loss(sel: &SelectionSet) -> f64 {
    sel.layers
        .iter()
        .flat_map(|l| l.a.data().iter().chain(l.a_tilde.data()))
        .map(|v| (v - 0.5) * (v - 0.5))
        .sum()
}

/// Tape version of [`memory_loss`]; every target is a constant.
pub fn memory_loss_on_tape(
    tape: &mut Tape,
    current: &[Var],
    targets: &[&GeneratedWeights],
) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for target in targets {
        if target.layers.len() != current.len() {
            return Err(Error::ShapeMismatch {
                op: "memory_loss",
                lhs: vec![current.len()],
                rhs: vec![target.layers.len()],
            });
        }
        let mut cols = Vec::with_capacity(current.len());
        for (&w, t) in current.iter().zip(&target.layers) {
            let t = tape.constant(t.clone());
            let d = tape.sub(w, t)?;
            let n = tape.value(d).len();
            cols.push(tape.reshape(d, &[n, 1])?);
        }
        let flat = tape.concat(&cols)?;
        let norm = tape.l2_norm(flat);
        acc = Some(match acc {
            Some(a) => tape.add(a, norm)?,
            None => norm,
        });
    }
    Ok(acc)
}

/// Tape version of [`orthogonal_loss`]; partners are constants.
/// With `include_self`, the current tensors also pair with themselves and
/// the self term is differentiated through both factors.
pub fn orthogonal_loss_on_tape(
    tape: &mut Tape,
    current: &[Var],
    past: &[Vec<Tensor>],
    include_self: bool,
) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    if include_self {
        for &c in current {
            let prod = tape.mul(c, c)?;
            let s = tape.sum(prod);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
    }
    for partner in past {
        if partner.len() != current.len() {
            return Err(Error::ShapeMismatch {
                op: "orthogonal_loss",
                lhs: vec![current.len()],
                rhs: vec![partner.len()],
            });
        }
        for (&c, p) in current.iter().zip(partner) {
            let p = tape.constant(p.clone());
            let prod = tape.mul(c, p)?;
            let s = tape.sum(prod);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
    }
    Ok(acc)
}

/// Tape version of [`anchor_loss`] over `(a, a_tilde)` node pairs.
pub fn anchor_loss_on_tape(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &(a, at) in pairs {
        for v in [a, at] {
            let d = tape.offset(v, -0.5);
            let sq = tape.mul(d, d)?;
            let s = tape.sum(sq);
            acc = Some(match acc {
                Some(x) => tape.add(x, s)?,
                None => s,
            });
        }
    }
    Ok(acc)
}
