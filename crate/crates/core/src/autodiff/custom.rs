//! Closed-form local derivatives for the non-differentiable nodes.

use serde::{Deserialize, Serialize};

/// Where the surrogate window is centered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateCentering {
    /// Evaluate the window at `u - v_th`.
    #[default]
    Threshold,
    /// Evaluate the window at `u` itself, ignoring the threshold.
    Literal,
}

/// Triangular surrogate derivative of the spike function.
///
/// Zero outside `|x| <= 1/lambda`, otherwise `lambda - lambda^2 |x|`.
pub fn qgradgate(x: f64, lambda: f64) -> f64 {
    let ax = x.abs();
    if ax > 1.0 / lambda {
        0.0
    } else {
        -lambda * lambda * ax + lambda
    }
}

/// Spike forward: hard threshold, ties fire.
pub fn heaviside(u: f64, v_th: f64) -> f64 {
    if u >= v_th {
        1.0
    } else {
        0.0
    }
}

/// Gate forward: active when `a >= a_tilde`.
pub fn gate(a: f64, a_tilde: f64) -> f64 {
    if a >= a_tilde {
        1.0
    } else {
        0.0
    }
}

/// Derivative of `logistic((a - a_tilde) / temperature)` with respect to `a`.
/// The derivative with respect to `a_tilde` is its negation.
pub fn gate_surrogate(a: f64, a_tilde: f64, temperature: f64) -> f64 {
    let s = logistic((a - a_tilde) / temperature);
    s * (1.0 - s) / temperature
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of a spike node's registered backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeRule {
    pub v_th: f64,
    pub lambda: f64,
    pub centering: SurrogateCentering,
}

impl SpikeRule {
    pub fn local_grad(&self, u: f64) -> f64 {
        let x = match self.centering {
            SurrogateCentering::Threshold => u - self.v_th,
            SurrogateCentering::Literal => u,
        };
        qgradgate(x, self.lambda)
    }
}
