//! Leaky integrate-and-fire layers driven by externally supplied weights.
//!
//! Each spiking layer integrates `u[t] = tau * u[t-1] + I[t]`, fires where
//! `u[t] >= v_th`, and then applies the configured reset. The last layer of an
//! [`Architecture`] is a readout: it integrates the same way but never fires,
//! and its logits are the window-averaged membrane potential.

use serde::{Deserialize, Serialize};

use crate::autodiff::{SpikeRule, SurrogateCentering, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// No reset: the membrane keeps integrating after a spike.
    None,
    /// Potential set to zero where a spike fired.
    #[default]
    Zero,
    /// Threshold subtracted where a spike fired.
    Subtract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    pub tau: f64,
    pub v_th: f64,
    pub t_window: usize,
    pub lambda: f64,
    pub reset_mode: ResetMode,
    pub surrogate_centering: SurrogateCentering,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            v_th: 0.5,
            t_window: 4,
            lambda: 2.0,
            reset_mode: ResetMode::Zero,
            surrogate_centering: SurrogateCentering::Threshold,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("model.lif.tau", "must lie in [0, 1)"));
        }
        if self.t_window == 0 {
            return Err(Error::config("model.lif.t_window", "must be at least 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("model.lif.lambda", "must be positive"));
        }
        if !self.v_th.is_finite() {
            return Err(Error::config("model.lif.v_th", "must be finite"));
        }
        Ok(())
    }

    pub fn spike_rule(&self) -> SpikeRule {
        SpikeRule {
            v_th: self.v_th,
            lambda: self.lambda,
            centering: self.surrogate_centering,
        }
    }
}

/// Membrane potential of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub u: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            u: Tensor::zeros(shape),
        }
    }
}

/// One integration step on plain tensors. Returns the post-reset state and
/// the emitted spikes.
pub fn lif_step(state: &LifState, current: &Tensor, cfg: &LifConfig) -> Result<(LifState, Tensor)> {
    if state.u.shape() != current.shape() {
        return Err(Error::ShapeMismatch {
            op: "lif_step",
            lhs: state.u.shape().to_vec(),
            rhs: current.shape().to_vec(),
        });
    }
    let mut u = state.u.clone();
    let mut spikes = Tensor::zeros(current.shape());
    for ((u, &i), s) in u.data_mut().iter_mut().zip(current.data()).zip(spikes.data_mut()) {
        *u = cfg.tau * *u + i;
        if *u >= cfg.v_th {
            *s = 1.0;
            match cfg.reset_mode {
                ResetMode::None => {}
                ResetMode::Zero => *u = 0.0,
                ResetMode::Subtract => *u -= cfg.v_th,
            }
        }
    }
    Ok((LifState { u }, spikes))
}

/// Binary activity over a time window: `steps[t]` has the per-step shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    steps: Vec<Tensor>,
}

impl SpikeTrain {
    pub fn new(steps: Vec<Tensor>) -> Result<Self> {
        if let Some(first) = steps.first() {
            for s in &steps {
                if s.shape() != first.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "spike_train",
                        lhs: first.shape().to_vec(),
                        rhs: s.shape().to_vec(),
                    });
                }
                if s.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::config("spikes", "spike trains must be binary"));
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Tensor] {
        &self.steps
    }

    pub fn t_window(&self) -> usize {
        self.steps.len()
    }

    pub fn is_binary(&self) -> bool {
        self.steps
            .iter()
            .all(|s| s.data().iter().all(|&v| v == 0.0 || v == 1.0))
    }

    pub fn count(&self) -> f64 {
        self.steps.iter().map(Tensor::sum).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_height: usize,
        in_width: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub region: usize,
}

impl LayerSpec {
    pub fn dense(name: &str, inputs: usize, outputs: usize, region: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Dense { inputs, outputs },
            region,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_hw: (usize, usize),
        region: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_height: in_hw.0,
                in_width: in_hw.1,
            },
            region,
        }
    }

    /// Dense weights are `[inputs, outputs]`; conv kernels are
    /// `[out_channels, in_channels, kernel, kernel]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel, kernel],
        }
    }

    pub fn synapse_count(&self) -> usize {
        numel(&self.weight_shape())
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }

    /// Per-sample input shape.
    pub fn in_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { inputs, .. } => vec![inputs],
            LayerKind::Conv2d {
                in_channels,
                in_height,
                in_width,
                ..
            } => vec![in_channels, in_height, in_width],
        }
    }

    /// Per-sample output shape.
    pub fn out_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { outputs, .. } => vec![outputs],
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
                ..
            } => {
                let oh = (in_height + 2 * padding).saturating_sub(kernel) / stride.max(1) + 1;
                let ow = (in_width + 2 * padding).saturating_sub(kernel) / stride.max(1) + 1;
                vec![out_channels, oh, ow]
            }
        }
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let field = format!("model.layers[{idx}]");
        match self.kind {
            LayerKind::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err(Error::config(field, "dense layers need nonzero sizes"))
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::config(field, "conv sizes and stride must be nonzero"));
                }
                if in_height + 2 * padding < kernel || in_width + 2 * padding < kernel {
                    return Err(Error::config(field, "kernel larger than padded input"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Input current `[B, out...]` for a batch of presynaptic activity.
    fn current(&self, tape: &mut Tape, input: Var, weight: Var) -> Result<Var> {
        let batch = tape.shape(input)[0];
        match self.kind {
            LayerKind::Dense { inputs, .. } => {
                let flat = if tape.shape(input).len() == 2 {
                    input
                } else {
                    tape.reshape(input, &[batch, inputs])?
                };
                tape.matmul(flat, weight)
            }
            LayerKind::Conv2d {
                stride,
                padding,
                in_channels,
                in_height,
                in_width,
                ..
            } => {
                let x = if tape.shape(input).len() == 4 {
                    input
                } else {
                    tape.reshape(input, &[batch, in_channels, in_height, in_width])?
                };
                tape.conv2d(x, weight, stride, padding)
            }
        }
    }
}

/// Layer sequence plus the per-sample input shape of the first layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::desk(2)
    }
}

impl Architecture {
    /// Two conv layers (region 0) and two dense layers (region 1) over an
    /// 8x8 single-channel input.
    pub fn desk(classes: usize) -> Self {
        Self {
            input_shape: vec![1, 8, 8],
            layers: vec![
                LayerSpec::conv2d("conv1", 1, 4, 3, 1, 1, (8, 8), 0),
                LayerSpec::conv2d("conv2", 4, 4, 3, 2, 1, (8, 8), 0),
                LayerSpec::dense("fc1", 64, 32, 1),
                LayerSpec::dense("fc2", 32, classes, 1),
            ],
        }
    }

    pub fn input_len(&self) -> usize {
        numel(&self.input_shape)
    }

    pub fn classes(&self) -> usize {
        self.layers
            .last()
            .map(|l| numel(&l.out_shape()))
            .unwrap_or(0)
    }

    pub fn regions(&self) -> usize {
        self.layers.last().map(|l| l.region + 1).unwrap_or(0)
    }

    pub fn synapse_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::synapse_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("model.layers", "at least one layer is required"));
        }
        let mut prev_shape = self.input_shape.clone();
        let mut prev_region = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if numel(&layer.in_shape()) != numel(&prev_shape) {
                return Err(Error::config(
                    format!("model.layers[{i}]"),
                    format!(
                        "expects input {:?} but the previous stage produces {:?}",
                        layer.in_shape(),
                        prev_shape
                    ),
                ));
            }
            let expected_ok = if i == 0 {
                layer.region == 0
            } else {
                layer.region == prev_region || layer.region == prev_region + 1
            };
            if !expected_ok {
                return Err(Error::config(
                    format!("model.layers[{i}].region"),
                    "regions must start at 0 and be contiguous and nondecreasing",
                ));
            }
            prev_region = layer.region;
            prev_shape = layer.out_shape();
        }
        Ok(())
    }
}

/// Network input: real-valued currents injected identically at every step,
/// or an explicit spike train with one `[B, ...]` node per step.
#[derive(Clone, Debug)]
pub enum NetInput {
    Currents(Var),
    Spikes(Vec<Var>),
}

/// Integrates a sequence of currents through one LIF population.
fn integrate(tape: &mut Tape, currents: &[Var], t_window: usize, cfg: &LifConfig) -> Result<Vec<Var>> {
    let rule = cfg.spike_rule();
    let mut out = Vec::with_capacity(t_window);
    let mut u_prev: Option<Var> = None;
    for t in 0..t_window {
        let i_t = currents[t.min(currents.len() - 1)];
        let u = match u_prev {
            None => i_t,
            Some(p) => {
                let leaked = tape.scale(p, cfg.tau);
                tape.add(leaked, i_t)?
            }
        };
        let s = tape.spike(u, rule);
        // Resets see the spike as a constant; gradient flows only through
        // the spike node itself.
        u_prev = Some(match cfg.reset_mode {
            ResetMode::None => u,
            ResetMode::Zero => {
                let keep = tape.constant(tape.value(s).map(|x| 1.0 - x));
                tape.mul(u, keep)?
            }
            ResetMode::Subtract => {
                let drop = tape.constant(tape.value(s).map(|x| x * cfg.v_th));
                tape.sub(u, drop)?
            }
        });
        out.push(s);
    }
    Ok(out)
}

/// Spiking layer over the whole window. `inputs` holds one node per step, or a
/// single node reused at every step.
pub fn layer_forward(
    tape: &mut Tape,
    inputs: &[Var],
    weight: Var,
    spec: &LayerSpec,
    cfg: &LifConfig,
) -> Result<Vec<Var>> {
    check_weight(tape, weight, spec)?;
    let currents = inputs
        .iter()
        .map(|&x| spec.current(tape, x, weight))
        .collect::<Result<Vec<_>>>()?;
    integrate(tape, &currents, cfg.t_window, cfg)
}

/// Non-spiking readout: window-mean of the leaky membrane potential, `[B, C]`.
pub fn readout_forward(
    tape: &mut Tape,
    inputs: &[Var],
    weight: Var,
    spec: &LayerSpec,
    cfg: &LifConfig,
) -> Result<Var> {
    check_weight(tape, weight, spec)?;
    let currents = inputs
        .iter()
        .map(|&x| spec.current(tape, x, weight))
        .collect::<Result<Vec<_>>>()?;
    let mut u_prev: Option<Var> = None;
    let mut total: Option<Var> = None;
    for t in 0..cfg.t_window {
        let i_t = currents[t.min(currents.len() - 1)];
        let u = match u_prev {
            None => i_t,
            Some(p) => {
                let leaked = tape.scale(p, cfg.tau);
                tape.add(leaked, i_t)?
            }
        };
        total = Some(match total {
            None => u,
            Some(acc) => tape.add(acc, u)?,
        });
        u_prev = Some(u);
    }
    let total = total.expect("t_window >= 1");
    let batch = tape.shape(total)[0];
    let flat = tape.reshape(total, &[batch, numel(&spec.out_shape())])?;
    Ok(tape.scale(flat, 1.0 / cfg.t_window as f64))
}

fn check_weight(tape: &Tape, weight: Var, spec: &LayerSpec) -> Result<()> {
    let expected = spec.weight_shape();
    if tape.shape(weight) != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            lhs: expected,
            rhs: tape.shape(weight).to_vec(),
        });
    }
    Ok(())
}

/// Full forward pass. Returns class logits `[B, C]` and the spike nodes of
/// every hidden layer (for inspection and binarity checks).
pub fn network_forward(
    tape: &mut Tape,
    input: NetInput,
    weights: &[Var],
    arch: &Architecture,
    cfg: &LifConfig,
) -> Result<(Var, Vec<Vec<Var>>)> {
    if weights.len() < arch.layers.len() {
        return Err(Error::MissingPathway(weights.len()));
    }
    let mut current: Vec<Var> = match input {
        NetInput::Currents(x) => {
            let batch = tape.shape(x)[0];
            let mut shape = vec![batch];
            shape.extend(&arch.input_shape);
            vec![tape.reshape(x, &shape)?]
        }
        NetInput::Spikes(steps) => steps,
    };
    let last = arch.layers.len() - 1;
    let mut hidden = Vec::with_capacity(last);
    for (l, spec) in arch.layers.iter().enumerate() {
        if l == last {
            let logits = readout_forward(tape, &current, weights[l], spec, cfg)?;
            return Ok((logits, hidden));
        }
        current = layer_forward(tape, &current, weights[l], spec, cfg)?;
        hidden.push(current.clone());
    }
    unreachable!("architecture has at least one layer")
}

/// Evaluates a network on plain tensors. `inputs` is `[B, features]`.
pub fn predict_logits(
    inputs: &Tensor,
    weights: &[Tensor],
    arch: &Architecture,
    cfg: &LifConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let w: Vec<Var> = weights.iter().map(|w| tape.constant(w.clone())).collect();
    let (logits, _) = network_forward(&mut tape, NetInput::Currents(x), &w, arch, cfg)?;
    Ok(tape.value(logits).clone())
}

/// Plain-tensor layer forward over a spike train.
pub fn layer_forward_train(
    spikes_in: &SpikeTrain,
    weight: &Tensor,
    spec: &LayerSpec,
    cfg: &LifConfig,
) -> Result<SpikeTrain> {
    let mut tape = Tape::new();
    let inputs: Vec<Var> = spikes_in
        .steps()
        .iter()
        .map(|s| tape.constant(s.clone()))
        .collect();
    let w = tape.constant(weight.clone());
    let out = layer_forward(&mut tape, &inputs, w, spec, cfg)?;
    SpikeTrain::new(out.iter().map(|&s| tape.value(s).clone()).collect())
}
