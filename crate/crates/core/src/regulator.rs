//! Recurrent weight generator.
//!
//! One LSTM cell per region walks the SNN layers in order. At layer `l` the
//! cell reads `[x_task ; x_layer ; o_{l-1}]`, updates `(c_l, o_l)` and a
//! per-layer affine head with a fixed output scale maps `o_l` to the
//! flattened weight tensor of that layer. The state leaving the last layer of a region seeds the first layer
//! of the next region.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::spiking::Architecture;
use crate::tensor::{numel, Tensor};

pub type TaskId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegulatorConfig {
    pub task_dim: usize,
    pub layer_dim: usize,
    pub hidden: usize,
    /// Carry `(c, o)` across region boundaries; otherwise each region starts
    /// from a zero state.
    pub handoff: bool,
    /// Initial generated weights have std `weight_gain / sqrt(fan_in)`.
    pub weight_gain: f64,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        Self {
            task_dim: 32,
            layer_dim: 32,
            hidden: 96,
            handoff: true,
            weight_gain: 1.0,
        }
    }
}

impl RegulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_dim == 0 || self.layer_dim == 0 || self.hidden == 0 {
            return Err(Error::config("model.regulator", "dimensions must be nonzero"));
        }
        if !(self.weight_gain > 0.0) {
            return Err(Error::config("model.regulator.weight_gain", "must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.task_dim + self.layer_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEmbedding {
    /// Column vector `[task_dim, 1]`.
    pub vector: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEmbedding {
    /// Column vector `[layer_dim, 1]`.
    pub vector: Tensor,
}

/// LSTM tensors within one region, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateTensor {
    ForgetW,
    ForgetB,
    InputW,
    InputB,
    OutputW,
    OutputB,
    CellW,
    CellB,
}

const PER_REGION: usize = 8;

/// All generator weights: per-region LSTM gates followed by per-layer heads.
#[derive(Clone, Debug, PartialEq)]
pub struct RegulatorParams {
    tensors: Vec<Tensor>,
    regions: usize,
    layer_shapes: Vec<Vec<usize>>,
    layer_regions: Vec<usize>,
    head_scales: Vec<f64>,
}

impl RegulatorParams {
    pub fn zeros(cfg: &RegulatorConfig, arch: &Architecture) -> Self {
        let regions = arch.regions();
        let h = cfg.hidden;
        let z = cfg.input_dim() + h;
        let mut tensors = Vec::new();
        for _ in 0..regions {
            for _ in 0..4 {
                tensors.push(Tensor::zeros(&[h, z]));
                tensors.push(Tensor::zeros(&[h, 1]));
            }
        }
        for layer in &arch.layers {
            let n = layer.synapse_count();
            tensors.push(Tensor::zeros(&[n, h]));
            tensors.push(Tensor::zeros(&[n, 1]));
        }
        Self {
            tensors,
            regions,
            layer_shapes: arch.layers.iter().map(|l| l.weight_shape()).collect(),
            layer_regions: arch.layers.iter().map(|l| l.region).collect(),
            head_scales: vec![1.0; arch.layers.len()],
        }
    }

    /// LSTM weights uniform in `±1/sqrt(fan_in)`, zero biases; heads are
    /// filled in by [`Regulator::new`] once the hidden-state scale is known.
    fn init_lstm(cfg: &RegulatorConfig, arch: &Architecture, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg, arch);
        let bound = 1.0 / ((cfg.input_dim() + cfg.hidden) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for r in 0..p.regions {
            for g in [
                GateTensor::ForgetW,
                GateTensor::InputW,
                GateTensor::OutputW,
                GateTensor::CellW,
            ] {
                let idx = p.gate_index(r, g);
                p.tensors[idx].data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
            }
        }
        p
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn layer_shape(&self, layer: usize) -> &[usize] {
        &self.layer_shapes[layer]
    }

    pub fn layer_region(&self, layer: usize) -> usize {
        self.layer_regions[layer]
    }

    /// Fixed multiplier on a head's output, set once at initialization so
    /// that unit-scale head entries yield weights of std `gain / sqrt(fan_in)`.
    /// Keeps the per-step change of generated weights comparable to that of
    /// directly learned weights under a scale-free optimizer.
    pub fn head_scale(&self, layer: usize) -> f64 {
        self.head_scales[layer]
    }

    pub fn head_scales(&self) -> &[f64] {
        &self.head_scales
    }

    pub fn gate_index(&self, region: usize, gate: GateTensor) -> usize {
        region * PER_REGION + gate as usize
    }

    /// Indices of the `(weight, bias)` head of a layer.
    pub fn head_index(&self, layer: usize) -> (usize, usize) {
        let base = self.regions * PER_REGION + 2 * layer;
        (base, base + 1)
    }

    /// Whether the tensor at storage index `i` belongs to a head.
    pub fn is_head(&self, i: usize) -> bool {
        i >= self.regions * PER_REGION
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Reassign layers to regions while keeping every tensor. Used to study
    /// region boundaries; fails when the region count changes.
    pub fn with_layer_regions(mut self, regions: Vec<usize>) -> Result<Self> {
        if regions.len() != self.layer_regions.len()
            || regions.iter().any(|&r| r >= self.regions)
        {
            return Err(Error::config("model.layers.region", "region layout mismatch"));
        }
        self.layer_regions = regions;
        Ok(self)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub(crate) fn from_parts(
        tensors: Vec<Tensor>,
        head_scales: Vec<f64>,
        cfg: &RegulatorConfig,
        arch: &Architecture,
    ) -> Result<Self> {
        let mut p = Self::zeros(cfg, arch);
        if head_scales.len() != p.head_scales.len() || head_scales.iter().any(|s| !s.is_finite()) {
            return Err(Error::Checkpoint("head scales do not match the architecture".into()));
        }
        p.head_scales = head_scales;
        if tensors.len() != p.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} regulator tensors, found {}",
                p.tensors.len(),
                tensors.len()
            )));
        }
        for (slot, t) in p.tensors.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "regulator tensor shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// Real-valued per-layer weights generated for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWeights {
    pub task: TaskId,
    pub layers: Vec<Tensor>,
}

impl GeneratedWeights {
    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(Tensor::len).sum()
    }

    /// `||self - other||_2` over all layers.
    pub fn distance(&self, other: &GeneratedWeights) -> Result<f64> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch {
                op: "distance",
                lhs: vec![self.layers.len()],
                rhs: vec![other.layers.len()],
            });
        }
        let mut sq = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "distance",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            sq += a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(sq.sqrt())
    }
}

/// Runs the generator on a tape. `task` and `layers` are column vectors.
/// Returns one node per SNN layer, shaped like that layer's weights.
pub fn generate_on_tape(
    tape: &mut Tape,
    params: &RegulatorParams,
    param_vars: &[Var],
    task: Var,
    layers: &[Var],
    handoff: bool,
) -> Result<Vec<Var>> {
    run_generator(tape, params, param_vars, task, layers, handoff).map(|(w, _)| w)
}

/// Generated weights and the hidden state `o_l` behind each of them.
fn run_generator(
    tape: &mut Tape,
    params: &RegulatorParams,
    param_vars: &[Var],
    task: Var,
    layers: &[Var],
    handoff: bool,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if layers.len() != params.layers() {
        return Err(Error::ShapeMismatch {
            op: "generate_weights",
            lhs: vec![params.layers()],
            rhs: vec![layers.len()],
        });
    }
    let h = params.tensors[params.gate_index(0, GateTensor::ForgetB)].shape()[0];
    let mut c = tape.constant(Tensor::zeros(&[h, 1]));
    let mut o = tape.constant(Tensor::zeros(&[h, 1]));
    let mut region = 0;
    let mut out = Vec::with_capacity(layers.len());
    let mut hidden = Vec::with_capacity(layers.len());
    for (l, &x_l) in layers.iter().enumerate() {
        let r = params.layer_region(l);
        if r != region {
            region = r;
            if !handoff {
                c = tape.constant(Tensor::zeros(&[h, 1]));
                o = tape.constant(Tensor::zeros(&[h, 1]));
            }
        }
        let z = tape.concat(&[task, x_l, o])?;
        let gate = |tape: &mut Tape, w: GateTensor, b: GateTensor| -> Result<Var> {
            let wz = tape.matmul(param_vars[params.gate_index(r, w)], z)?;
            tape.add(wz, param_vars[params.gate_index(r, b)])
        };
        let f_pre = gate(tape, GateTensor::ForgetW, GateTensor::ForgetB)?;
        let i_pre = gate(tape, GateTensor::InputW, GateTensor::InputB)?;
        let o_pre = gate(tape, GateTensor::OutputW, GateTensor::OutputB)?;
        let g_pre = gate(tape, GateTensor::CellW, GateTensor::CellB)?;
        let f = tape.sigmoid(f_pre);
        let i = tape.sigmoid(i_pre);
        let og = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let keep = tape.mul(c, f)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        o = tape.mul(og, tc)?;
        hidden.push(o);
        let (hw, hb) = params.head_index(l);
        let flat = tape.matmul(param_vars[hw], o)?;
        let flat = tape.add(flat, param_vars[hb])?;
        let flat = tape.scale(flat, params.head_scale(l));
        out.push(tape.reshape(flat, params.layer_shape(l))?);
    }
    Ok((out, hidden))
}

/// Generator weights plus the learnable embeddings that condition it.
#[derive(Clone, Debug)]
pub struct Regulator {
    pub config: RegulatorConfig,
    pub params: RegulatorParams,
    pub layer_embeddings: Vec<LayerEmbedding>,
    pub task_embeddings: BTreeMap<TaskId, TaskEmbedding>,
}

fn randn_column(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::column((0..n).map(|_| StandardNormal.sample(rng)).collect())
}

impl Regulator {
    pub fn new(cfg: &RegulatorConfig, arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let params = RegulatorParams::init_lstm(cfg, arch, rng);
        let layer_embeddings = arch
            .layers
            .iter()
            .map(|_| LayerEmbedding {
                vector: randn_column(cfg.layer_dim, rng),
            })
            .collect();
        let mut reg = Self {
            config: cfg.clone(),
            params,
            layer_embeddings,
            task_embeddings: BTreeMap::new(),
        };
        reg.init_heads(arch, rng)?;
        Ok(reg)
    }

    /// Draws unit-normal head weights and picks each head's output scale so
    /// that, for a zero task vector, the generated weights have std close to
    /// `weight_gain / sqrt(fan_in)`.
    fn init_heads(&mut self, arch: &Architecture, rng: &mut impl Rng) -> Result<()> {
        let probe = TaskEmbedding {
            vector: Tensor::zeros(&[self.config.task_dim, 1]),
            frozen: false,
        };
        let hidden = self.hidden_states(&probe)?;
        for (l, layer) in arch.layers.iter().enumerate() {
            let target = self.config.weight_gain / (layer.fan_in() as f64).sqrt();
            let norm = hidden[l].l2_norm().max(1e-3);
            self.params.head_scales[l] = target / norm;
            let (hw, _) = self.params.head_index(l);
            for v in self.params.tensors[hw].data_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        Ok(())
    }

    fn hidden_states(&self, task: &TaskEmbedding) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape, false);
        let t = tape.constant(task.vector.clone());
        let ls: Vec<Var> = self
            .layer_embeddings
            .iter()
            .map(|e| tape.constant(e.vector.clone()))
            .collect();
        let (_, hidden) = run_generator(&mut tape, &self.params, &pv, t, &ls, self.config.handoff)?;
        Ok(hidden.iter().map(|&o| tape.value(o).clone()).collect())
    }

    pub fn layer_count(&self) -> usize {
        self.layer_embeddings.len()
    }

    /// Registers a task with a fresh `N(0, 1)` embedding.
    pub fn add_task(&mut self, task: TaskId, rng: &mut impl Rng) -> Result<()> {
        if self.task_embeddings.contains_key(&task) {
            return Err(Error::config(format!("task {task}"), "embedding already exists"));
        }
        let vector = randn_column(self.config.task_dim, rng);
        self.task_embeddings.insert(task, TaskEmbedding { vector, frozen: false });
        Ok(())
    }

    pub fn freeze_task(&mut self, task: TaskId) -> Result<()> {
        self.task_embeddings
            .get_mut(&task)
            .ok_or(Error::UnknownTask(task))?
            .frozen = true;
        Ok(())
    }

    pub fn task(&self, task: TaskId) -> Result<&TaskEmbedding> {
        self.task_embeddings.get(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn generate(&self, task: TaskId) -> Result<GeneratedWeights> {
        let emb = self.task(task)?;
        self.generate_with(task, emb)
    }

    /// Generates weights for an explicit embedding, labelled with `task`.
    pub fn generate_with(&self, task: TaskId, emb: &TaskEmbedding) -> Result<GeneratedWeights> {
        if emb.vector.shape() != [self.config.task_dim, 1] {
            return Err(Error::ShapeMismatch {
                op: "generate_weights",
                lhs: vec![self.config.task_dim, 1],
                rhs: emb.vector.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape, false);
        let t = tape.constant(emb.vector.clone());
        let ls: Vec<Var> = self
            .layer_embeddings
            .iter()
            .map(|e| tape.constant(e.vector.clone()))
            .collect();
        let weights = generate_on_tape(&mut tape, &self.params, &pv, t, &ls, self.config.handoff)?;
        Ok(GeneratedWeights {
            task,
            layers: weights.iter().map(|&w| tape.value(w).clone()).collect(),
        })
    }

    /// Detached copies of the current outputs for the given tasks.
    pub fn snapshot_targets(&self, tasks: &[TaskId]) -> Result<BTreeMap<TaskId, GeneratedWeights>> {
        tasks.iter().map(|&t| Ok((t, self.generate(t)?))).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.params
            .layer_shapes
            .iter()
            .map(|s| numel(s))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spiking::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(regions: &[usize]) -> Architecture {
        let mut dims = vec![3usize];
        dims.extend(std::iter::repeat(2).take(regions.len()));
        Architecture {
            input_shape: vec![3],
            layers: regions
                .iter()
                .enumerate()
                .map(|(i, &r)| LayerSpec::dense(&format!("l{i}"), dims[i], dims[i + 1], r))
                .collect(),
        }
    }

    fn small_cfg(hidden: usize) -> RegulatorConfig {
        RegulatorConfig {
            task_dim: 2,
            layer_dim: 2,
            hidden,
            handoff: true,
            weight_gain: 1.0,
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn deterministic_under_seed() {
        let a = arch(&[0, 0]);
        let cfg = small_cfg(4);
        let mut r1 = Regulator::new(&cfg, &a, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut r2 = Regulator::new(&cfg, &a, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        r1.add_task(0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        r2.add_task(0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(r1.generate(0).unwrap(), r2.generate(0).unwrap());
    }

    #[test]
    fn zero_params_emit_head_bias() {
        let a = arch(&[0, 0]);
        let cfg = small_cfg(3);
        let mut p = RegulatorParams::zeros(&cfg, &a);
        let (_, hb) = p.head_index(1);
        p.tensors_mut()[hb] = Tensor::column(vec![1.0, 2.0, 3.0, 4.0]);
        let p = RegulatorParams::from_parts(p.tensors().to_vec(), vec![0.5, 0.25], &cfg, &a).unwrap();
        let reg = Regulator {
            config: cfg.clone(),
            params: p,
            layer_embeddings: vec![
                LayerEmbedding { vector: Tensor::column(vec![1.0, -1.0]) };
                2
            ],
            task_embeddings: BTreeMap::new(),
        };
        let emb = TaskEmbedding {
            vector: Tensor::column(vec![0.3, 0.7]),
            frozen: false,
        };
        let w = reg.generate_with(0, &emb).unwrap();
        assert_eq!(w.layers[0].data(), &[0.0; 6]);
        assert_eq!(w.layers[1].shape(), &[2, 2]);
        let k = reg.params.head_scale(1);
        assert_eq!(k, 0.25);
        assert_eq!(w.layers[1].data(), &[k, 2.0 * k, 3.0 * k, 4.0 * k]);
    }

    /// Scalar LSTM with hidden size 1 computed by hand.
    #[test]
    fn single_unit_matches_scalar_recurrence() {
        let a = arch(&[0, 0]);
        let cfg = RegulatorConfig {
            task_dim: 1,
            layer_dim: 1,
            hidden: 1,
            ..small_cfg(1)
        };
        let mut p = RegulatorParams::zeros(&cfg, &a);
        let gates = [
            (GateTensor::ForgetW, vec![0.1, 0.2, 0.3], GateTensor::ForgetB, 0.05),
            (GateTensor::InputW, vec![-0.4, 0.5, 0.6], GateTensor::InputB, -0.1),
            (GateTensor::OutputW, vec![0.7, -0.2, 0.1], GateTensor::OutputB, 0.2),
            (GateTensor::CellW, vec![0.3, 0.9, -0.5], GateTensor::CellB, 0.0),
        ];
        for (w, wv, b, bv) in &gates {
            let iw = p.gate_index(0, *w);
            let ib = p.gate_index(0, *b);
            p.tensors_mut()[iw] = Tensor::new(vec![1, 3], wv.clone()).unwrap();
            p.tensors_mut()[ib] = Tensor::column(vec![*bv]);
        }
        for l in 0..2 {
            let (hw, hb) = p.head_index(l);
            let n = p.layer_shape(l).iter().product::<usize>();
            p.tensors_mut()[hw] = Tensor::from_fn(&[n, 1], |i| 0.1 * (i as f64 + 1.0));
            p.tensors_mut()[hb] = Tensor::from_fn(&[n, 1], |i| -0.01 * i as f64);
        }
        let scales = [0.5, 2.0];
        let p = RegulatorParams::from_parts(p.tensors().to_vec(), scales.to_vec(), &cfg, &a).unwrap();
        let xt = 0.8;
        let xl = [0.5, -1.5];
        let reg = Regulator {
            config: cfg,
            params: p.clone(),
            layer_embeddings: xl
                .iter()
                .map(|&v| LayerEmbedding { vector: Tensor::column(vec![v]) })
                .collect(),
            task_embeddings: BTreeMap::new(),
        };
        let got = reg
            .generate_with(0, &TaskEmbedding { vector: Tensor::column(vec![xt]), frozen: false })
            .unwrap();

        let pre = |k: usize, x: [f64; 3]| {
            let (_, wv, _, bv) = &gates[k];
            wv[0] * x[0] + wv[1] * x[1] + wv[2] * x[2] + bv
        };
        let (mut c, mut o) = (0.0, 0.0);
        for l in 0..2 {
            let z = [xt, xl[l], o];
            let f = sig(pre(0, z));
            let i = sig(pre(1, z));
            let og = sig(pre(2, z));
            let g = pre(3, z).tanh();
            c = c * f + i * g;
            o = og * c.tanh();
            let n = got.layers[l].len();
            for j in 0..n {
                let expect = scales[l] * (0.1 * (j as f64 + 1.0) * o - 0.01 * j as f64);
                assert!((got.layers[l].data()[j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn handoff_makes_region_split_transparent() {
        let two = arch(&[0, 0, 1, 1]);
        let cfg = small_cfg(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut reg2 = Regulator::new(&cfg, &two, &mut rng).unwrap();
        // Make region 1 a copy of region 0.
        for k in 0..PER_REGION {
            let t = reg2.params.tensors()[k].clone();
            reg2.params.tensors_mut()[PER_REGION + k] = t;
        }
        reg2.add_task(0, &mut rng).unwrap();
        let split = reg2.generate(0).unwrap();

        let mut merged = reg2.clone();
        merged.params = merged.params.clone().with_layer_regions(vec![0, 0, 0, 0]).unwrap();
        let whole = merged.generate(0).unwrap();
        assert_eq!(split, whole);

        let mut cut = reg2.clone();
        cut.config.handoff = false;
        let w_cut = cut.generate(0).unwrap();
        assert_eq!(w_cut.layers[..2], split.layers[..2]);
        assert!(w_cut.layers[2].max_abs_diff(&split.layers[2]).unwrap() > 1e-9);
    }

    #[test]
    fn task_embedding_changes_output() {
        let a = arch(&[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut reg = Regulator::new(&small_cfg(6), &a, &mut rng).unwrap();
        reg.add_task(0, &mut rng).unwrap();
        reg.add_task(1, &mut rng).unwrap();
        let d = reg.generate(0).unwrap().distance(&reg.generate(1).unwrap()).unwrap();
        assert!(d > 1e-6);
        assert!(reg.add_task(1, &mut rng).is_err());
        assert!(matches!(reg.generate(7), Err(Error::UnknownTask(7))));
    }

    #[test]
    fn initial_weight_scale_tracks_gain() {
        let a = Architecture::desk(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut reg = Regulator::new(&RegulatorConfig::default(), &a, &mut rng).unwrap();
        reg.add_task(0, &mut rng).unwrap();
        let w = reg.generate(0).unwrap();
        for (layer, t) in a.layers.iter().zip(&w.layers) {
            let n = t.len() as f64;
            let mean = t.sum() / n;
            let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let target = 1.0 / (layer.fan_in() as f64).sqrt();
            assert!(std > 0.2 * target && std < 5.0 * target, "{}: {std} vs {target}", layer.name);
        }
    }

    #[test]
    fn gradient_reaches_every_input() {
        let a = arch(&[0, 1]);
        let cfg = small_cfg(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reg = Regulator::new(&cfg, &a, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = reg.params.bind(&mut tape, true);
        let t = tape.param(Tensor::column(vec![0.4, -0.2]));
        let ls: Vec<Var> = reg
            .layer_embeddings
            .iter()
            .map(|e| tape.param(e.vector.clone()))
            .collect();
        let w = generate_on_tape(&mut tape, &reg.params, &pv, t, &ls, true).unwrap();
        let s0 = tape.sum(w[0]);
        let s1 = tape.sum(w[1]);
        let loss = tape.add(s0, s1).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(t).l2_norm() > 0.0);
        for &l in &ls {
            assert!(tape.grad(l).l2_norm() > 0.0);
        }
        // Region-1 gates only see the second layer, so their grads are nonzero too.
        let r1 = reg.params.gate_index(1, GateTensor::CellW);
        assert!(tape.grad(pv[r1]).l2_norm() > 0.0);
    }

    #[test]
    fn snapshots_are_detached_copies() {
        let a = arch(&[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut reg = Regulator::new(&small_cfg(3), &a, &mut rng).unwrap();
        reg.add_task(0, &mut rng).unwrap();
        let snap = reg.snapshot_targets(&[0]).unwrap();
        let before = snap[&0].clone();
        let (hw, _) = reg.params.head_index(0);
        reg.params.tensors_mut()[hw].data_mut()[0] += 1.0;
        assert_eq!(snap[&0], before);
        assert!(reg.generate(0).unwrap().distance(&before).unwrap() > 0.0);
    }
}
