//! Trainable models: the regulated sparse-pathway network and a plain
//! fine-tuned baseline sharing the same spiking backbone.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::objective::{
    anchor_loss_on_tape, memory_loss_on_tape, orthogonal_loss_on_tape, total_loss, LossBreakdown,
    LossConfig,
};
use crate::optim::{Adam, ParamKey};
use crate::pathway::{select_on_tape, select_pathway, AvailabilityMap, Pathway, PathwayMask, SelectionBank};
use crate::regulator::{generate_on_tape, GeneratedWeights, Regulator, RegulatorConfig, TaskId};
use crate::seed::{self, Stream};
use crate::spiking::{network_forward, predict_logits, Architecture, LifConfig, NetInput};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Sor,
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub architecture: Architecture,
    pub lif: LifConfig,
    pub regulator: RegulatorConfig,
    /// Temperature of the pathway gate's straight-through derivative.
    pub gate_temperature: f64,
    /// Std of the `0.5 + noise` selection initialization (variance 0.01).
    pub selection_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sor,
            architecture: Architecture::desk(2),
            lif: LifConfig::default(),
            regulator: RegulatorConfig::default(),
            gate_temperature: 1.0,
            selection_init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.lif.validate()?;
        self.regulator.validate()?;
        if !(self.gate_temperature > 0.0) {
            return Err(Error::config("model.gate_temperature", "must be positive"));
        }
        if !(self.selection_init_std > 0.0) {
            return Err(Error::config("model.selection_init_std", "must be positive"));
        }
        Ok(())
    }
}

/// Which parameters a training step may update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    /// Regulator, layer embeddings and the task's own unfrozen parameters.
    #[default]
    Full,
    /// Only the task's own embedding and selection parameters.
    TaskOnly,
}

/// Regulator, per-task selections, availability and memory snapshots.
#[derive(Clone, Debug)]
pub struct SorModel {
    pub config: ModelConfig,
    pub regulator: Regulator,
    pub selections: SelectionBank,
    pub availability: AvailabilityMap,
    /// Generated weights of each finished task, captured when it finished.
    pub snapshots: BTreeMap<TaskId, GeneratedWeights>,
    /// Finished tasks, most recent last.
    pub finished: Vec<TaskId>,
    seed: u64,
}

impl SorModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, Stream::Init, &[]);
        let regulator = Regulator::new(&config.regulator, &config.architecture, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            regulator,
            selections: SelectionBank::default(),
            availability: AvailabilityMap::full(&config.architecture),
            snapshots: BTreeMap::new(),
            finished: Vec::new(),
            seed,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        regulator: Regulator,
        selections: SelectionBank,
        availability: AvailabilityMap,
        snapshots: BTreeMap<TaskId, GeneratedWeights>,
        finished: Vec<TaskId>,
        seed: u64,
    ) -> Self {
        Self {
            config,
            regulator,
            selections,
            availability,
            snapshots,
            finished,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Creates the task's embedding and selection parameters.
    pub fn begin_task(&mut self, task: TaskId) -> Result<()> {
        let mut rng = seed::rng(self.seed, Stream::TaskEmbedding, &[task as u64]);
        self.regulator.add_task(task, &mut rng)?;
        let s = seed::derive(self.seed, Stream::Selection, &[task as u64, 0]);
        self.selections.new_selection(
            task,
            &self.config.architecture,
            s,
            self.config.selection_init_std,
        )?;
        Ok(())
    }

    /// Fresh selection parameters for a finished task (after an injury); its
    /// embedding becomes trainable again.
    pub fn restart_task(&mut self, task: TaskId, attempt: u64) -> Result<()> {
        let s = seed::derive(self.seed, Stream::Selection, &[task as u64, attempt]);
        self.selections.reinitialize(
            task,
            &self.config.architecture,
            s,
            self.config.selection_init_std,
        )?;
        self.regulator
            .task_embeddings
            .get_mut(&task)
            .ok_or(Error::UnknownTask(task))?
            .frozen = false;
        Ok(())
    }

    /// Freezes the task and records its memory snapshot.
    pub fn end_task(&mut self, task: TaskId) -> Result<()> {
        self.regulator.freeze_task(task)?;
        self.selections.freeze(task)?;
        self.snapshots.insert(task, self.regulator.generate(task)?);
        self.finished.retain(|&t| t != task);
        self.finished.push(task);
        Ok(())
    }

    pub fn mask(&self, task: TaskId) -> Result<PathwayMask> {
        self.selections.get(task)?.mask(&self.availability)
    }

    pub fn masks(&self) -> Result<BTreeMap<TaskId, PathwayMask>> {
        self.selections.masks(&self.availability)
    }

    pub fn pathway(&self, task: TaskId) -> Result<Pathway> {
        let w = self.regulator.generate(task)?;
        select_pathway(&w, self.selections.get(task)?, &self.availability)
    }

    pub fn logits(&self, task: TaskId, inputs: &Tensor) -> Result<Tensor> {
        let p = self.pathway(task)?;
        predict_logits(inputs, &p.weights, &self.config.architecture, &self.config.lif)
    }

    fn memory_targets(&self, task: TaskId, all_past: bool) -> Vec<&GeneratedWeights> {
        let others = self.finished.iter().filter(|&&t| t != task);
        if all_past {
            others.map(|t| &self.snapshots[t]).collect()
        } else {
            others.last().map(|t| &self.snapshots[t]).into_iter().collect()
        }
    }

    /// Detached orthogonality partners: masks, or masked snapshot weights.
    fn orth_partners(&self, task: TaskId, on_masks: bool) -> Result<Vec<Vec<Tensor>>> {
        self.finished
            .iter()
            .filter(|&&t| t != task)
            .map(|&t| {
                let mask = self.mask(t)?;
                if on_masks {
                    Ok(mask.layers.iter().map(|m| m.to_tensor()).collect())
                } else {
                    let p = select_pathway(&self.snapshots[&t], self.selections.get(t)?, &self.availability)?;
                    Ok(p.weights)
                }
            })
            .collect()
    }

    /// Records the full objective for one minibatch on `tape`. Frozen tensors,
    /// and shared ones outside `scope`, are bound as constants.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        task: TaskId,
        inputs: &Tensor,
        labels: &[usize],
        loss_cfg: &LossConfig,
        scope: TrainScope,
    ) -> Result<LossGraph> {
        let shared = scope == TrainScope::Full;
        let task_trainable = !self.regulator.task(task)?.frozen;
        let sel = self.selections.get(task)?;
        let sel_trainable = !sel.frozen;
        let bind = |tape: &mut Tape, t: Tensor, trainable: bool| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };

        let regulator = self.regulator.params.bind(tape, shared);
        let layer_embeddings: Vec<Var> = self
            .regulator
            .layer_embeddings
            .iter()
            .map(|e| bind(tape, e.vector.clone(), shared))
            .collect();
        let task_embedding = bind(tape, self.regulator.task(task)?.vector.clone(), task_trainable);
        let weights = generate_on_tape(
            tape,
            &self.regulator.params,
            &regulator,
            task_embedding,
            &layer_embeddings,
            self.regulator.config.handoff,
        )?;

        let mut selection = Vec::with_capacity(weights.len());
        let mut masks = Vec::with_capacity(weights.len());
        let mut paths = Vec::with_capacity(weights.len());
        for (l, &w) in weights.iter().enumerate() {
            let a = bind(tape, sel.layers[l].a.clone(), sel_trainable);
            let at = bind(tape, sel.layers[l].a_tilde.clone(), sel_trainable);
            let (p, m) = select_on_tape(
                tape,
                w,
                a,
                at,
                &self.availability.layers[l],
                self.config.gate_temperature,
            )?;
            selection.push((a, at));
            masks.push(m);
            paths.push(p);
        }

        let x = tape.constant(inputs.clone());
        let (logits, hidden) = network_forward(
            tape,
            NetInput::Currents(x),
            &paths,
            &self.config.architecture,
            &self.config.lif,
        )?;
        let l_class = tape.softmax_cross_entropy(logits, labels)?;

        let targets = self.memory_targets(task, loss_cfg.memory_all_past);
        let l_mem = memory_loss_on_tape(tape, &weights, &targets)?;

        let current = if loss_cfg.orth_on_masks { &masks } else { &paths };
        let partners = self.orth_partners(task, loss_cfg.orth_on_masks)?;
        let l_orth = orthogonal_loss_on_tape(tape, current, &partners, loss_cfg.orth_include_self)?;
        let l_anchor = if sel_trainable {
            anchor_loss_on_tape(tape, &selection)?
        } else {
            None
        };

        let mut total = l_class;
        for (term, k) in [(l_mem, loss_cfg.alpha), (l_orth, loss_cfg.beta), (l_anchor, loss_cfg.gamma)] {
            if let Some(v) = term {
                let scaled = tape.scale(v, k);
                total = tape.add(total, scaled)?;
            }
        }
        let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        let breakdown = total_loss(
            tape.value(l_class).data()[0],
            value(l_mem),
            value(l_orth),
            value(l_anchor),
            loss_cfg,
        );
        Ok(LossGraph {
            total,
            breakdown,
            regulator: shared.then_some(regulator),
            layer_embeddings: shared.then_some(layer_embeddings),
            task_embedding: task_trainable.then_some(task_embedding),
            selection: sel_trainable.then_some(selection),
            masks,
            spikes: hidden.into_iter().flatten().collect(),
        })
    }

    /// One optimizer step on a minibatch. A non-finite loss is returned
    /// without touching any parameter.
    pub fn train_step(
        &mut self,
        task: TaskId,
        inputs: &Tensor,
        labels: &[usize],
        loss_cfg: &LossConfig,
        opt: &mut Adam,
        scope: TrainScope,
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let graph = self.loss_graph(&mut tape, task, inputs, labels, loss_cfg, scope)?;
        if !graph.breakdown.is_finite() {
            return Ok(graph.breakdown);
        }
        tape.backward(graph.total)?;

        if let Some(vars) = &graph.regulator {
            for (i, &v) in vars.iter().enumerate() {
                let key = if self.regulator.params.is_head(i) {
                    ParamKey::Head(i)
                } else {
                    ParamKey::Recurrent(i)
                };
                opt.step(key, self.regulator.params.tensors_mut()[i].data_mut(), tape.grad(v).data());
            }
        }
        if let Some(vars) = &graph.layer_embeddings {
            for (i, &v) in vars.iter().enumerate() {
                opt.step(
                    ParamKey::LayerEmbedding(i),
                    self.regulator.layer_embeddings[i].vector.data_mut(),
                    tape.grad(v).data(),
                );
            }
        }
        if let Some(v) = graph.task_embedding {
            let emb = self
                .regulator
                .task_embeddings
                .get_mut(&task)
                .ok_or(Error::UnknownTask(task))?;
            opt.step(ParamKey::TaskEmbedding(task), emb.vector.data_mut(), tape.grad(v).data());
        }
        if let Some(pairs) = &graph.selection {
            let sel = self.selections.get_mut(task)?;
            for (l, &(a, at)) in pairs.iter().enumerate() {
                opt.step(ParamKey::SelectionA(task, l), sel.layers[l].a.data_mut(), tape.grad(a).data());
                opt.step(
                    ParamKey::SelectionATilde(task, l),
                    sel.layers[l].a_tilde.data_mut(),
                    tape.grad(at).data(),
                );
            }
        }
        Ok(graph.breakdown)
    }
}

/// The recorded objective of one minibatch and the trainable leaves it reads.
/// A group is `None` when it was bound as constants.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// In [`RegulatorParams`](crate::regulator::RegulatorParams) storage order.
    pub regulator: Option<Vec<Var>>,
    pub layer_embeddings: Option<Vec<Var>>,
    pub task_embedding: Option<Var>,
    /// `(a, a_tilde)` per layer.
    pub selection: Option<Vec<(Var, Var)>>,
    /// Gate outputs per layer.
    pub masks: Vec<Var>,
    /// Spike nodes of every hidden layer and step.
    pub spikes: Vec<Var>,
}

/// Backbone with directly learned weights shared by every task.
#[derive(Clone, Debug)]
pub struct NaiveModel {
    pub config: ModelConfig,
    pub weights: Vec<Tensor>,
}

impl NaiveModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, Stream::Init, &[]);
        let gain = config.regulator.weight_gain;
        let weights = config
            .architecture
            .layers
            .iter()
            .map(|l| {
                let std = gain / (l.fan_in() as f64).sqrt();
                Tensor::from_fn(&l.weight_shape(), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            weights,
        })
    }

    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        predict_logits(inputs, &self.weights, &self.config.architecture, &self.config.lif)
    }

    pub fn train_step(&mut self, inputs: &Tensor, labels: &[usize], opt: &mut Adam) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let wv: Vec<Var> = self.weights.iter().map(|w| tape.param(w.clone())).collect();
        let x = tape.constant(inputs.clone());
        let (logits, _) = network_forward(
            &mut tape,
            NetInput::Currents(x),
            &wv,
            &self.config.architecture,
            &self.config.lif,
        )?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let l = tape.value(loss).data()[0];
        let breakdown = LossBreakdown {
            l_class: l,
            total: l,
            ..LossBreakdown::default()
        };
        if !breakdown.is_finite() {
            return Ok(breakdown);
        }
        tape.backward(loss)?;
        for (i, &v) in wv.iter().enumerate() {
            let g = tape.grad(v);
            opt.step(ParamKey::DenseWeight(i), self.weights[i].data_mut(), g.data());
        }
        Ok(breakdown)
    }
}

/// Either learner, driven uniformly by the harness.
#[derive(Clone, Debug)]
pub enum Model {
    Sor(Box<SorModel>),
    Naive(NaiveModel),
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config.kind {
            ModelKind::Sor => Model::Sor(Box::new(SorModel::new(config, seed)?)),
            ModelKind::Naive => Model::Naive(NaiveModel::new(config, seed)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Sor(m) => &m.config,
            Model::Naive(m) => &m.config,
        }
    }

    pub fn as_sor(&self) -> Option<&SorModel> {
        match self {
            Model::Sor(m) => Some(m),
            Model::Naive(_) => None,
        }
    }

    pub fn as_sor_mut(&mut self) -> Option<&mut SorModel> {
        match self {
            Model::Sor(m) => Some(m),
            Model::Naive(_) => None,
        }
    }

    pub fn begin_task(&mut self, task: TaskId) -> Result<()> {
        match self {
            Model::Sor(m) => m.begin_task(task),
            Model::Naive(_) => Ok(()),
        }
    }

    pub fn end_task(&mut self, task: TaskId) -> Result<()> {
        match self {
            Model::Sor(m) => m.end_task(task),
            Model::Naive(_) => Ok(()),
        }
    }

    pub fn train_step(
        &mut self,
        task: TaskId,
        inputs: &Tensor,
        labels: &[usize],
        loss_cfg: &LossConfig,
        opt: &mut Adam,
        scope: TrainScope,
    ) -> Result<LossBreakdown> {
        match self {
            Model::Sor(m) => m.train_step(task, inputs, labels, loss_cfg, opt, scope),
            Model::Naive(m) => m.train_step(inputs, labels, opt),
        }
    }

    pub fn logits(&self, task: TaskId, inputs: &Tensor) -> Result<Tensor> {
        match self {
            Model::Sor(m) => m.logits(task, inputs),
            Model::Naive(m) => m.logits(inputs),
        }
    }
}
