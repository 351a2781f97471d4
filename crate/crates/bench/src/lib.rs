//! Fixtures shared by the benchmarks.

use sorsnn_core::harness::load_sequence;
use sorsnn_core::{Model, RunConfig, Tensor};

/// A default-config model with task 0 begun and one training minibatch.
pub struct Fixture {
    pub cfg: RunConfig,
    pub model: Model,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Fixture {
    pub fn new(cfg: RunConfig) -> Self {
        let seq = load_sequence(&cfg).expect("synthetic sequence");
        let mut model = Model::new(&cfg.model, cfg.seed).expect("valid model config");
        model.begin_task(0).expect("fresh task");
        let idx: Vec<usize> = (0..cfg.optimizer.batch_size).collect();
        let (inputs, labels) = seq.tasks[0].train().batch(&idx);
        Self {
            cfg,
            model,
            inputs,
            labels,
        }
    }

    pub fn desk() -> Self {
        Self::new(RunConfig::default())
    }
}
