//! Injure a task's private synapses, then let it find a new pathway.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pathway::{injure, PathwayMask};
use crate::regulator::TaskId;
use crate::seed::{self, Stream};

use super::data::TaskSequence;
use super::{evaluate, train_task, EpochLog, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjuryReport {
    pub target: TaskId,
    pub fraction: f64,
    /// Synapses only the target used before the injury.
    pub unique: usize,
    pub cleared: usize,
    pub tasks: Vec<TaskId>,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    /// Every other task's mask is bitwise identical after the repair.
    pub others_unchanged: bool,
}

impl InjuryReport {
    /// Two rows (`pre`, `post`) by one column per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage");
        for t in &self.tasks {
            write!(out, ",task_{t}").unwrap();
        }
        out.push('\n');
        for (name, row) in [("pre", &self.pre), ("post", &self.post)] {
            out.push_str(name);
            for v in row {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Injures `fraction` of the target's unique synapses, re-initializes its
/// selection and retrains it alone. A zero fraction changes nothing.
pub fn injury_experiment(
    model: &mut Model,
    seq: &TaskSequence,
    cfg: &RunConfig,
    fraction: f64,
    repair_epochs: usize,
    log: &mut Vec<EpochLog>,
) -> Result<InjuryReport> {
    let target = cfg.harness.injury.target;
    let sor = model
        .as_sor()
        .ok_or_else(|| Error::config("model.kind", "injury needs the regulated model"))?;
    if sor.finished.len() < 2 {
        return Err(Error::config("harness.injury", "needs at least two trained tasks"));
    }
    if !sor.finished.contains(&target) {
        return Err(Error::UnknownTask(target));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("harness.injury.fraction", "must lie in [0, 1]"));
    }
    let tasks: Vec<TaskId> = seq.tasks.iter().map(|t| t.id).filter(|t| sor.finished.contains(t)).collect();
    let accuracies = |m: &Model| -> Result<Vec<f64>> {
        tasks.iter().map(|&t| evaluate(m, seq.task(t)?)).collect()
    };
    let pre = accuracies(model)?;
    let others_before: Vec<PathwayMask> = tasks
        .iter()
        .filter(|&&t| t != target)
        .map(|&t| sor.mask(t))
        .collect::<Result<_>>()?;

    let (unique, cleared) = if fraction > 0.0 {
        let sor = model.as_sor_mut().expect("checked above");
        let masks = sor.masks()?;
        let s = seed::derive(cfg.seed, Stream::Injury, &[target as u64]);
        let outcome = injure(&masks, target, fraction, &sor.availability, s)?;
        sor.availability = outcome.availability;
        sor.restart_task(target, 1)?;
        let plan = TrainPlan {
            epochs: repair_epochs,
            scope: cfg.harness.injury.scope,
            attempt: 1,
            eval_upto: seq.len(),
        };
        let mut repair_cfg = cfg.clone();
        repair_cfg.optimizer.lr *= cfg.harness.injury.lr_scale;
        train_task(model, seq, target, &repair_cfg, plan, log)?;
        (outcome.unique, outcome.cleared)
    } else {
        (0, 0)
    };

    let sor = model.as_sor().expect("checked above");
    let others_after: Vec<PathwayMask> = tasks
        .iter()
        .filter(|&&t| t != target)
        .map(|&t| sor.mask(t))
        .collect::<Result<_>>()?;
    Ok(InjuryReport {
        target,
        fraction,
        unique,
        cleared,
        post: accuracies(model)?,
        pre,
        tasks,
        others_unchanged: others_before == others_after,
    })
}
