//! Task-sequence driver: training, evaluation, injury and sweeps.

pub mod data;
pub mod injury;
pub mod metrics;
pub mod report;
pub mod sweep;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, FileFormat, RunConfig};
use crate::error::{Error, Result};
use crate::model::{Model, TrainScope};
use crate::objective::LossBreakdown;
use crate::optim::Adam;
use crate::regulator::TaskId;
use crate::seed::{self, Stream};

use data::{load_csv, load_idx, make_synthetic_tasks, SplitManifest, TaskData, TaskSequence};
use metrics::{AccuracyMatrix, PathwayStats, RunMetrics};

/// Largest evaluation chunk; bounds tape size during inference.
const EVAL_CHUNK: usize = 256;

/// Mean loss of one epoch plus the accuracies measured at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub task: TaskId,
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
    /// `(task, test accuracy)` for every task trained so far.
    pub accuracies: Vec<(TaskId, f64)>,
}

/// Builds the task sequence a config describes.
pub fn load_sequence(cfg: &RunConfig) -> Result<TaskSequence> {
    match cfg.data.source {
        DataSource::Synthetic => make_synthetic_tasks(&cfg.data.synthetic, cfg.seed),
        DataSource::Files => {
            let files = cfg
                .data
                .files
                .as_ref()
                .ok_or_else(|| Error::config("data.files", "required when data.source is files"))?;
            let (train, test) = match files.format {
                FileFormat::Csv => (load_csv(&files.train_images)?, load_csv(&files.test_images)?),
                FileFormat::Idx => {
                    let need = |p: &Option<std::path::PathBuf>, field: &str| {
                        p.clone()
                            .ok_or_else(|| Error::config(field, "idx format needs a label file"))
                    };
                    (
                        load_idx(&files.train_images, &need(&files.train_labels, "data.files.train_labels")?)?,
                        load_idx(&files.test_images, &need(&files.test_labels, "data.files.test_labels")?)?,
                    )
                }
            };
            SplitManifest::load(&files.manifest)?.apply(&train, &test)
        }
    }
}

/// Test accuracy of `task` under the model's current state.
pub fn evaluate(model: &Model, task: &TaskData) -> Result<f64> {
    let test = &task.test;
    if test.is_empty() {
        return Err(Error::EmptyDataset(task.id));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = test.batch(chunk);
        let logits = model.logits(task.id, &x)?;
        let c = logits.shape()[1];
        for (row, &label) in logits.data().chunks(c).zip(&y) {
            // First maximum wins, so ties resolve to the lowest class.
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            correct += (best == label) as usize;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Options for one call of [`train_task`].
#[derive(Clone, Copy, Debug)]
pub struct TrainPlan {
    pub epochs: usize,
    pub scope: TrainScope,
    /// Distinguishes repeated training of the same task (e.g. repair).
    pub attempt: u64,
    /// Tasks evaluated at each epoch boundary when enabled.
    pub eval_upto: usize,
}

/// Trains one task from a fresh optimizer and finishes it (freeze and
/// snapshot). Appends one [`EpochLog`] per epoch.
pub fn train_task(
    model: &mut Model,
    seq: &TaskSequence,
    task: TaskId,
    cfg: &RunConfig,
    plan: TrainPlan,
    log: &mut Vec<EpochLog>,
) -> Result<()> {
    let data = seq.task(task)?;
    let train = data.train();
    if train.is_empty() {
        return Err(Error::EmptyDataset(task));
    }
    let mut opt = Adam::new(&cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..plan.epochs {
        let mut rng = seed::rng(cfg.seed, Stream::Shuffle, &[task as u64, plan.attempt, epoch as u64]);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.optimizer.batch_size).enumerate() {
            let (x, y) = train.batch(chunk);
            let b = model.train_step(task, &x, &y, &cfg.loss, &mut opt, plan.scope)?;
            if !b.is_finite() {
                return Err(Error::NonFiniteLoss {
                    task,
                    epoch,
                    step,
                    detail: format!("{b:?}"),
                });
            }
            sum.l_class += b.l_class;
            sum.l_mem += b.l_mem;
            sum.l_orth += b.l_orth;
            sum.l_anchor += b.l_anchor;
            sum.total += b.total;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let loss = LossBreakdown {
            l_class: sum.l_class / n,
            l_mem: sum.l_mem / n,
            l_orth: sum.l_orth / n,
            l_anchor: sum.l_anchor / n,
            total: sum.total / n,
        };
        let accuracies = if cfg.harness.eval_every_epoch {
            seq.tasks[..plan.eval_upto]
                .iter()
                .map(|t| Ok((t.id, evaluate(model, t)?)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        log.push(EpochLog {
            task,
            epoch,
            steps,
            loss,
            accuracies,
        });
    }
    model.end_task(task)
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub matrix: AccuracyMatrix,
    pub metrics: RunMetrics,
    pub log: Vec<EpochLog>,
    pub model: Model,
}

/// Trains every task in order, filling one matrix row after each.
pub fn run_sequence(seq: &TaskSequence, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::config("data", "task sequence is empty"));
    }
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    let mut matrix = AccuracyMatrix::default();
    let mut log = Vec::new();
    let mut reads_at_finish = Vec::with_capacity(seq.len());
    for (i, task) in seq.tasks.iter().enumerate() {
        model.begin_task(task.id)?;
        let plan = TrainPlan {
            epochs: cfg.optimizer.epochs,
            scope: TrainScope::Full,
            attempt: 0,
            eval_upto: i + 1,
        };
        train_task(&mut model, seq, task.id, cfg, plan, &mut log)?;
        reads_at_finish.push(task.train_reads());
        let row = seq.tasks[..=i]
            .iter()
            .map(|t| evaluate(&model, t))
            .collect::<Result<Vec<_>>>()?;
        matrix.rows.push(row);
    }
    let ids: Vec<TaskId> = seq.tasks.iter().map(|t| t.id).collect();
    let pathways = match model.as_sor() {
        Some(m) => Some(PathwayStats::collect(m, &ids)?),
        None => None,
    };
    let metrics = RunMetrics {
        acc: matrix.average_accuracy(),
        bwt: matrix.backward_transfer(),
        final_accuracies: matrix.rows.last().cloned().unwrap_or_default(),
        pathways,
        past_train_reads: seq
            .tasks
            .iter()
            .zip(&reads_at_finish)
            .map(|(t, &r)| t.train_reads() - r)
            .collect(),
    };
    Ok(RunOutcome {
        matrix,
        metrics,
        log,
        model,
    })
}
