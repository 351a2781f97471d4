//! Accuracy matrix, summary metrics and weight histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::SorModel;
use crate::pathway::mask_overlap;

/// `rows[i][j]`: accuracy on task `j` after training tasks `0..=i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// Mean of the final row.
    pub fn average_accuracy(&self) -> f64 {
        match self.rows.last() {
            Some(r) if !r.is_empty() => r.iter().sum::<f64>() / r.len() as f64,
            _ => 0.0,
        }
    }

    /// Mean over earlier tasks of final minus just-learned accuracy; `None`
    /// for a single task.
    pub fn backward_transfer(&self) -> Option<f64> {
        let t = self.rows.len();
        if t < 2 {
            return None;
        }
        let last = &self.rows[t - 1];
        let sum: f64 = (0..t - 1).map(|j| last[j] - self.rows[j][j]).sum();
        Some(sum / (t - 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let t = self.rows.len();
        let mut out = String::from("after_task");
        for j in 0..t {
            write!(out, ",task_{j}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for j in 0..t {
                match row.get(j) {
                    Some(v) => write!(out, ",{v:.6}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// 64-bin style histogram over the observed range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        if values.is_empty() {
            return Self { lo: 0.0, hi: 0.0, counts };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }
}

pub const HISTOGRAM_BINS: usize = 64;

/// Pathway statistics at the end of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathwayStats {
    pub active_counts: Vec<usize>,
    pub active_fractions: Vec<f64>,
    pub overlap_jaccard: Vec<Vec<f64>>,
    pub overlap_dot: Vec<Vec<usize>>,
    /// Mean shared-synapse count over distinct task pairs.
    pub mean_pairwise_dot: f64,
    /// `||W_t - W_{t-1}||` between consecutive end-of-task snapshots.
    pub memory_distance: Vec<Option<f64>>,
    pub selection_parameters: usize,
    /// Histogram of each task's active pathway weights.
    pub weight_histograms: Vec<Histogram>,
}

impl PathwayStats {
    pub fn collect(model: &SorModel, tasks: &[usize]) -> Result<Self> {
        let masks = tasks.iter().map(|&t| model.mask(t)).collect::<Result<Vec<_>>>()?;
        let n = masks.len();
        let mut jac = vec![vec![0.0; n]; n];
        let mut dot = vec![vec![0; n]; n];
        let (mut pair_sum, mut pairs) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let o = mask_overlap(&masks[i], &masks[j])?;
                jac[i][j] = o.jaccard;
                dot[i][j] = o.dot;
                if i < j {
                    pair_sum += o.dot;
                    pairs += 1;
                }
            }
        }
        let memory_distance = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 0 {
                    return Ok(None);
                }
                match (model.snapshots.get(t), model.snapshots.get(&tasks[i - 1])) {
                    (Some(a), Some(b)) => Ok(Some(a.distance(b)?)),
                    _ => Ok(None),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut weight_histograms = Vec::with_capacity(n);
        for &t in tasks {
            let p = model.pathway(t)?;
            let active: Vec<f64> = p
                .weights
                .iter()
                .zip(&p.mask.layers)
                .flat_map(|(w, m)| {
                    w.data()
                        .iter()
                        .zip(m.bits())
                        .filter(|(_, &on)| on)
                        .map(|(&v, _)| v)
                })
                .collect();
            weight_histograms.push(Histogram::new(&active, HISTOGRAM_BINS));
        }
        Ok(Self {
            active_counts: masks.iter().map(|m| m.active()).collect(),
            active_fractions: masks.iter().map(|m| m.active_fraction()).collect(),
            overlap_jaccard: jac,
            overlap_dot: dot,
            mean_pairwise_dot: if pairs == 0 {
                0.0
            } else {
                pair_sum as f64 / pairs as f64
            },
            memory_distance,
            selection_parameters: tasks
                .iter()
                .map(|&t| model.selections.get(t).map(|s| s.parameter_count()))
                .sum::<Result<usize>>()?,
            weight_histograms,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub acc: f64,
    pub bwt: Option<f64>,
    pub final_accuracies: Vec<f64>,
    /// Absent for the baseline, which has no pathways.
    pub pathways: Option<PathwayStats>,
    /// Training-split reads of each task after that task finished.
    pub past_train_reads: Vec<usize>,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
