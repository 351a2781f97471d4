//! Coefficient sweeps over independent runs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

use super::metrics::mean_std;
use super::{load_sequence, run_sequence};

/// Environment variable capping concurrent sweep runs.
pub const THREADS_ENV: &str = "SORSNN_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParam::Alpha => cfg.loss.alpha = value,
            SweepParam::Beta => cfg.loss.beta = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::config("param", format!("`{other}` is not alpha or beta"))),
        }
    }
}

/// Headline numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub value: f64,
    pub seed: u64,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub mean_pairwise_dot: Option<f64>,
    /// `||W_2 - W_1||` between the first two end-of-task snapshots.
    pub memory_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub runs: Vec<RunSummary>,
}

/// Drops repeated values, keeping first occurrences. Returns the removed ones.
pub fn dedup_values(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &v in values {
        if kept.iter().any(|&k| k == v) {
            dropped.push(v);
        } else {
            kept.push(v);
        }
    }
    (kept, dropped)
}

/// Worker count from [`THREADS_ENV`], else the machine's parallelism.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_one(base: &RunConfig, param: SweepParam, value: f64, seed: u64) -> Result<RunSummary> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    param.apply(&mut cfg, value);
    let seq = load_sequence(&cfg)?;
    let out = run_sequence(&seq, &cfg)?;
    let stats = out.metrics.pathways.as_ref();
    Ok(RunSummary {
        value,
        seed,
        acc: out.metrics.acc,
        bwt: out.metrics.bwt,
        mean_pairwise_dot: stats.map(|s| s.mean_pairwise_dot),
        memory_distance: stats.and_then(|s| s.memory_distance.get(1).copied().flatten()),
    })
}

/// One run per `(value, seed)`, at most `threads` at a time. Values must
/// already be distinct.
pub fn sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    threads: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| run_one(base, param, v, s))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepTable {
        param,
        values: values.to_vec(),
        runs,
    })
}

fn stat(runs: &[&RunSummary], f: impl Fn(&RunSummary) -> Option<f64>) -> (f64, f64) {
    let vals: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
    mean_std(&vals)
}

impl SweepTable {
    pub fn runs_for(&self, value: f64) -> Vec<&RunSummary> {
        self.runs.iter().filter(|r| r.value == value).collect()
    }

    /// Mean over seeds of a per-run quantity at `value`.
    pub fn mean(&self, value: f64, f: impl Fn(&RunSummary) -> Option<f64>) -> f64 {
        stat(&self.runs_for(value), f).0
    }

    /// One row per value with mean and std columns over seeds.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},runs,acc_mean,acc_std,bwt_mean,bwt_std,overlap_mean,overlap_std,memory_distance_mean,memory_distance_std\n",
            self.param.name()
        );
        for &v in &self.values {
            let runs = self.runs_for(v);
            let cols = [
                stat(&runs, |r| Some(r.acc)),
                stat(&runs, |r| r.bwt),
                stat(&runs, |r| r.mean_pairwise_dot),
                stat(&runs, |r| r.memory_distance),
            ];
            write!(out, "{v},{}", runs.len()).unwrap();
            for (m, s) in cols {
                if m.is_nan() {
                    out.push_str(",,");
                } else {
                    write!(out, ",{m:.6},{s:.6}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}
