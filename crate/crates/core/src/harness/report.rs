//! Run-report archive. Archives are assembled in a sibling temp directory
//! and renamed into place, so readers never see a partial archive.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;

use super::metrics::Histogram;
use super::{EpochLog, RunOutcome};

pub const MATRIX_FILE: &str = "matrix.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const MASKS_DIR: &str = "masks";
pub const WEIGHTS_HIST_FILE: &str = "weights_hist.csv";
pub const CONFIG_FILE: &str = "config.resolved.json";
pub const SEED_FILE: &str = "seed.txt";
pub const CHECKPOINT_FILE: &str = "state.ckpt";

/// Builds a directory through `fill` and renames it to `dir`, replacing any
/// previous directory at that path.
pub fn write_atomically(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::config("output_dir", "must name a directory"))?
        .to_string_lossy()
        .into_owned();
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

pub fn mask_file(task: usize) -> String {
    format!("task_{task}.tsv")
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("task,epoch,steps,l_class,l_mem,l_orth,l_anchor,total\n");
    for e in log {
        let l = &e.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.task, e.epoch, e.steps, l.l_class, l.l_mem, l.l_orth, l.l_anchor, l.total
        )
        .unwrap();
    }
    out
}

pub fn curves_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("task,epoch,eval_task,accuracy\n");
    for e in log {
        for (t, acc) in &e.accuracies {
            writeln!(out, "{},{},{t},{acc:.6}", e.task, e.epoch).unwrap();
        }
    }
    out
}

pub fn histograms_csv(hists: &[(usize, Histogram)]) -> String {
    let mut out = String::from("task,bin,lo,hi,count\n");
    for (task, h) in hists {
        for (b, c) in h.counts.iter().enumerate() {
            let (lo, hi) = h.edges(b);
            writeln!(out, "{task},{b},{lo},{hi},{c}").unwrap();
        }
    }
    out
}

/// Writes one mask dump per task into `dir/masks`.
pub fn write_masks(dir: &Path, model: &Model) -> Result<()> {
    let masks_dir = dir.join(MASKS_DIR);
    fs::create_dir_all(&masks_dir)?;
    if let Some(sor) = model.as_sor() {
        let names: Vec<String> = sor
            .config
            .architecture
            .layers
            .iter()
            .map(|l| l.name.clone())
            .collect();
        for (task, mask) in sor.masks()? {
            let mut buf = Vec::new();
            mask.write_dump(&names, &mut buf)?;
            fs::write(masks_dir.join(mask_file(task)), buf)?;
        }
    }
    Ok(())
}

/// Writes the complete archive for a finished run.
pub fn write_archive(dir: &Path, cfg: &RunConfig, out: &RunOutcome) -> Result<()> {
    write_atomically(dir, |tmp| {
        fs::write(tmp.join(MATRIX_FILE), out.matrix.to_csv())?;
        fs::write(
            tmp.join(METRICS_FILE),
            serde_json::to_string_pretty(&out.metrics)? + "\n",
        )?;
        fs::write(tmp.join(LOSS_LOG_FILE), loss_log_csv(&out.log))?;
        fs::write(tmp.join(CURVES_FILE), curves_csv(&out.log))?;
        write_masks(tmp, &out.model)?;
        let hists: Vec<(usize, Histogram)> = out
            .metrics
            .pathways
            .as_ref()
            .map(|p| p.weight_histograms.iter().cloned().enumerate().collect())
            .unwrap_or_default();
        fs::write(tmp.join(WEIGHTS_HIST_FILE), histograms_csv(&hists))?;
        fs::write(tmp.join(CONFIG_FILE), cfg.to_json() + "\n")?;
        fs::write(tmp.join(SEED_FILE), format!("{}\n", cfg.seed))?;
        checkpoint::save(&out.model, &tmp.join(CHECKPOINT_FILE))?;
        Ok(())
    })
}
