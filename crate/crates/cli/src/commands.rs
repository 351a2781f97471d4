use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use sorsnn_core::checkpoint;
use sorsnn_core::harness::injury::injury_experiment;
use sorsnn_core::harness::metrics::{Histogram, HISTOGRAM_BINS};
use sorsnn_core::harness::report::{self, write_atomically};
use sorsnn_core::harness::sweep::{self, dedup_values, threads_from_env, SweepParam};
use sorsnn_core::harness::{load_sequence, run_sequence};
use sorsnn_core::pathway::mask_overlap;
use sorsnn_core::{Error, Model, PathwayMask, RunConfig};

use crate::Inspect;

/// Exit status 2 for bad input, 1 for failures during a run.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn resolve(config: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let base = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(base.with_overrides(overrides)?)
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> CmdResult {
    let cfg = resolve(config, overrides)?;
    let seq = load_sequence(&cfg)?;
    let out = run_sequence(&seq, &cfg)?;
    report::write_archive(&cfg.output_dir, &cfg, &out)?;
    let bwt = out.metrics.bwt.map_or("n/a".to_string(), |b| format!("{b:.4}"));
    println!("ACC {:.4}  BWT {bwt}  archive {}", out.metrics.acc, cfg.output_dir.display());
    Ok(())
}

fn default_injury_dir(archive: &Path) -> PathBuf {
    let name = archive
        .file_name()
        .map_or("archive".into(), |n| n.to_string_lossy().into_owned());
    archive.with_file_name(format!("{name}.injury"))
}

fn load_model(archive: &Path) -> Result<Model, Failure> {
    let path = archive.join(report::CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(Failure::Usage(format!("no checkpoint at {}", path.display())));
    }
    checkpoint::load(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

pub fn injure(
    archive: &Path,
    fraction: Option<f64>,
    repair_epochs: Option<usize>,
    out: Option<PathBuf>,
) -> CmdResult {
    let mut model = load_model(archive)?;
    let cfg = RunConfig::load(&archive.join(report::CONFIG_FILE))?;
    let fraction = fraction.unwrap_or(cfg.harness.injury.fraction);
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Failure::Usage(format!("fraction {fraction} is outside [0, 1]")));
    }
    let out = out.unwrap_or_else(|| default_injury_dir(archive));
    if fs::canonicalize(&out).ok() == fs::canonicalize(archive).ok() {
        return Err(Failure::Usage("output directory must differ from the input archive".into()));
    }
    let epochs = repair_epochs.unwrap_or(cfg.harness.injury.repair_epochs);
    let seq = load_sequence(&cfg)?;
    let mut log = Vec::new();
    let result = injury_experiment(&mut model, &seq, &cfg, fraction, epochs, &mut log)?;
    let table = result.to_csv();
    write_atomically(&out, |dir| {
        fs::write(dir.join("injury.csv"), &table)?;
        fs::write(dir.join(report::LOSS_LOG_FILE), report::loss_log_csv(&log))?;
        checkpoint::save(&model, &dir.join(report::CHECKPOINT_FILE))
    })?;
    print!("{table}");
    eprintln!(
        "cleared {} of {} unique synapses of task {}; wrote {}",
        result.cleared,
        result.unique,
        result.target,
        out.display()
    );
    Ok(())
}

/// Mask dumps of an archive, ordered by task.
fn read_masks(archive: &Path) -> Result<(Vec<String>, Vec<PathwayMask>), Failure> {
    let dir = archive.join(report::MASKS_DIR);
    let entries = fs::read_dir(&dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let task = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("task_"))
            .and_then(|n| n.strip_suffix(".tsv"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(task) = task {
            found.push((task, path));
        }
    }
    if found.is_empty() {
        return Err(Failure::Usage(format!("{} holds no pathway masks", dir.display())));
    }
    found.sort();
    let mut names = Vec::new();
    let mut masks = Vec::with_capacity(found.len());
    for (task, path) in found {
        let file = fs::File::open(&path)?;
        let (n, mask) = PathwayMask::read_dump(task, &path.display().to_string(), BufReader::new(file))?;
        names = n;
        masks.push(mask);
    }
    Ok((names, masks))
}

pub fn inspect(archive: &Path, what: Inspect) -> CmdResult {
    if !archive.is_dir() {
        return Err(Failure::Usage(format!("{} is not an archive directory", archive.display())));
    }
    let csv = match what {
        Inspect::Masks => participation_csv(archive)?,
        Inspect::Overlap => overlap_csv(archive)?,
        Inspect::Weights => weights_csv(archive)?,
    };
    print!("{csv}");
    Ok(())
}

fn participation_csv(archive: &Path) -> Result<String, Failure> {
    let (names, masks) = read_masks(archive)?;
    let mut out = String::from("layer,synapse,tasks\n");
    for (l, name) in names.iter().enumerate() {
        let len = masks[0].layers[l].len();
        for i in 0..len {
            let count = masks.iter().filter(|m| m.layers[l].bits()[i]).count();
            writeln!(out, "{name},{i},{count}").unwrap();
        }
    }
    Ok(out)
}

fn overlap_csv(archive: &Path) -> Result<String, Failure> {
    let (_, masks) = read_masks(archive)?;
    let mut out = String::from("task");
    for m in &masks {
        write!(out, ",task_{}", m.task).unwrap();
    }
    out.push('\n');
    for a in &masks {
        write!(out, "task_{}", a.task).unwrap();
        for b in &masks {
            write!(out, ",{:.6}", mask_overlap(a, b)?.jaccard).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

fn weights_csv(archive: &Path) -> Result<String, Failure> {
    let model = load_model(archive)?;
    let sor = model
        .as_sor()
        .ok_or_else(|| Failure::Usage("the baseline model has no task pathways".into()))?;
    let mut hists = Vec::new();
    for &task in &sor.finished {
        let p = sor.pathway(task)?;
        let active: Vec<f64> = p
            .weights
            .iter()
            .zip(&p.mask.layers)
            .flat_map(|(w, m)| w.data().iter().zip(m.bits()).filter(|(_, &on)| on).map(|(&v, _)| v))
            .collect();
        hists.push((task, Histogram::new(&active, HISTOGRAM_BINS)));
    }
    hists.sort_by_key(|(t, _)| *t);
    Ok(report::histograms_csv(&hists))
}

pub fn sweep(
    config: Option<&Path>,
    overrides: &[String],
    param: &str,
    values: &[f64],
    seeds: &[u64],
    out: &Path,
) -> CmdResult {
    let param: SweepParam = param.parse()?;
    if values.is_empty() {
        return Err(Failure::Usage("--values needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Failure::Usage("--seeds needs at least one seed".into()));
    }
    let (values, dropped) = dedup_values(values);
    if !dropped.is_empty() {
        eprintln!("warning: ignoring repeated values {dropped:?}");
    }
    let cfg = resolve(config, overrides)?;
    let table = sweep::sweep(&cfg, param, &values, seeds, threads_from_env())?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("sweep_{}.csv", param.name()));
    let tmp = out.join(format!(".sweep_{}.csv.tmp-{}", param.name(), std::process::id()));
    fs::write(&tmp, table.to_csv())?;
    fs::rename(&tmp, &path)?;
    print!("{}", table.to_csv());
    eprintln!("wrote {}", path.display());
    Ok(())
}
