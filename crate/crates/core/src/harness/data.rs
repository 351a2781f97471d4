//! Task sequences: a seeded synthetic generator and file-backed image sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regulator::TaskId;
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

/// Features `[n, dim]` in `[0, 1]` with dense labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// One task: its global class ids and train/test splits with local labels.
#[derive(Debug)]
pub struct TaskData {
    pub id: TaskId,
    /// Global class id of each local label.
    pub classes: Vec<usize>,
    train: Dataset,
    pub test: Dataset,
    train_reads: AtomicUsize,
}

impl TaskData {
    pub fn new(id: TaskId, classes: Vec<usize>, train: Dataset, test: Dataset) -> Self {
        Self {
            id,
            classes,
            train,
            test,
            train_reads: AtomicUsize::new(0),
        }
    }

    /// Training split. Every call is counted for the data-access audit.
    pub fn train(&self) -> &Dataset {
        self.train_reads.fetch_add(1, Ordering::Relaxed);
        &self.train
    }

    pub fn train_reads(&self) -> usize {
        self.train_reads.load(Ordering::Relaxed)
    }
}

impl Clone for TaskData {
    fn clone(&self) -> Self {
        Self::new(self.id, self.classes.clone(), self.train.clone(), self.test.clone())
    }
}

#[derive(Clone, Debug)]
pub struct TaskSequence {
    pub tasks: Vec<TaskData>,
    /// Tasks share classes and differ in input domain.
    pub domain_incremental: bool,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn classes_per_task(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).max().unwrap_or(0)
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskData> {
        self.tasks.iter().find(|t| t.id == id).ok_or(Error::UnknownTask(id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    /// Distance between any two class means of a task.
    pub separation: f64,
    /// Per-coordinate std of each cluster.
    pub noise: f64,
    /// Class means of every task lie in one shared subspace of this size, so
    /// later tasks reuse the directions earlier tasks depend on.
    pub subspace_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_tasks: 5,
            classes_per_task: 2,
            dim: 64,
            separation: 1.0,
            noise: 0.15,
            subspace_dim: 2,
            train_per_class: 100,
            test_per_class: 50,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::config("data.n_tasks", "must be positive"));
        }
        if self.classes_per_task < 2 {
            return Err(Error::config("data.classes_per_task", "needs at least 2 classes"));
        }
        if self.subspace_dim < self.classes_per_task || self.subspace_dim > self.dim {
            return Err(Error::config(
                "data.subspace_dim",
                "must lie between classes_per_task and dim",
            ));
        }
        if !(self.separation > 0.0) {
            return Err(Error::config("data.separation", "must be positive"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("data.noise", "must be non-negative"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("data.train_per_class", "splits must be non-empty"));
        }
        Ok(())
    }
}

/// Gram-Schmidt on Gaussian draws: `k` orthonormal vectors of length `n`.
fn orthonormal(k: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Gaussian clusters around `0.5` in `[0, 1]^dim`, one disjoint pair (or
/// group) of classes per task. Class means of a task sit at
/// `0.5 + separation / sqrt(2) * v_k` for orthonormal `v_k` drawn inside a
/// shared subspace.
pub fn make_synthetic_tasks(cfg: &SyntheticConfig, seed: u64) -> Result<TaskSequence> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, Stream::Data, &[]);
    let subspace = orthonormal(cfg.subspace_dim, cfg.dim, &mut rng);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::config("data.noise", e.to_string()))?;
    let radius = cfg.separation / 2f64.sqrt();
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    for t in 0..cfg.n_tasks {
        let coords = orthonormal(cfg.classes_per_task, cfg.subspace_dim, &mut rng);
        let means: Vec<Vec<f64>> = coords
            .iter()
            .map(|c| {
                (0..cfg.dim)
                    .map(|i| 0.5 + radius * c.iter().zip(&subspace).map(|(w, b)| w * b[i]).sum::<f64>())
                    .collect()
            })
            .collect();
        let mut split = |per_class: usize| -> Result<Dataset> {
            let mut order: Vec<usize> = (0..per_class * means.len()).map(|i| i % means.len()).collect();
            order.shuffle(&mut rng);
            let mut data = Vec::with_capacity(order.len() * cfg.dim);
            for &k in &order {
                data.extend(means[k].iter().map(|m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            }
            Dataset::new(Tensor::new(vec![order.len(), cfg.dim], data)?, order)
        };
        let train = split(cfg.train_per_class)?;
        let test = split(cfg.test_per_class)?;
        let classes = (0..cfg.classes_per_task).map(|k| t * cfg.classes_per_task + k).collect();
        tasks.push(TaskData::new(t, classes, train, test));
    }
    Ok(TaskSequence {
        tasks,
        domain_incremental: false,
    })
}

fn malformed(path: &Path, location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        location: location.into(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| malformed(path, format!("byte {offset}"), "truncated header"))
}

/// Reads an IDX image file (`u8`, magic `0x00000803`) and its label file
/// (`u8`, magic `0x00000801`). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    let magic = be_u32(&img, 0, images)?;
    if magic != 0x0000_0803 {
        return Err(malformed(images, "byte 0", format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let dim = rows * cols;
    if img.len() != 16 + n * dim {
        return Err(malformed(
            images,
            format!("byte {}", img.len().min(16 + n * dim)),
            format!("expected {} pixel bytes, found {}", n * dim, img.len().saturating_sub(16)),
        ));
    }
    let lmagic = be_u32(&lab, 0, labels)?;
    if lmagic != 0x0000_0801 {
        return Err(malformed(labels, "byte 0", format!("bad magic {lmagic:#010x}")));
    }
    let ln = be_u32(&lab, 4, labels)? as usize;
    if ln != n || lab.len() != 8 + n {
        return Err(malformed(
            labels,
            "byte 4",
            format!("{ln} labels declared, {} present, {n} images", lab.len().saturating_sub(8)),
        ));
    }
    let data = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels = lab[8..].iter().map(|&b| b as usize).collect();
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels)
}

/// Reads a CSV with a header row; the first column is the label and the rest
/// are pixel intensities in `0..=255`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(malformed(path, "row 1", "need a label column and at least one feature"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != width {
            return Err(malformed(
                path,
                format!("row {row}"),
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| malformed(path, format!("row {row}"), "label is not a class id"))?;
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("row {row}"), format!("bad pixel `{field}`")))?;
            if !(0.0..=255.0).contains(&v) {
                return Err(malformed(path, format!("row {row}"), "pixel outside 0..=255"));
            }
            data.push(v / 255.0);
        }
        labels.push(label);
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, width - 1], data)?, labels)
}

/// Assignment of global class ids to tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub tasks: Vec<Vec<usize>>,
    #[serde(default)]
    pub domain_incremental: bool,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            malformed(path, e.path().to_string(), e.inner().to_string())
        })
    }

    /// Splits datasets into tasks with local labels.
    pub fn apply(&self, train: &Dataset, test: &Dataset) -> Result<TaskSequence> {
        let present: std::collections::BTreeSet<usize> =
            train.labels.iter().chain(&test.labels).copied().collect();
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for (t, classes) in self.tasks.iter().enumerate() {
            for &c in classes {
                if !present.contains(&c) {
                    return Err(Error::AbsentClass { class: c });
                }
            }
            let local: BTreeMap<usize, usize> =
                classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let pick = |d: &Dataset| -> Result<Dataset> {
                let idx: Vec<usize> = (0..d.len()).filter(|&i| local.contains_key(&d.labels[i])).collect();
                let (x, y) = d.batch(&idx);
                Dataset::new(x, y.into_iter().map(|c| local[&c]).collect())
            };
            let tr = pick(train)?;
            if tr.is_empty() {
                return Err(Error::EmptyDataset(t));
            }
            tasks.push(TaskData::new(t, classes.clone(), tr, pick(test)?));
        }
        Ok(TaskSequence {
            tasks,
            domain_incremental: self.domain_incremental,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nearest-class-mean classifier fitted on train, scored on test.
    fn linear_probe(task: &TaskData) -> f64 {
        let train = task.train();
        let k = task.classes.len();
        let d = train.dim();
        let mut means = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &y) in train.labels.iter().enumerate() {
            counts[y] += 1;
            for j in 0..d {
                means[y][j] += train.features.data()[i * d + j];
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let test = &task.test;
        let correct = (0..test.len())
            .filter(|&i| {
                let x = &test.features.data()[i * d..(i + 1) * d];
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == test.labels[i]
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn well_separated_tasks_are_linearly_separable() {
        let cfg = SyntheticConfig {
            separation: 1.0,
            noise: 0.05,
            ..SyntheticConfig::default()
        };
        let seq = make_synthetic_tasks(&cfg, 3).unwrap();
        for t in &seq.tasks {
            assert!(linear_probe(t) > 0.99, "task {}", t.id);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_tasks(&cfg, 9).unwrap();
        let b = make_synthetic_tasks(&cfg, 9).unwrap();
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_eq!(x.train(), y.train());
            assert_eq!(x.test, y.test);
        }
        let c = make_synthetic_tasks(&cfg, 10).unwrap();
        assert_ne!(a.tasks[0].test, c.tasks[0].test);
    }

    #[test]
    fn disjoint_global_classes() {
        let seq = make_synthetic_tasks(&SyntheticConfig::default(), 1).unwrap();
        let all: std::collections::BTreeSet<usize> =
            seq.tasks.iter().flat_map(|t| t.classes.clone()).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all.into_iter().max(), Some(9));
    }

    #[test]
    fn features_in_unit_interval_and_balanced() {
        let seq = make_synthetic_tasks(&SyntheticConfig::default(), 2).unwrap();
        for t in &seq.tasks {
            let train = t.train();
            assert!(train.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let ones = train.labels.iter().filter(|&&y| y == 1).count();
            assert_eq!(ones * 2, train.len());
        }
    }

    #[test]
    fn train_reads_are_counted() {
        let seq = make_synthetic_tasks(&SyntheticConfig::default(), 2).unwrap();
        assert_eq!(seq.tasks[0].train_reads(), 0);
        let _ = seq.tasks[0].train();
        let _ = &seq.tasks[0].test;
        assert_eq!(seq.tasks[0].train_reads(), 1);
    }

    #[test]
    fn invalid_dims_rejected() {
        let cfg = SyntheticConfig {
            subspace_dim: 1,
            ..SyntheticConfig::default()
        };
        assert!(make_synthetic_tasks(&cfg, 0).is_err());
        let cfg = SyntheticConfig {
            separation: 0.0,
            ..SyntheticConfig::default()
        };
        assert!(make_synthetic_tasks(&cfg, 0).is_err());
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        let pixels: [u8; 16] = [0, 255, 51, 102, 10, 20, 30, 40, 255, 255, 0, 0, 1, 2, 3, 4];
        img.extend_from_slice(&pixels);
        let mut lab = vec![0, 0, 8, 1, 0, 0, 0, 4];
        lab.extend_from_slice(&[3, 1, 4, 1]);
        std::fs::write(dir.path().join("img"), &img).unwrap();
        std::fs::write(dir.path().join("lab"), &lab).unwrap();
        let d = load_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        assert_eq!(d.features.shape(), &[4, 4]);
        assert_eq!(d.labels, vec![3, 1, 4, 1]);
        for (v, &p) in d.features.data().iter().zip(&pixels) {
            assert_eq!(*v, p as f64 / 255.0);
        }
        assert_eq!(d.features.data()[1], 1.0);
        assert_eq!(d.features.data()[2], 0.2);

        std::fs::write(dir.path().join("short"), &img[..20]).unwrap();
        let err = load_idx(&dir.path().join("short"), &dir.path().join("lab")).unwrap_err();
        assert!(err.to_string().contains("byte"), "{err}");
    }

    #[test]
    fn csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "label,p0,p1\n1,0,255\n0,51,0\n").unwrap();
        let d = load_csv(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features.data(), &[0.0, 1.0, 0.2, 0.0]);
        std::fs::write(&p, "label,p0,p1\n1,0,255\n0,51,x\n").unwrap();
        let err = load_csv(&p).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn manifest_with_absent_class() {
        let d = Dataset::new(Tensor::zeros(&[3, 2]), vec![0, 1, 2]).unwrap();
        let m = SplitManifest {
            tasks: vec![vec![0, 1], vec![2, 7]],
            domain_incremental: false,
        };
        assert!(matches!(m.apply(&d, &d), Err(Error::AbsentClass { class: 7 })));
        let ok = SplitManifest {
            tasks: vec![vec![2, 0]],
            domain_incremental: false,
        };
        let seq = ok.apply(&d, &d).unwrap();
        assert_eq!(seq.tasks[0].test.labels, vec![1, 0]);
    }
}
