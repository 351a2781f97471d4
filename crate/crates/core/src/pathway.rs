//! Per-task synapse selection.
//!
//! Every task owns a pair `(a, a_tilde)` per synapse. A synapse is part of the
//! task's pathway when `a >= a_tilde` and the synapse is still available.
//! Masks are always recomputed from these parameters; dumps are only a cache
//! for inspection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::regulator::{GeneratedWeights, TaskId};
use crate::spiking::Architecture;
use crate::tensor::{numel, Tensor};

/// Binary tensor with the shape of one layer's weights.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl LayerMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if numel(&shape) != bits.len() {
            return Err(Error::BadLength {
                expected: numel(&shape),
                actual: bits.len(),
                shape,
            });
        }
        Ok(Self { shape, bits })
    }

    pub fn filled(shape: &[usize], value: bool) -> Self {
        Self {
            shape: shape.to_vec(),
            bits: vec![value; numel(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape")
    }

    /// Row-major bits packed most-significant-bit first, hex encoded.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.bits.len() / 4 + 2);
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                if b {
                    byte |= 0x80 >> i;
                }
            }
            write!(out, "{byte:02x}").expect("write to string");
        }
        out
    }

    pub fn from_hex(shape: Vec<usize>, hex: &str) -> Option<Self> {
        let n = numel(&shape);
        if hex.len() != n.div_ceil(8) * 2 {
            return None;
        }
        let mut bits = Vec::with_capacity(n);
        for i in 0..n.div_ceil(8) {
            let byte = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
            for j in 0..8 {
                if bits.len() < n {
                    bits.push(byte & (0x80 >> j) != 0);
                }
            }
        }
        Some(Self { shape, bits })
    }
}

fn check_same(op: &'static str, a: &LayerMask, b: &LayerMask) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

/// Per-layer binary pathway of one task.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathwayMask {
    pub task: TaskId,
    pub layers: Vec<LayerMask>,
}

impl PathwayMask {
    pub fn active(&self) -> usize {
        self.layers.iter().map(LayerMask::count).sum()
    }

    pub fn size(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    pub fn active_fraction(&self) -> f64 {
        if self.size() == 0 {
            0.0
        } else {
            self.active() as f64 / self.size() as f64
        }
    }

    /// Writes one tab-separated record per layer:
    /// `layer  shape  active  bitmap`.
    pub fn write_dump(&self, names: &[String], mut w: impl Write) -> Result<()> {
        writeln!(w, "layer\tshape\tactive\tbitmap")?;
        for (layer, name) in self.layers.iter().zip(names) {
            let shape = layer
                .shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            writeln!(w, "{name}\t{shape}\t{}\t{}", layer.count(), layer.to_hex())?;
        }
        Ok(())
    }

    /// Parses a dump written by [`PathwayMask::write_dump`]. Returns layer
    /// names alongside the mask.
    pub fn read_dump(task: TaskId, path: &str, r: impl BufRead) -> Result<(Vec<String>, Self)> {
        let bad = |line: usize, reason: &str| Error::Malformed {
            path: path.to_string(),
            location: format!("line {line}"),
            reason: reason.to_string(),
        };
        let mut names = Vec::new();
        let mut layers = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line != "layer\tshape\tactive\tbitmap" {
                    return Err(bad(1, "unexpected header"));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(i + 1, "expected 4 tab-separated fields"));
            }
            let shape = fields[1]
                .split('x')
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(i + 1, "bad shape"))?;
            let active: usize = fields[2].parse().map_err(|_| bad(i + 1, "bad active count"))?;
            let mask = LayerMask::from_hex(shape, fields[3]).ok_or_else(|| bad(i + 1, "bad bitmap"))?;
            if mask.count() != active {
                return Err(bad(i + 1, "active count disagrees with bitmap"));
            }
            names.push(fields[0].to_string());
            layers.push(mask);
        }
        Ok((names, Self { task, layers }))
    }
}

/// Which synapses may still be used by any task. Injuries only clear bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvailabilityMap {
    pub layers: Vec<LayerMask>,
}

impl AvailabilityMap {
    pub fn full(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layers
                .iter()
                .map(|l| LayerMask::filled(&l.weight_shape(), true))
                .collect(),
        }
    }

    pub fn available(&self) -> usize {
        self.layers.iter().map(LayerMask::count).sum()
    }
}

/// Selection parameters of one layer for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionParams {
    pub a: Tensor,
    pub a_tilde: Tensor,
}

impl SelectionParams {
    pub fn mask(&self, avail: &LayerMask) -> Result<LayerMask> {
        if self.a.shape() != avail.shape() || self.a_tilde.shape() != avail.shape() {
            return Err(Error::ShapeMismatch {
                op: "select_pathway",
                lhs: self.a.shape().to_vec(),
                rhs: avail.shape().to_vec(),
            });
        }
        let bits = self
            .a
            .data()
            .iter()
            .zip(self.a_tilde.data())
            .zip(avail.bits())
            .map(|((a, t), &ok)| ok && a >= t)
            .collect();
        LayerMask::new(avail.shape().to_vec(), bits)
    }
}

/// All selection parameters of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSet {
    pub task: TaskId,
    pub layers: Vec<SelectionParams>,
    pub frozen: bool,
}

impl SelectionSet {
    /// `a, a_tilde ~ 0.5 + N(0, init_std^2)` for every synapse.
    pub fn random(task: TaskId, arch: &Architecture, seed: u64, init_std: f64) -> Result<Self> {
        let normal = Normal::new(0.5, init_std)
            .map_err(|e| Error::config("model.selection_init_std", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layers
            .iter()
            .map(|l| {
                let shape = l.weight_shape();
                let a = Tensor::from_fn(&shape, |_| normal.sample(&mut rng));
                let a_tilde = Tensor::from_fn(&shape, |_| normal.sample(&mut rng));
                SelectionParams { a, a_tilde }
            })
            .collect();
        Ok(Self {
            task,
            layers,
            frozen: false,
        })
    }

    pub fn mask(&self, avail: &AvailabilityMap) -> Result<PathwayMask> {
        if self.layers.len() != avail.layers.len() {
            return Err(Error::MissingPathway(self.layers.len().min(avail.layers.len())));
        }
        let layers = self
            .layers
            .iter()
            .zip(&avail.layers)
            .map(|(s, m)| s.mask(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathwayMask {
            task: self.task,
            layers,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.a.len()).sum()
    }
}

/// Selection parameters of every known task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionBank {
    pub sets: BTreeMap<TaskId, SelectionSet>,
}

impl SelectionBank {
    /// Initializes a task that has no selection parameters yet.
    pub fn new_selection(
        &mut self,
        task: TaskId,
        arch: &Architecture,
        seed: u64,
        init_std: f64,
    ) -> Result<&SelectionSet> {
        if self.sets.contains_key(&task) {
            return Err(Error::DuplicateSelection(task));
        }
        self.reinitialize(task, arch, seed, init_std)
    }

    /// Replaces a task's parameters with a fresh draw (used when re-learning
    /// after an injury). The result is trainable again.
    pub fn reinitialize(
        &mut self,
        task: TaskId,
        arch: &Architecture,
        seed: u64,
        init_std: f64,
    ) -> Result<&SelectionSet> {
        let set = SelectionSet::random(task, arch, seed, init_std)?;
        self.sets.insert(task, set);
        Ok(&self.sets[&task])
    }

    pub fn get(&self, task: TaskId) -> Result<&SelectionSet> {
        self.sets.get(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn get_mut(&mut self, task: TaskId) -> Result<&mut SelectionSet> {
        self.sets.get_mut(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn freeze(&mut self, task: TaskId) -> Result<()> {
        self.get_mut(task)?.frozen = true;
        Ok(())
    }

    pub fn masks(&self, avail: &AvailabilityMap) -> Result<BTreeMap<TaskId, PathwayMask>> {
        self.sets
            .iter()
            .map(|(&t, s)| Ok((t, s.mask(avail)?)))
            .collect()
    }
}

/// Masked weights of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Pathway {
    pub weights: Vec<Tensor>,
    pub mask: PathwayMask,
}

impl Pathway {
    pub fn active(&self) -> usize {
        self.mask.active()
    }

    pub fn active_fraction(&self) -> f64 {
        self.mask.active_fraction()
    }
}

/// `P = W` where the synapse is selected and available, else `0`.
pub fn select_pathway(
    weights: &GeneratedWeights,
    sel: &SelectionSet,
    avail: &AvailabilityMap,
) -> Result<Pathway> {
    let mask = sel.mask(avail)?;
    if weights.layers.len() != mask.layers.len() {
        return Err(Error::MissingPathway(weights.layers.len().min(mask.layers.len())));
    }
    let weights = weights
        .layers
        .iter()
        .zip(&mask.layers)
        .map(|(w, m)| {
            if w.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "select_pathway",
                    lhs: w.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
            let data = w
                .data()
                .iter()
                .zip(m.bits())
                .map(|(&v, &on)| if on { v } else { 0.0 })
                .collect();
            Tensor::new(w.shape().to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pathway { weights, mask })
}

/// Differentiable selection for one layer. Returns `(pathway, mask)`; the mask
/// node carries the straight-through gate gradient, availability carries none.
pub fn select_on_tape(
    tape: &mut Tape,
    weight: Var,
    a: Var,
    a_tilde: Var,
    avail: &LayerMask,
    temperature: f64,
) -> Result<(Var, Var)> {
    let gate = tape.gate(a, a_tilde, temperature)?;
    let avail = tape.constant(avail.to_tensor());
    let mask = tape.mul(gate, avail)?;
    let pathway = tape.mul(weight, mask)?;
    Ok((pathway, mask))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub dot: usize,
    pub jaccard: f64,
}

/// Shared-synapse count and Jaccard index; `0/0` is reported as `0`.
pub fn mask_overlap(m1: &PathwayMask, m2: &PathwayMask) -> Result<Overlap> {
    if m1.layers.len() != m2.layers.len() {
        return Err(Error::ShapeMismatch {
            op: "mask_overlap",
            lhs: vec![m1.layers.len()],
            rhs: vec![m2.layers.len()],
        });
    }
    let (mut dot, mut union) = (0usize, 0usize);
    for (a, b) in m1.layers.iter().zip(&m2.layers) {
        check_same("mask_overlap", a, b)?;
        for (&x, &y) in a.bits().iter().zip(b.bits()) {
            dot += (x && y) as usize;
            union += (x || y) as usize;
        }
    }
    let jaccard = if union == 0 {
        0.0
    } else {
        dot as f64 / union as f64
    };
    Ok(Overlap { dot, jaccard })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjuryOutcome {
    pub availability: AvailabilityMap,
    /// Synapses active only in the target task before the injury.
    pub unique: usize,
    pub cleared: usize,
}

/// Clears `round(fraction * n)` of the synapses that only `target` uses,
/// chosen uniformly under `seed`. Cleared synapses become unavailable to every
/// task.
pub fn injure(
    masks: &BTreeMap<TaskId, PathwayMask>,
    target: TaskId,
    fraction: f64,
    avail: &AvailabilityMap,
    seed: u64,
) -> Result<InjuryOutcome> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("injury.fraction", "must lie in (0, 1]"));
    }
    let target_mask = masks.get(&target).ok_or(Error::UnknownTask(target))?;
    let mut unique = Vec::new();
    for (l, layer) in target_mask.layers.iter().enumerate() {
        for (i, &on) in layer.bits().iter().enumerate() {
            if !on {
                continue;
            }
            let shared = masks
                .iter()
                .filter(|(&t, _)| t != target)
                .any(|(_, m)| m.layers[l].bits()[i]);
            if !shared {
                unique.push((l, i));
            }
        }
    }
    if unique.is_empty() {
        return Err(Error::NoUniqueSynapses(target));
    }
    let count = ((fraction * unique.len() as f64).round() as usize).min(unique.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, unique.len(), count).into_vec();
    picked.sort_unstable();
    let mut availability = avail.clone();
    for k in picked {
        let (l, i) = unique[k];
        availability.layers[l].bits[i] = false;
    }
    Ok(InjuryOutcome {
        availability,
        unique: unique.len(),
        cleared: count,
    })
}
