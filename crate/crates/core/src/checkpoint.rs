//! Binary model checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"SO"  u16 version  u32 section_count
//! section_count x (u32 tag, u64 offset, u64 length)
//! section payloads
//! ```
//!
//! A tensor is `u32 rank, rank x u64 dim, numel x f64`. Offsets are absolute.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, NaiveModel, SorModel};
use crate::pathway::{AvailabilityMap, LayerMask, SelectionBank, SelectionParams, SelectionSet};
use crate::regulator::{GeneratedWeights, LayerEmbedding, Regulator, RegulatorParams, TaskEmbedding};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 2] = [0x53, 0x4F];
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
enum Section {
    Config = 1,
    Regulator = 2,
    LayerEmbeddings = 3,
    TaskEmbeddings = 4,
    Selections = 5,
    Availability = 6,
    Snapshots = 7,
    Finished = 8,
    DenseWeights = 9,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    seed: u64,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn tensors<'a>(&mut self, ts: impl ExactSizeIterator<Item = &'a Tensor>) {
        self.u32(ts.len() as u32);
        for t in ts {
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("{} section truncated at byte {}", self.section, self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("value exceeds usize".into()))
    }
    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{}: tensor rank {rank}", self.section)));
        }
        (0..rank).map(|_| self.usize()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.shape()?;
        let n = numel(&shape);
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} section has {} trailing bytes",
                self.section,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn encode(sections: Vec<(Section, Vec<u8>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (8 + sections.len() * 20) as u64;
    for (tag, payload) in &sections {
        out.extend_from_slice(&(*tag as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in sections {
        out.extend(payload);
    }
    out
}

fn header_bytes(config: &ModelConfig, seed: u64) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(&Header {
        model: config.clone(),
        seed,
    })?)
}

/// Serializes a model.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    match model {
        Model::Naive(m) => {
            let mut w = Writer::default();
            w.tensors(m.weights.iter());
            Ok(encode(vec![
                (Section::Config, header_bytes(&m.config, 0)?),
                (Section::DenseWeights, w.buf),
            ]))
        }
        Model::Sor(m) => {
            let mut sections = vec![(Section::Config, header_bytes(&m.config, m.seed())?)];

            let mut w = Writer::default();
            w.tensors(m.regulator.params.tensors().iter());
            w.tensor(&Tensor::column(m.regulator.params.head_scales().to_vec()));
            sections.push((Section::Regulator, w.buf));

            let mut w = Writer::default();
            w.tensors(m.regulator.layer_embeddings.iter().map(|e| &e.vector));
            sections.push((Section::LayerEmbeddings, w.buf));

            let mut w = Writer::default();
            w.u32(m.regulator.task_embeddings.len() as u32);
            for (&t, e) in &m.regulator.task_embeddings {
                w.u64(t as u64);
                w.u8(e.frozen as u8);
                w.tensor(&e.vector);
            }
            sections.push((Section::TaskEmbeddings, w.buf));

            let mut w = Writer::default();
            w.u32(m.selections.sets.len() as u32);
            for (&t, s) in &m.selections.sets {
                w.u64(t as u64);
                w.u8(s.frozen as u8);
                w.u32(s.layers.len() as u32);
                for l in &s.layers {
                    w.tensor(&l.a);
                    w.tensor(&l.a_tilde);
                }
            }
            sections.push((Section::Selections, w.buf));

            let mut w = Writer::default();
            w.u32(m.availability.layers.len() as u32);
            for layer in &m.availability.layers {
                w.u32(layer.shape().len() as u32);
                for &d in layer.shape() {
                    w.u64(d as u64);
                }
                for chunk in layer.bits().chunks(8) {
                    let mut byte = 0u8;
                    for (i, &b) in chunk.iter().enumerate() {
                        byte |= (b as u8) << (7 - i);
                    }
                    w.u8(byte);
                }
            }
            sections.push((Section::Availability, w.buf));

            let mut w = Writer::default();
            w.u32(m.snapshots.len() as u32);
            for (&t, s) in &m.snapshots {
                w.u64(t as u64);
                w.tensors(s.layers.iter());
            }
            sections.push((Section::Snapshots, w.buf));

            let mut w = Writer::default();
            w.u32(m.finished.len() as u32);
            for &t in &m.finished {
                w.u64(t as u64);
            }
            sections.push((Section::Finished, w.buf));
            Ok(encode(sections))
        }
    }
}

fn section_table(bytes: &[u8]) -> Result<BTreeMap<u32, &[u8]>> {
    if bytes.len() < 8 || bytes[..2] != MAGIC {
        return Err(Error::Checkpoint("missing SO magic".into()));
    }
    let version = u16::from_le_bytes([bytes[2], bytes[3]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut r = Reader {
        bytes,
        pos: 4,
        section: "header",
    };
    let count = r.u32()? as usize;
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let tag = r.u32()?;
        let offset = r.usize()?;
        let len = r.usize()?;
        let payload = offset
            .checked_add(len)
            .and_then(|end| bytes.get(offset..end))
            .ok_or_else(|| Error::Checkpoint(format!("section {tag} points outside the file")))?;
        if table.insert(tag, payload).is_some() {
            return Err(Error::Checkpoint(format!("section {tag} appears twice")));
        }
    }
    Ok(table)
}

fn reader<'a>(table: &BTreeMap<u32, &'a [u8]>, s: Section, name: &'static str) -> Result<Reader<'a>> {
    let bytes = table
        .get(&(s as u32))
        .ok_or_else(|| Error::Checkpoint(format!("missing {name} section")))?;
    Ok(Reader {
        bytes,
        pos: 0,
        section: name,
    })
}

/// Parses a checkpoint written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let table = section_table(bytes)?;
    let header: Header = serde_json::from_slice(reader(&table, Section::Config, "config")?.bytes)
        .map_err(|e| Error::Checkpoint(format!("config section: {e}")))?;
    let config = header.model;
    config.validate()?;
    let arch = &config.architecture;

    if table.contains_key(&(Section::DenseWeights as u32)) {
        let mut r = reader(&table, Section::DenseWeights, "dense weights")?;
        let weights = r.tensors()?;
        r.finish()?;
        if weights.len() != arch.layers.len()
            || weights.iter().zip(&arch.layers).any(|(w, l)| w.shape() != l.weight_shape())
        {
            return Err(Error::Checkpoint("dense weights do not match the architecture".into()));
        }
        return Ok(Model::Naive(NaiveModel { config, weights }));
    }

    let mut r = reader(&table, Section::Regulator, "regulator")?;
    let tensors = r.tensors()?;
    let scales = r.tensor()?.data().to_vec();
    let params = RegulatorParams::from_parts(tensors, scales, &config.regulator, arch)?;
    r.finish()?;

    let mut r = reader(&table, Section::LayerEmbeddings, "layer embeddings")?;
    let layer_embeddings: Vec<LayerEmbedding> =
        r.tensors()?.into_iter().map(|vector| LayerEmbedding { vector }).collect();
    r.finish()?;
    if layer_embeddings.len() != arch.layers.len() {
        return Err(Error::Checkpoint("layer embedding count mismatch".into()));
    }

    let mut r = reader(&table, Section::TaskEmbeddings, "task embeddings")?;
    let mut task_embeddings = BTreeMap::new();
    for _ in 0..r.u32()? {
        let t = r.usize()?;
        let frozen = r.u8()? != 0;
        let vector = r.tensor()?;
        task_embeddings.insert(t, TaskEmbedding { vector, frozen });
    }
    r.finish()?;

    let mut r = reader(&table, Section::Selections, "selections")?;
    let mut selections = SelectionBank::default();
    for _ in 0..r.u32()? {
        let task = r.usize()?;
        let frozen = r.u8()? != 0;
        let n = r.u32()? as usize;
        let layers = (0..n)
            .map(|_| {
                Ok(SelectionParams {
                    a: r.tensor()?,
                    a_tilde: r.tensor()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        selections.sets.insert(task, SelectionSet { task, layers, frozen });
    }
    r.finish()?;

    let mut r = reader(&table, Section::Availability, "availability")?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let shape = r.shape()?;
        let count = numel(&shape);
        let packed = r.take(count.div_ceil(8))?;
        let bits = (0..count).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        layers.push(LayerMask::new(shape, bits)?);
    }
    r.finish()?;
    let availability = AvailabilityMap { layers };

    let mut r = reader(&table, Section::Snapshots, "snapshots")?;
    let mut snapshots = BTreeMap::new();
    for _ in 0..r.u32()? {
        let task = r.usize()?;
        snapshots.insert(
            task,
            GeneratedWeights {
                task,
                layers: r.tensors()?,
            },
        );
    }
    r.finish()?;

    let mut r = reader(&table, Section::Finished, "finished")?;
    let finished = (0..r.u32()?).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let regulator = Regulator {
        config: config.regulator.clone(),
        params,
        layer_embeddings,
        task_embeddings,
    };
    Ok(Model::Sor(Box::new(SorModel::from_parts(
        config,
        regulator,
        selections,
        availability,
        snapshots,
        finished,
        header.seed,
    ))))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
