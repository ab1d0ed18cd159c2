//! Binary parameter blobs with a JSON sidecar.
//!
//! Blob layout, all little-endian:
//!
//! ```text
//! b"HIEKGE01"
//! u32 tensor count
//! per tensor: u32 rank, rank x u32 dims, prod(dims) x f64 row-major data
//! ```
//!
//! The sidecar sits next to the blob with the extension `json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::MetricBundle;
use crate::hie::HieConfig;
use crate::model::{KgeModel, Model, ModelKind, TensorSpec};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"HIEKGE01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_kind: ModelKind,
    pub hie: HieConfig,
    pub train: TrainConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    pub step: usize,
    pub seed: u64,
    pub tensors: Vec<TensorSpec>,
    #[serde(default)]
    pub metrics: Option<MetricBundle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// `(shape, data)` per tensor in model order.
    pub tensors: Vec<(Vec<usize>, Vec<f64>)>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_tensors<'a, I>(tensors: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a [usize], &'a [f64])>,
    I::IntoIter: ExactSizeIterator,
{
    let tensors = tensors.into_iter();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (shape, data) in tensors {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let head = &bytes[..bytes.len().min(MAGIC.len())];
    if head != &MAGIC[..head.len()] {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(MAGIC.len(), "magic")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.saturating_mul(8), &format!("tensor {i} data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::DimMismatch(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn save_checkpoint<M: KgeModel + ?Sized>(model: &M, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let specs = model.tensor_specs();
    let tensors = model.tensors();
    let blob = encode_tensors(specs.iter().map(|s| s.shape.as_slice()).zip(tensors));
    fs::write(path, blob).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let tensors = decode_tensors(&bytes)?;
    if tensors.len() != meta.tensors.len() {
        return Err(Error::DimMismatch(format!(
            "metadata lists {} tensors, blob holds {}",
            meta.tensors.len(),
            tensors.len()
        )));
    }
    for (spec, (shape, _)) in meta.tensors.iter().zip(&tensors) {
        if &spec.shape != shape {
            return Err(Error::DimMismatch(format!(
                "tensor {}: metadata shape {:?}, blob shape {:?}",
                spec.name, spec.shape, shape
            )));
        }
    }
    Ok(Checkpoint { meta, tensors })
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::init(
            self.meta.model_kind,
            self.meta.num_entities,
            self.meta.num_relations,
            &self.meta.hie,
            self.meta.seed,
        )?;
        model.load_tensors(&self.tensors)?;
        Ok(model)
    }
}
