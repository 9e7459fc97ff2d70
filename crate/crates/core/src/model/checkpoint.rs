//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `b"HDRF"`, `u32` version, `u32` byte length of a JSON [`CheckpointMeta`]
//! block and the block itself, `u32` tensor count, then per tensor a `u32`
//! rank, `rank` x `u64` dims and the `f64` data. Tensors follow
//! [`ModelBundle::tensors`] order: coarse field, fine field, tone mapper; each
//! field layer contributes weight then bias.

use super::{ModelBundle, ModelConfig};
use crate::autodiff::Tensor;
use crate::io::atomic_write;
use crate::render::{RenderSettings, SceneFrame};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HDRF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub frame: SceneFrame,
    pub render: RenderSettings,
    pub step: u64,
    pub seed: u64,
    /// Dataset the model was trained on, if any.
    pub data_dir: Option<String>,
}

pub fn encode_checkpoint(meta: &CheckpointMeta, bundle: &ModelBundle) -> Result<Vec<u8>> {
    if meta.model != bundle.config {
        return Err(Error::Input("checkpoint config does not match the bundle".into()));
    }
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + bundle.parameter_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let tensors = bundle.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, ModelBundle)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint config block: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank} is implausible")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflows".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
    }
    let bundle = ModelBundle::from_tensors(meta.model, tensors)
        .map_err(|e| Error::Format(format!("checkpoint tensors: {e}")))?;
    Ok((meta, bundle))
}

pub fn write_checkpoint(path: &Path, meta: &CheckpointMeta, bundle: &ModelBundle) -> Result<()> {
    atomic_write(path, &encode_checkpoint(meta, bundle)?)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, ModelBundle)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
