//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"SPQA"`, `u16` version, `u32` metadata length + JSON metadata,
//! `u32` tensor count, then per tensor a `u32`-prefixed UTF-8 name, `u32`
//! rank, `u32` dims and a `u64` byte offset into the payload, and finally
//! the payload of raw `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::WindowConfig;

use super::model::EncoderConfig;
use super::EncoderError;

pub const MAGIC: &[u8; 4] = b"SPQA";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    /// Every encoder tensor.
    Full,
    /// Adapter matrices and span heads only; needs the matching base.
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub rank: usize,
    pub dropout: f64,
    /// SHA-256 of the base checkpoint's tensors.
    pub base_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    pub window: WindowConfig,
    pub vocab: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub adapter: Option<AdapterMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

/// SHA-256 over names, shapes and little-endian values, in order.
pub fn tensor_hash<'a, I>(tensors: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
{
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u32).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_store(meta: CheckpointMeta, store: &ParamStore<f32>, ids: &[crate::numerics::ParamId]) -> Self {
        let tensors = ids
            .iter()
            .map(|&id| {
                let t = store.get(id);
                let mut copy = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
                copy.requires_grad = t.requires_grad;
                (store.name(id).to_string(), copy)
            })
            .collect();
        Self { meta, tensors }
    }

    pub fn hash(&self) -> String {
        tensor_hash(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EncoderError> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EncoderError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(EncoderError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| EncoderError::Checkpoint(format!("bad metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| EncoderError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let offset = r.u64()?;
            manifest.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, shape, offset) in manifest {
            let n: usize = shape.iter().product();
            let start = usize::try_from(offset).map_err(|_| EncoderError::Checkpoint("offset overflow".into()))?;
            let end = start
                .checked_add(4 * n)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| EncoderError::Checkpoint(format!("tensor {name} runs past the payload")))?;
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| EncoderError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&bytes)
            .map_err(|e| EncoderError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| EncoderError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EncoderError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EncoderError::Checkpoint("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EncoderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EncoderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
