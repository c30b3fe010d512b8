//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PROBOUT\0" | version u32
//! config JSON   (u64 length + UTF-8)
//! epoch u64 | seed u64
//! schedule JSON (u64 length + UTF-8, `null` when absent)
//! metadata JSON (u64 length + UTF-8)
//! tensor count u32, then per tensor: ndim u32, dims u64 each, f32 values
//! ```

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::network::{LayerParams, Model, ModelConfig, Parameters};
use crate::numerics::Tensor;
use crate::training::LambdaSchedule;

pub const MAGIC: &[u8; 8] = b"PROBOUT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
    /// Epochs trained so far.
    pub epoch: u64,
    pub seed: u64,
    pub schedule: Option<LambdaSchedule>,
    /// Free-form provenance (data source, preprocessing settings, ...).
    pub meta: Value,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model<f32>> {
        Model::new(self.config.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_blob(&mut out, &serde_json::to_vec(&self.config)?);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_blob(&mut out, &serde_json::to_vec(&self.schedule)?);
        put_blob(&mut out, &serde_json::to_vec(&self.meta)?);
        let tensors: Vec<&Tensor<f32>> = self.params.tensors().collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let config: ModelConfig = serde_json::from_slice(r.blob()?)?;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let schedule: Option<LambdaSchedule> = serde_json::from_slice(r.blob()?)?;
        let meta: Value = serde_json::from_slice(r.blob()?)?;
        let count = r.u32()? as usize;
        if count % 2 != 0 {
            return Err(Error::Format(format!("odd tensor count {count}")));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().and_then(|d| usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(count / 2);
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            layers.push(LayerParams { weight, bias });
        }
        let params = Parameters { layers };
        // Reject parameters that do not fit the stored configuration.
        Model::new(config.clone(), params.clone())?;
        Ok(Self {
            config,
            params,
            epoch,
            seed,
            schedule,
            meta,
        })
    }
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(blob);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))?;
        self.take(n)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    super::write_atomic(path, &ckpt.encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::decode(&std::fs::read(path)?)
}
