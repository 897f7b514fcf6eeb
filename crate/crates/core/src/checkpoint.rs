//! Binary checkpoints of model weights, optimizer moments and run state.
//!
//! Layout (little endian): magic `HYBSCKPT`, `u32` version, `u32` metadata
//! length and JSON metadata, `u32` record count, then per record `u32` name
//! length, UTF-8 name, `u8` dtype (0 = f32), `u8` rank, `u32` dims and the
//! `f32` payload. A CRC32 of everything before it closes the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{HybSens, ModelConfig};
use crate::nn::{Module, ParamList};
use crate::optim::{AdamW, AdamWConfig, Moments};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HYBSCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Completed training steps.
    pub step: u64,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Option<OptimizerMeta>,
    /// Free-form run settings (training configuration and the like).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamWConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    /// Snapshot of `model` and, when given, the optimizer state.
    pub fn capture(model: &HybSens<f32>, optimizer: Option<&AdamW<f32>>, step: u64, seed: u64) -> Self {
        let mut tensors: Vec<TensorRecord> = model
            .params()
            .into_iter()
            .map(|(name, t)| TensorRecord { dims: t.dims().to_vec(), data: t.to_vec(), name })
            .collect();
        let mut optim_meta = None;
        if let Some(opt) = optimizer {
            optim_meta = Some(OptimizerMeta { config: opt.cfg, step: opt.step });
            for (name, mo) in opt.names.iter().zip(&opt.moments) {
                let dims = vec![mo.m.len()];
                tensors.push(TensorRecord { name: format!("{M_PREFIX}{name}"), dims: dims.clone(), data: mo.m.clone() });
                tensors.push(TensorRecord { name: format!("{V_PREFIX}{name}"), dims, data: mo.v.clone() });
            }
        }
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config().clone(),
                step,
                seed,
                optimizer: optim_meta,
                extra: serde_json::Value::Null,
            },
            tensors,
        }
    }

    fn find(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored weights into `params`, which must match by name and size.
    pub fn load_params(&self, params: &ParamList<f32>) -> Result<()> {
        for (name, t) in params {
            let rec = self.find(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if rec.data.len() != t.numel() || rec.dims.iter().product::<usize>() != t.numel() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has {} values in the checkpoint, the model expects {}",
                    rec.data.len(),
                    t.numel()
                )));
            }
            t.set_values(&rec.data)?;
        }
        let stored = self.tensors.iter().filter(|t| !t.name.starts_with("adam.")).count();
        if stored != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {stored} parameters, the model has {}",
                params.len()
            )));
        }
        Ok(())
    }

    /// Rebuilds the network described by the metadata and loads its weights.
    pub fn model(&self) -> Result<HybSens<f32>> {
        let model = HybSens::new(&self.meta.model, self.meta.seed)?;
        self.load_params(&model.params())?;
        Ok(model)
    }

    /// Restores the optimizer state for `params`, if one was saved.
    pub fn optimizer(&self, params: &ParamList<f32>) -> Result<Option<AdamW<f32>>> {
        let Some(om) = self.meta.optimizer else { return Ok(None) };
        let mut opt = AdamW::new(params, om.config)?;
        opt.step = om.step;
        for (name, mo) in opt.names.iter().zip(opt.moments.iter_mut()) {
            let get = |prefix: &str| -> Result<Vec<f32>> {
                let rec = self
                    .find(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for `{name}`")))?;
                if rec.data.len() != mo.m.len() {
                    return Err(Error::Checkpoint(format!("optimizer state for `{name}` has the wrong size")));
                }
                Ok(rec.data.clone())
            };
            *mo = Moments { m: get(M_PREFIX)?, v: get(V_PREFIX)? };
        }
        Ok(Some(opt))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_len(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        put_len(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("record `{}` has inconsistent dims", t.name)));
            }
            put_len(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(u8::try_from(t.dims.len()).map_err(|_| Error::Checkpoint("rank above 255".into()))?);
            for &d in &t.dims {
                put_len(&mut out, d)?;
            }
            out.reserve(4 * t.data.len());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("record `{name}` has unknown dtype {dtype}")));
            }
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(TensorRecord { name, dims, data });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last record".into()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes through a temporary file and a rename, so an interrupted save
    /// never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_len(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
