//! Binary checkpoint format.
//!
//! ```text
//! "ESGB" | version u32 | meta_len u32 | meta JSON | tensor_count u32 |
//!   per tensor: name_len u32 | name | dtype u8 | rank u32 | dims u64 * rank | f32 payload
//! ```
//! All integers and floats are little-endian. Parameters are held in f64 in
//! memory and stored as f32, so a set that has been passed through
//! [`ParameterSet::round_to_f32`] round-trips bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{ModelConfig, ParameterSet, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ESGB";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Freshly initialised, never trained.
    Initial,
    Pretrained,
    FinetunedA,
    FinetunedB,
}

impl Stage {
    pub fn is_finetuned(self) -> bool {
        matches!(self, Stage::FinetunedA | Stage::FinetunedB)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub stage: Stage,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterSet,
}

pub fn to_bytes(params: &ParameterSet, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    params
        .check_shapes(&meta.config)
        .map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    params.check_finite()?;
    let meta_json = serde_json::to_vec(meta)?;
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(64 + meta_json.len() + params.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let mut c = Cursor { buf, pos: 4 };
    let version = c.u32("version")?;
    if version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::CorruptCheckpoint("format version 0".into()));
    }
    let meta_len = c.u32("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(meta_len, "metadata")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    meta.config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
    let expected = ParameterSet::zeros(&meta.config);
    let expected = expected.tensors();
    let count = c.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{count} tensors stored, config implies {}",
            expected.len()
        )));
    }
    let mut named = Vec::with_capacity(count);
    for (want_name, want) in &expected {
        let name_len = c.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if &name != want_name {
            return Err(Error::CorruptCheckpoint(format!("expected tensor {want_name}, found {name}")));
        }
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::CorruptCheckpoint(format!("tensor {name}: unknown dtype {dtype}")));
        }
        let rank = c.u32("rank")? as usize;
        if rank != want.ndim() {
            return Err(Error::CorruptCheckpoint(format!("tensor {name}: rank {rank}, expected {}", want.ndim())));
        }
        let dims = (0..rank)
            .map(|_| c.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != want.shape() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name}: dims {dims:?}, config implies {:?}",
                want.shape()
            )));
        }
        let n: usize = dims.iter().product();
        let payload = c.take(n * 4, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        named.push((name, dims, data));
    }
    if c.pos != buf.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let params = ParameterSet::from_named(&meta.config, named).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(params: &ParameterSet, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = to_bytes(params, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}
