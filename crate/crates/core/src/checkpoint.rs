//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "CAER" | version u32 | variant u8 | classes u32 | tensor count u32
//! per tensor: name length u32 | UTF-8 name | rank u32 | rank × extent u32 | f32 data
//! step u64
//! ```
//!
//! Learnable tensors and batch-norm running statistics are stored in traversal
//! order. Ablation flags are implied by which tensors are present.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::model::{AblationFlags, ModelParams};
use crate::params::{entries, entries_mut};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CAER";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded file contents before they are matched against an architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub classes: usize,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub step: u64,
}

impl Checkpoint {
    pub fn flags(&self) -> AblationFlags {
        let has = |prefix: &str| self.tensors.iter().any(|(n, _)| n.starts_with(prefix));
        AblationFlags {
            face: has("face."),
            context: has("context."),
            context_attention: has("context.attention."),
            fusion_attention: has("fusion.face_gate."),
        }
    }
}

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let list = entries(params);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(params.variant().code());
    buf.extend_from_slice(&(params.classes() as u32).to_le_bytes());
    buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
    for (name, _, t) in list {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&params.step.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CheckpointFormat(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CheckpointFormat("bad magic (not a CAER checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported format version {version}")));
    }
    let code = r.take(1, "variant")?[0];
    let variant = Variant::from_code(code)
        .ok_or_else(|| Error::CheckpointFormat(format!("unknown variant code {code}")))?;
    let classes = r.u32("class count")? as usize;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(Error::CheckpointFormat(format!("tensor {name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(|| {
            Error::CheckpointFormat(format!("tensor {name}: shape {shape:?} overflows"))
        })?;
        let raw = r.take(numel.checked_mul(4).unwrap_or(usize::MAX), &format!("data of {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| Error::CheckpointFormat(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    let step = u64::from_le_bytes(r.take(8, "step counter")?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(Error::CheckpointFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { variant, classes, tensors, step })
}

/// Matches decoded tensors against the architecture `config` describes.
/// Nothing is reshaped; the first mismatching tensor is reported by name.
pub fn into_params(ckpt: Checkpoint, config: &ModelConfig) -> Result<ModelParams<f32>> {
    if ckpt.classes != config.arch.classes {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint has {} classes, expected {}",
            ckpt.classes, config.arch.classes
        )));
    }
    let flags = ckpt.flags();
    let mut params = ModelParams::<f32>::zeros(config, flags)
        .map_err(|e| Error::CheckpointFormat(format!("cannot build architecture: {e}")))?;
    let slots = entries_mut(&mut params);
    if slots.len() != ckpt.tensors.len() {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint has {} tensors, architecture {} expects {}",
            ckpt.tensors.len(),
            flags,
            slots.len()
        )));
    }
    for ((name, _, slot), (got_name, got)) in slots.into_iter().zip(ckpt.tensors) {
        if name != got_name {
            return Err(Error::CheckpointFormat(format!(
                "expected tensor {name}, found {got_name}"
            )));
        }
        if slot.shape() != got.shape() {
            return Err(Error::CheckpointFormat(format!(
                "shape mismatch for tensor {name}: checkpoint {:?}, {} architecture {:?}",
                got.shape(),
                config.variant,
                slot.shape()
            )));
        }
        *slot = got;
    }
    if ckpt.variant != config.variant {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint is a {} model, expected {}",
            ckpt.variant, config.variant
        )));
    }
    params.step = ckpt.step;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(params))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ModelParams<f32>> {
    into_params(decode(&fs::read(path)?)?, config)
}

/// Reads a checkpoint without knowing its architecture in advance.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
