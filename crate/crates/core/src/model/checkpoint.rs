//! PMCKPT/1 checkpoint files.
//!
//! Layout: magic `PMCKPT\x01`; a length-prefixed (u32 LE) UTF-8 config block
//! holding the key=value run configuration; then repeated tensor records:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), one u32 LE per
//! dimension, payload of f64 LE values in row-major order. A record with
//! name length 0 terminates the file. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;

const MAGIC: &[u8; 6] = b"PMCKPT";
const VERSION: u8 = 1;
/// Record name of the optimizer step counter.
pub const ADAM_STEP_RECORD: &str = "adam.step";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a PMCKPT file")]
    BadMagic,
    #[error("version mismatch: file version {found}, supported {supported}")]
    VersionMismatch { found: u8, supported: u8 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Raw contents of a checkpoint: the config text plus named tensors in file
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    push_u32(&mut out, ckpt.config_text.len() as u32);
    out.extend_from_slice(ckpt.config_text.as_bytes());
    for (name, tensor) in &ckpt.tensors {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.shape() {
            push_u32(&mut out, d as u32);
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_u32(&mut out, 0);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::TruncatedFile(format!(
                "unexpected end of file while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 7 || &bytes[..6] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes[6] != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: bytes[6],
            supported: VERSION,
        });
    }
    let mut r = Reader { bytes, pos: 7 };
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config block")?)
        .map_err(|e| CheckpointError::Corrupt(format!("config block is not UTF-8: {e}")))?
        .to_string();

    let mut tensors = Vec::new();
    loop {
        let name_len = r.u32("record name length")? as usize;
        if name_len == 0 {
            break;
        }
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|e| CheckpointError::Corrupt(format!("record name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "record `{name}` has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.u32("record dimension")? as usize;
            if d == 0 {
                return Err(CheckpointError::Corrupt(format!(
                    "record `{name}` has a zero dimension"
                )));
            }
            count = count.checked_mul(d).ok_or_else(|| {
                CheckpointError::Corrupt(format!("record `{name}` dimension overflow"))
            })?;
            shape.push(d);
        }
        if count > (1 << 30) {
            return Err(CheckpointError::Corrupt(format!(
                "record `{name}` claims {count} values"
            )));
        }
        let payload = r.take(count * 8, "record payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        tensors.push((name, Tensor::from_raw(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after end marker",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { config_text, tensors })
}

/// Writes a checkpoint file.
pub fn checkpoint_save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
