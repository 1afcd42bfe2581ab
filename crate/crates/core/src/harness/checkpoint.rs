//! Binary checkpoint format.
//!
//! ```text
//! "SCNCKPT1"  u16 version  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u32 dim, f64 LE data }
//! u32 CRC32 of every preceding byte
//! ```
//! All integers are little-endian.

use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::optim::OptimState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SCNCKPT1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unknown checkpoint version {0}")]
    UnknownVersion(u16),
    #[error("checkpoint corrupt: CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    Crc { stored: u32, computed: u32 },
    #[error("checkpoint corrupt: {0}")]
    Malformed(String),
}

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid("checkpoint", format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("checkpoint", format!("rank too large for {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid("checkpoint", format!("dimension too large for {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 2 + 4 + 4 {
        return Err(CheckpointError::Malformed("truncated header".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    let mut r = Reader {
        bytes: payload,
        pos: MAGIC.len(),
    };
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::UnknownVersion(version));
    }
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

/// Optimizer moments as named tensors (`optim.m.<i>`, `optim.v.<i>`,
/// `optim.vhat.<i>`, then `optim.t`).
pub fn optim_tensors(state: &OptimState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (tag, list) in [("m", &state.m), ("v", &state.v), ("vhat", &state.v_hat)] {
        for (i, t) in list.iter().enumerate() {
            out.push((format!("optim.{tag}.{i}"), t.clone()));
        }
    }
    out.push(("optim.t".into(), Tensor::scalar(state.t as f64)));
    out
}

/// Named tensors in checkpoint order.
pub type Named = Vec<(String, Tensor)>;

/// Split a loaded list into model tensors and an optimizer state, if present.
pub fn split_optim(tensors: Vec<(String, Tensor)>) -> Result<(Named, Option<OptimState>)> {
    let (optim, model): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|(n, _)| n.starts_with("optim."));
    if optim.is_empty() {
        return Ok((model, None));
    }
    let mut state = OptimState {
        m: Vec::new(),
        v: Vec::new(),
        v_hat: Vec::new(),
        t: 0,
    };
    for (name, t) in optim {
        match name.as_str() {
            "optim.t" => state.t = t.item() as u64,
            n if n.starts_with("optim.m.") => state.m.push(t),
            n if n.starts_with("optim.vhat.") => state.v_hat.push(t),
            n if n.starts_with("optim.v.") => state.v.push(t),
            _ => return Err(Error::Config(format!("unexpected optimizer tensor {name}"))),
        }
    }
    if state.m.len() != state.v.len() || state.v.len() != state.v_hat.len() {
        return Err(Error::Config("optimizer state lists differ in length".into()));
    }
    Ok((model, Some(state)))
}
