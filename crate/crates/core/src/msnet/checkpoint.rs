//! Weight checkpoints.
//!
//! Little-endian binary: magic `MSPS`, `u32` version, then until end of file
//! one record per tensor: `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims, `f64` payload.

use std::path::Path;

use crate::dataio::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::net::NetWeights;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSPS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(weights: &NetWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in weights.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<NetWeights> {
    let bad = |msg: String| Error::format(origin, msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut named = Vec::new();
    while r.pos < bytes.len() {
        let truncated = || bad(format!("truncated record {}", named.len()));
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32().ok_or_else(truncated)? as usize;
        if rank > 4 {
            return Err(bad(format!("{name}: rank {rank} exceeds 4")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let payload = r.take(count.checked_mul(8).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((name, Tensor::new(&dims, data)?));
    }
    NetWeights::from_named(named).map_err(|e| bad(e.to_string()))
}

pub fn write_checkpoint(path: &Path, weights: &NetWeights) -> Result<()> {
    atomic_write(path, &encode_checkpoint(weights))
}

pub fn read_checkpoint(path: &Path) -> Result<NetWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
