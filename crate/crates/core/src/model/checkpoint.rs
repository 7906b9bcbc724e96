//! Binary checkpoint format.
//!
//! ```text
//! "SAQM"            4 bytes magic
//! version           u32
//! channels (C)      u32
//! locations (N)     u32
//! repeated until EOF:
//!   name length     u16
//!   name            UTF-8
//!   rank            u8
//!   dims            u32 × rank
//!   payload         f32 × prod(dims)
//! ```
//!
//! All integers and floats are little-endian. `gamma` is stored as a
//! one-element tensor named `"gamma"`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::CheckpointError;
use crate::model::{SaqmParams, LOCATIONS};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SAQM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Real>(params: &SaqmParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.channels as u32).to_le_bytes());
    out.extend_from_slice(&(params.locations as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<SaqmParams<f32>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { CheckpointError::Truncated } else { CheckpointError::BadMagic });
    }
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let channels = r.u32()? as usize;
    let locations = r.u32()? as usize;
    if locations != LOCATIONS {
        return Err(CheckpointError::Corrupt(format!("N = {locations}, expected {LOCATIONS}")));
    }
    let mut params = SaqmParams::<f32>::build(0, channels)
        .map_err(|_| CheckpointError::Corrupt(format!("invalid channel count {channels}")))?;

    let mut found: HashMap<String, Tensor<f32>> = HashMap::new();
    while !r.done() {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let payload = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&dims, data).map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
        if found.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {name:?}")));
        }
    }

    let names = params.names();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = found.remove(name).ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "{name}: shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = found.keys().next() {
        return Err(CheckpointError::Corrupt(format!("unexpected tensor {extra:?}")));
    }
    Ok(params)
}

pub fn save<T: Real>(params: &SaqmParams<T>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<SaqmParams<f32>, CheckpointError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SaqmParams<f32> {
        let mut m = SaqmParams::build(5, 8).unwrap();
        m.gamma = Tensor::scalar(0.25);
        m
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model());
        assert_eq!(&bytes[..4], b"SAQM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 64);
        let name_len = u16::from_le_bytes(bytes[16..18].try_into().unwrap()) as usize;
        assert_eq!(&bytes[18..18 + name_len], b"q.conv1.weight");
        assert_eq!(bytes[18 + name_len], 4);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));

        let mut ver = bytes.clone();
        ver[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&ver), Err(CheckpointError::VersionMismatch { found: 7, .. })));

        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        assert!(matches!(decode(&bytes[..10]), Err(CheckpointError::Truncated)));
        assert!(matches!(decode(&bytes[..16]), Err(CheckpointError::MissingTensor(_))));
    }
}
