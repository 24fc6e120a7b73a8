//! Parameter checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "STCK"
//! version    u32      1 = 32-bit float payload, 2 = 64-bit float payload
//! count      u32      number of entries
//! entry*     name_len u32, name bytes (UTF-8), rank u32, dims u32 x rank,
//!            row-major data (f32 or f64 per version)
//! ```
//!
//! Version 2 exists so that a model trained in 64-bit precision reloads
//! bit-identically; version 1 is the compact interchange form.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoredPrecision {
    F32,
    F64,
}

impl StoredPrecision {
    fn version(self) -> u32 {
        match self {
            StoredPrecision::F32 => 1,
            StoredPrecision::F64 => 2,
        }
    }
}

pub fn encode_checkpoint(store: &ParamStore, precision: StoredPrecision) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&precision.version().to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            // one of the two casts is a no-op, depending on `Real`
            #[allow(clippy::unnecessary_cast)]
            match precision {
                StoredPrecision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                StoredPrecision::F64 => out.extend_from_slice(&(v as f64).to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptInput("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptInput("not a checkpoint (bad magic)".into()));
    }
    let precision = match r.u32()? {
        1 => StoredPrecision::F32,
        2 => StoredPrecision::F64,
        v => {
            return Err(Error::CorruptInput(format!(
                "unknown checkpoint version {v}"
            )))
        }
    };
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptInput("checkpoint name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<Real> = match precision {
            StoredPrecision::F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
            StoredPrecision::F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
        };
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptInput(
            "trailing bytes after checkpoint".into(),
        ));
    }
    Ok(entries)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, precision: StoredPrecision) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_checkpoint(store, precision))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Overwrite every parameter of `store` from the file. Names and shapes must
/// match exactly.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(store, decode_checkpoint(&bytes)?)
}

pub fn restore(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::CorruptInput(format!(
            "checkpoint holds {} entries, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, value) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::CorruptInput(format!("unknown parameter {name}")))?;
        store
            .assign(id, value)
            .map_err(|e| Error::CorruptInput(format!("{name}: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "fc.0.weight",
            Tensor::from_fn([3, 2], |i| i as Real * 0.1 + 1e-9),
        );
        s.add_buffer("bn.running_var", Tensor::full([4], 1.0));
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&store(), StoredPrecision::F32);
        assert_eq!(&bytes[..4], b"STCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 11);
        assert_eq!(&bytes[16..27], b"fc.0.weight");
    }

    #[test]
    fn wide_payload_restores_bitwise() {
        let src = store();
        let bytes = encode_checkpoint(&src, StoredPrecision::F64);
        let mut dst = store();
        dst.iter_mut().for_each(|p| p.value.fill(0.0));
        restore(&mut dst, decode_checkpoint(&bytes).unwrap()).unwrap();
        for (a, b) in src.iter().zip(dst.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn truncated_and_mismatched_files_are_rejected() {
        let bytes = encode_checkpoint(&store(), StoredPrecision::F32);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut other = ParamStore::new();
        other.add("fc.0.weight", Tensor::zeros([2, 3]));
        other.add_buffer("bn.running_var", Tensor::zeros([4]));
        assert!(restore(&mut other, decode_checkpoint(&bytes).unwrap()).is_err());
    }
}
