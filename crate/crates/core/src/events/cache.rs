//! Binary frame tensor file.
//!
//! Little-endian: magic `"STSC"`, version `u32` (1), rank `u32`, `rank`
//! dimensions as `u32`, then the row-major elements as `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"STSC";
pub const FRAME_VERSION: u32 = 1;

pub fn encode_frames(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} holds {n} elements, got {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(12 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} does not fit u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frames(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let corrupt = |m: &str| Error::CorruptInput(format!("frame file: {m}"));
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt("truncated header"))
    };
    if bytes.get(..4) != Some(FRAME_MAGIC.as_slice()) {
        return Err(corrupt("bad magic"));
    }
    let version = word(4)?;
    if version != FRAME_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let rank = word(8)? as usize;
    let shape = (0..rank)
        .map(|i| word(12 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 12 + 4 * rank;
    let n: usize = shape.iter().product();
    let body = &bytes[start.min(bytes.len())..];
    if body.len() != n * 4 {
        return Err(corrupt(&format!(
            "expected {} payload bytes for {shape:?}, found {}",
            n * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

pub fn write_frames(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    fs::write(path, encode_frames(shape, data)?).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frames(&bytes).map_err(|e| match e {
        Error::CorruptInput(m) => Error::CorruptInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_little_endian() {
        let bytes = encode_frames(&[2, 3], &[0.0; 6]).unwrap();
        assert_eq!(&bytes[..4], b"STSC");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 24);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = encode_frames(&[2], &[1.0, 2.0]).unwrap();
        assert!(decode_frames(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_frames(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1usize..4, 1..4), seed in 0u32..1000) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as u32 ^ seed) as f32).collect();
            let (shape, back) = decode_frames(&encode_frames(&dims, &data).unwrap()).unwrap();
            prop_assert_eq!(shape, dims);
            prop_assert_eq!(back, data);
        }
    }
}
