//! N-MNIST sample files.
//!
//! Each event is 40 bits, big-endian: x (8 bits), y (8 bits), polarity
//! (1 bit) and a 23-bit microsecond timestamp. Samples live under
//! `<root>/Train/<digit>/*.bin` and `<root>/Test/<digit>/*.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::events::{Address, Event, EventStream, SpatialShape};
use crate::exec::Exec;

pub const SENSOR: SpatialShape = SpatialShape::Grid { c: 2, h: 34, w: 34 };
pub const CLASSES: usize = 10;
pub const BYTES_PER_EVENT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub x: u8,
    pub y: u8,
    pub polarity: u8,
    pub time_us: u32,
}

pub fn decode_event(b: [u8; 5]) -> RawEvent {
    RawEvent {
        x: b[0],
        y: b[1],
        polarity: b[2] >> 7,
        time_us: ((b[2] as u32 & 0x7f) << 16) | ((b[3] as u32) << 8) | b[4] as u32,
    }
}

pub fn encode_event(e: RawEvent) -> [u8; 5] {
    let t = e.time_us & 0x7f_ffff;
    [
        e.x,
        e.y,
        (e.polarity << 7) | (t >> 16) as u8,
        (t >> 8) as u8,
        t as u8,
    ]
}

/// Decodes a whole sample. Coordinates outside the 34x34 sensor are corrupt.
pub fn decode_sample(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(BYTES_PER_EVENT) {
        return Err(Error::CorruptInput(format!(
            "N-MNIST sample length {} is not a multiple of {BYTES_PER_EVENT}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(BYTES_PER_EVENT)
        .map(|c| {
            let raw = decode_event(c.try_into().unwrap());
            let address = Address::Pixel {
                polarity: raw.polarity,
                y: raw.y as u16,
                x: raw.x as u16,
            };
            if SENSOR.flat_index(address).is_none() {
                return Err(Error::CorruptInput(format!(
                    "N-MNIST event at x={} y={} outside the 34x34 sensor",
                    raw.x, raw.y
                )));
            }
            Ok(Event {
                time_us: raw.time_us as u64,
                address,
            })
        })
        .collect()
}

pub fn read_sample(path: &Path, label: usize) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let events = decode_sample(&bytes).map_err(|e| match e {
        Error::CorruptInput(m) => Error::CorruptInput(format!("{}: {m}", path.display())),
        other => other,
    })?;
    EventStream::with_tight_duration(events, SENSOR, label)
}

fn split_dir(root: &Path, split: &str) -> Result<PathBuf> {
    let capitalized = {
        let mut c = split.chars();
        c.next()
            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
            .unwrap_or_default()
    };
    [capitalized.as_str(), split]
        .iter()
        .map(|name| root.join(name))
        .find(|p| p.is_dir())
        .ok_or_else(|| {
            Error::io(
                root.join(&capitalized),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "N-MNIST split directory not found",
                ),
            )
        })
}

/// Sample files of a split grouped by digit, each group sorted by name.
pub fn list_files(root: &Path, split: &str) -> Result<Vec<Vec<PathBuf>>> {
    let dir = split_dir(root, split)?;
    let mut groups = Vec::with_capacity(CLASSES);
    for digit in 0..CLASSES {
        let class_dir = dir.join(digit.to_string());
        let mut files = Vec::new();
        if class_dir.is_dir() {
            for entry in fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))? {
                let path = entry.map_err(|e| Error::io(&class_dir, e))?.path();
                if path.extension().is_some_and(|x| x == "bin") {
                    files.push(path);
                }
            }
        }
        files.sort();
        groups.push(files);
    }
    Ok(groups)
}

/// Loads a split. With `limit`, samples are taken round-robin over the
/// digits so the subset stays class balanced.
pub fn load_nmnist(
    root: &Path,
    split: &str,
    limit: Option<usize>,
    exec: Exec,
) -> Result<Vec<EventStream>> {
    let groups = list_files(root, split)?;
    let mut picked: Vec<(PathBuf, usize)> = Vec::new();
    let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for i in 0..longest {
        for (digit, files) in groups.iter().enumerate() {
            if let Some(f) = files.get(i) {
                if limit.is_some_and(|l| picked.len() >= l) {
                    break 'outer;
                }
                picked.push((f.clone(), digit));
            }
        }
    }
    if limit.is_none() {
        // Without a limit keep plain (digit, name) order.
        picked.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    }
    exec.map(&picked, |(path, label)| read_sample(path, *label))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_published_bit_layout() {
        let e = decode_event([0x03, 0x07, 0x80, 0x00, 0x64]);
        assert_eq!(
            e,
            RawEvent {
                x: 3,
                y: 7,
                polarity: 1,
                time_us: 100
            }
        );
        assert_eq!(encode_event(e), [0x03, 0x07, 0x80, 0x00, 0x64]);
    }

    #[test]
    fn timestamp_uses_all_23_bits() {
        let e = decode_event([0, 0, 0x7f, 0xff, 0xff]);
        assert_eq!(e.polarity, 0);
        assert_eq!(e.time_us, (1 << 23) - 1);
    }

    #[test]
    fn empty_file_is_an_empty_stream() {
        assert!(decode_sample(&[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        assert!(matches!(
            decode_sample(&[1, 2, 3, 4, 5, 6]),
            Err(Error::CorruptInput(_))
        ));
    }

    #[test]
    fn off_sensor_coordinate_is_corrupt() {
        assert!(decode_sample(&[34, 0, 0, 0, 1]).is_err());
        assert!(decode_sample(&[33, 33, 0x80, 0, 1]).is_ok());
    }
}
