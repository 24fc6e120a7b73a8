//! Spiking Heidelberg Digits container files (`shd_train.h5`,
//! `shd_test.h5`): `spikes/times` (variable-length arrays of seconds),
//! `spikes/units` (variable-length arrays of channel indices) and `labels`.

use std::path::{Path, PathBuf};

use hdf5::types::VarLenArray;

use crate::error::{Error, Result};
use crate::events::{Address, Event, EventStream, SpatialShape};

pub const UNITS: usize = 700;
pub const CLASSES: usize = 20;

/// Resolves `path` to the container of `split`: either the file itself or
/// `<dir>/shd_<split>.h5`.
pub fn split_file(path: &Path, split: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("shd_{split}.h5"))
    } else {
        path.to_path_buf()
    }
}

fn h5<T>(path: &Path, r: hdf5::Result<T>) -> Result<T> {
    r.map_err(|source| Error::Hdf5 {
        path: path.to_path_buf(),
        source,
    })
}

/// Converts one sample. Times are rounded to whole microseconds; the stream
/// lasts one microsecond past its last spike.
pub fn sample_to_stream(times_s: &[f64], units: &[u32], label: usize) -> Result<EventStream> {
    if times_s.len() != units.len() {
        return Err(Error::CorruptInput(format!(
            "sample has {} spike times but {} unit indices",
            times_s.len(),
            units.len()
        )));
    }
    if label >= CLASSES {
        return Err(Error::CorruptInput(format!(
            "label {label} outside [0, {CLASSES})"
        )));
    }
    let events = times_s
        .iter()
        .zip(units)
        .map(|(&t, &u)| {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::CorruptInput(format!("invalid spike time {t}")));
            }
            if u as usize >= UNITS {
                return Err(Error::CorruptInput(format!("unit index {u} >= {UNITS}")));
            }
            Ok(Event {
                time_us: (t * 1e6).round() as u64,
                address: Address::Unit(u),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EventStream::with_tight_duration(events, SpatialShape::Units(UNITS), label)
}

pub fn load_shd(path: &Path, split: &str, limit: Option<usize>) -> Result<Vec<EventStream>> {
    let file_path = split_file(path, split);
    if !file_path.is_file() {
        return Err(Error::io(
            &file_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "SHD container not found"),
        ));
    }
    let file = h5(&file_path, hdf5::File::open(&file_path))?;
    let times = h5(
        &file_path,
        file.dataset("spikes/times")
            .and_then(|d| d.read_raw::<VarLenArray<f64>>()),
    )?;
    let units = h5(
        &file_path,
        file.dataset("spikes/units")
            .and_then(|d| d.read_raw::<VarLenArray<u32>>()),
    )?;
    let labels = h5(
        &file_path,
        file.dataset("labels").and_then(|d| d.read_raw::<u32>()),
    )?;
    if times.len() != units.len() || times.len() != labels.len() {
        return Err(Error::CorruptInput(format!(
            "{}: {} time arrays, {} unit arrays, {} labels",
            file_path.display(),
            times.len(),
            units.len(),
            labels.len()
        )));
    }
    let n = limit.map_or(times.len(), |l| l.min(times.len()));
    (0..n)
        .map(|i| {
            sample_to_stream(&times[i], &units[i], labels[i] as usize).map_err(|e| {
                Error::CorruptInput(format!("{} sample {i}: {e}", file_path.display()))
            })
        })
        .collect()
}

/// Writes a container in the published layout. Used to build fixtures.
pub fn write_shd(path: &Path, samples: &[(Vec<f32>, Vec<u16>, u16)]) -> Result<()> {
    let file = h5(path, hdf5::File::create(path))?;
    let group = h5(path, file.create_group("spikes"))?;
    let times: Vec<VarLenArray<f32>> = samples
        .iter()
        .map(|s| VarLenArray::from_slice(&s.0))
        .collect();
    let units: Vec<VarLenArray<u16>> = samples
        .iter()
        .map(|s| VarLenArray::from_slice(&s.1))
        .collect();
    let labels: Vec<u16> = samples.iter().map(|s| s.2).collect();
    h5(
        path,
        group
            .new_dataset_builder()
            .with_data(&times)
            .create("times")
            .map(|_| ()),
    )?;
    h5(
        path,
        group
            .new_dataset_builder()
            .with_data(&units)
            .create("units")
            .map(|_| ()),
    )?;
    h5(
        path,
        file.new_dataset_builder()
            .with_data(&labels)
            .create("labels")
            .map(|_| ()),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_seconds_to_microseconds() {
        let s = sample_to_stream(&[0.1, 0.15, 0.9], &[5, 5, 5], 3).unwrap();
        let times: Vec<u64> = s.events.iter().map(|e| e.time_us).collect();
        assert_eq!(times, vec![100_000, 150_000, 900_000]);
        assert_eq!(s.duration_us, 900_001);
        assert_eq!(s.spatial_shape, SpatialShape::Units(700));
    }

    #[test]
    fn rejects_bad_units_and_labels() {
        assert!(matches!(
            sample_to_stream(&[0.1], &[700], 0),
            Err(Error::CorruptInput(_))
        ));
        assert!(sample_to_stream(&[0.1], &[1], 20).is_err());
        assert!(sample_to_stream(&[0.1, 0.2], &[1], 0).is_err());
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shd_train.h5");
        write_shd(
            &path,
            &[
                (vec![0.0, 0.5], vec![0, 699], 19),
                (vec![], vec![], 0),
                (vec![0.25], vec![42], 7),
            ],
        )
        .unwrap();
        let samples = load_shd(dir.path(), "train", None).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].label, 19);
        assert_eq!(samples[0].events[1].address, Address::Unit(699));
        assert_eq!(samples[0].events[1].time_us, 500_000);
        assert!(samples[1].is_empty());
        assert_eq!(load_shd(dir.path(), "train", Some(2)).unwrap().len(), 2);
        assert!(matches!(
            load_shd(dir.path(), "test", None),
            Err(Error::Io { .. })
        ));
    }
}
