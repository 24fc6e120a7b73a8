//! Dataset selection, frame caches and in-memory frame sets.
//!
//! A cache for dataset `d` at `T` frames lives in `<out>/<d>_T<T>/` and
//! holds `train.frames` / `test.frames` (`[S, T, ..spatial]`), the matching
//! `*.labels` files (`[S]`) and `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::events::cache::{read_frames, write_frames};
use crate::events::synthetic::{self, SyntheticConfig};
use crate::events::{
    aggregate_frames_with, nmnist, Aggregation, Binning, EventStream, SpatialShape,
};
use crate::exec::Exec;
use crate::Real;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;

/// Synthetic split sizes used when no limit is given.
pub const SYNTHETIC_TRAIN: usize = 600;
pub const SYNTHETIC_TEST: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Shd,
    Nmnist,
    /// Generated by [`synthetic::generate`]; needs no files.
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Shd => "shd",
            DatasetKind::Nmnist => "nmnist",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Shd => 20,
            DatasetKind::Nmnist => nmnist::CLASSES,
            DatasetKind::Synthetic => SyntheticConfig::default().classes,
        }
    }

    pub fn spatial_shape(self) -> SpatialShape {
        match self {
            DatasetKind::Shd => SpatialShape::Units(700),
            DatasetKind::Nmnist => nmnist::SENSOR,
            DatasetKind::Synthetic => SpatialShape::Units(SyntheticConfig::default().units),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shd" => Ok(DatasetKind::Shd),
            "nmnist" | "n-mnist" => Ok(DatasetKind::Nmnist),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!(
                "unknown dataset `{other}` (expected shd, nmnist or synthetic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reads raw event streams of one split. `raw_dir` is ignored for the
/// synthetic dataset, whose `seed` selects the sample draw.
pub fn load_streams(
    dataset: DatasetKind,
    raw_dir: Option<&Path>,
    split: Split,
    limit: Option<usize>,
    seed: u64,
    exec: Exec,
) -> Result<Vec<EventStream>> {
    let need_dir = || {
        raw_dir
            .ok_or_else(|| Error::Config(format!("dataset `{dataset}` needs a raw data directory")))
    };
    match dataset {
        #[cfg(feature = "hdf5")]
        DatasetKind::Shd => crate::events::shd::load_shd(need_dir()?, split.name(), limit),
        #[cfg(not(feature = "hdf5"))]
        DatasetKind::Shd => {
            need_dir()?;
            Err(Error::Unsupported(
                "SHD support needs the `hdf5` feature".into(),
            ))
        }
        DatasetKind::Nmnist => nmnist::load_nmnist(need_dir()?, split.name(), limit, exec),
        DatasetKind::Synthetic => {
            let (default, salt) = match split {
                Split::Train => (SYNTHETIC_TRAIN, 0),
                Split::Test => (SYNTHETIC_TEST, 0x9e37_79b9_7f4a_7c15),
            };
            synthetic::generate(
                &SyntheticConfig::default(),
                limit.unwrap_or(default),
                seed ^ salt,
            )
        }
    }
}

/// Dense frames of a whole split kept in memory as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    /// `[T, ..spatial]`.
    pub sample_shape: Vec<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl FrameSet {
    pub fn from_streams(
        streams: &[EventStream],
        frames: usize,
        binning: Binning,
        exec: Exec,
    ) -> Result<Self> {
        let tensors = exec
            .map(streams, |s| {
                aggregate_frames_with(s, frames, Aggregation::Accumulate, binning)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let sample_shape = match tensors.first() {
            Some(t) => t.shape.clone(),
            None => {
                let spatial = streams
                    .first()
                    .map(|s| s.spatial_shape.dims())
                    .unwrap_or_default();
                std::iter::once(frames).chain(spatial).collect()
            }
        };
        if let Some(t) = tensors.iter().find(|t| t.shape != sample_shape) {
            return Err(invalid!(
                "mixed sample shapes {:?} and {:?}",
                sample_shape,
                t.shape
            ));
        }
        let mut data = Vec::with_capacity(tensors.len() * sample_shape.iter().product::<usize>());
        for t in &tensors {
            data.extend_from_slice(&t.data);
        }
        Ok(FrameSet {
            sample_shape,
            data,
            labels: streams.iter().map(|s| s.label).collect(),
        })
    }

    pub fn load(cache_dir: &Path, split: Split) -> Result<Self> {
        let frames_path = cache_dir.join(format!("{split}.frames"));
        let labels_path = cache_dir.join(format!("{split}.labels"));
        let (shape, data) = read_frames(&frames_path)?;
        let (lshape, raw_labels) = read_frames(&labels_path)?;
        if shape.len() < 2 || lshape.len() != 1 || lshape[0] != shape[0] {
            return Err(Error::CorruptInput(format!(
                "{}: frames {shape:?} do not match labels {lshape:?}",
                cache_dir.display()
            )));
        }
        let labels = raw_labels
            .iter()
            .map(|&l| {
                if l >= 0.0 && l.fract() == 0.0 {
                    Ok(l as usize)
                } else {
                    Err(Error::CorruptInput(format!(
                        "{}: bad label {l}",
                        labels_path.display()
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameSet {
            sample_shape: shape[1..].to_vec(),
            data,
            labels,
        })
    }

    pub fn save(&self, cache_dir: &Path, split: Split) -> Result<()> {
        let mut shape = vec![self.len()];
        shape.extend(&self.sample_shape);
        write_frames(
            &cache_dir.join(format!("{split}.frames")),
            &shape,
            &self.data,
        )?;
        let labels: Vec<f32> = self.labels.iter().map(|&l| l as f32).collect();
        write_frames(
            &cache_dir.join(format!("{split}.labels")),
            &[labels.len()],
            &labels,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.sample_shape[0]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.sample_shape[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes.max(self.labels.iter().map(|&l| l + 1).max().unwrap_or(0))];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> FrameSet {
        let n = n.min(self.len());
        FrameSet {
            sample_shape: self.sample_shape.clone(),
            data: self.data[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<FrameSet> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                ));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Ok(FrameSet {
            sample_shape: self.sample_shape.clone(),
            data,
            labels,
        })
    }

    /// Time-major batch `[T, B, ..spatial]` of the given samples.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let t_len = self.frames();
        let frame: usize = self.spatial_shape().iter().product();
        let b = indices.len();
        let mut data = vec![0.0 as Real; t_len * b * frame];
        for (bi, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(invalid!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                ));
            }
            let s = self.sample(i);
            for t in 0..t_len {
                let dst = &mut data[(t * b + bi) * frame..(t * b + bi + 1) * frame];
                for (d, &v) in dst.iter_mut().zip(&s[t * frame..(t + 1) * frame]) {
                    *d = v as Real;
                }
            }
        }
        let mut shape = vec![t_len, b];
        shape.extend(self.spatial_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(shape, data)?, labels))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub samples: usize,
    pub events: u64,
    pub label_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub dataset: DatasetKind,
    pub frames: usize,
    pub binning: String,
    /// `[T, ..spatial]`.
    pub sample_shape: Vec<usize>,
    pub classes: usize,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub seed: Option<u64>,
    pub splits: BTreeMap<String, SplitSummary>,
}

impl Manifest {
    pub fn read(cache_dir: &Path) -> Result<Self> {
        let path = cache_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CorruptInput(format!("{}: {e}", path.display())))
    }

    fn matches(&self, req: &PrepareRequest) -> bool {
        self.format == MANIFEST_FORMAT
            && self.dataset == req.dataset
            && self.frames == req.frames
            && self.binning == req.binning.to_string()
            && self.limit_train == req.limit_train
            && self.limit_test == req.limit_test
            && self.seed == req.effective_seed()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareRequest {
    pub dataset: DatasetKind,
    pub raw_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub frames: usize,
    pub binning: Binning,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub seed: u64,
}

impl PrepareRequest {
    pub fn cache_dir(&self) -> PathBuf {
        cache_dir(&self.out_dir, self.dataset, self.frames)
    }

    fn effective_seed(&self) -> Option<u64> {
        (self.dataset == DatasetKind::Synthetic).then_some(self.seed)
    }

    fn limit(&self, split: Split) -> Option<usize> {
        match split {
            Split::Train => self.limit_train,
            Split::Test => self.limit_test,
        }
    }
}

pub fn cache_dir(out_dir: &Path, dataset: DatasetKind, frames: usize) -> PathBuf {
    out_dir.join(format!("{}_T{frames}", dataset.name()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrepareOutcome {
    UpToDate(Manifest),
    Written(Manifest),
}

impl PrepareOutcome {
    pub fn manifest(&self) -> &Manifest {
        match self {
            PrepareOutcome::UpToDate(m) | PrepareOutcome::Written(m) => m,
        }
    }
}

/// Builds the frame cache for both splits unless an identical one exists.
pub fn prepare(req: &PrepareRequest, exec: Exec) -> Result<PrepareOutcome> {
    if req.frames == 0 {
        return Err(invalid!("frame count T must be >= 1"));
    }
    let dir = req.cache_dir();
    if let Ok(m) = Manifest::read(&dir) {
        let files_present = Split::ALL.iter().all(|s| {
            dir.join(format!("{s}.frames")).is_file() && dir.join(format!("{s}.labels")).is_file()
        });
        if m.matches(req) && files_present {
            return Ok(PrepareOutcome::UpToDate(m));
        }
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let classes = req.dataset.classes();
    let mut splits = BTreeMap::new();
    let mut sample_shape = vec![req.frames];
    sample_shape.extend(req.dataset.spatial_shape().dims());
    for split in Split::ALL {
        let streams = load_streams(
            req.dataset,
            req.raw_dir.as_deref(),
            split,
            req.limit(split),
            req.seed,
            exec,
        )?;
        let set = FrameSet::from_streams(&streams, req.frames, req.binning, exec)?;
        if !set.is_empty() && set.sample_shape != sample_shape {
            return Err(Error::CorruptInput(format!(
                "{split} samples have shape {:?}, expected {sample_shape:?}",
                set.sample_shape
            )));
        }
        let set = FrameSet {
            sample_shape: sample_shape.clone(),
            ..set
        };
        set.save(&dir, split)?;
        log::info!("{}: wrote {} {split} samples", dir.display(), set.len());
        splits.insert(
            split.name().to_string(),
            SplitSummary {
                samples: set.len(),
                events: streams.iter().map(|s| s.len() as u64).sum(),
                label_histogram: set.label_histogram(classes),
            },
        );
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        dataset: req.dataset,
        frames: req.frames,
        binning: req.binning.to_string(),
        sample_shape,
        classes,
        limit_train: req.limit_train,
        limit_test: req.limit_test,
        seed: req.effective_seed(),
        splits,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::State(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(PrepareOutcome::Written(manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(out: &Path) -> PrepareRequest {
        PrepareRequest {
            dataset: DatasetKind::Synthetic,
            raw_dir: None,
            out_dir: out.to_path_buf(),
            frames: 8,
            binning: Binning::PerSample,
            limit_train: Some(24),
            limit_test: Some(12),
            seed: 3,
        }
    }

    #[test]
    fn prepare_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let req = request(dir.path());
        let first = prepare(&req, Exec::Sequential).unwrap();
        assert!(matches!(first, PrepareOutcome::Written(_)));
        let m = first.manifest();
        assert_eq!(m.sample_shape, vec![8, 64]);
        assert_eq!(m.splits["train"].samples, 24);
        assert_eq!(m.splits["test"].label_histogram, vec![2; 6]);
        let second = prepare(&req, Exec::Sequential).unwrap();
        assert_eq!(second, PrepareOutcome::UpToDate(m.clone()));

        let changed = PrepareRequest { seed: 4, ..req };
        assert!(matches!(
            prepare(&changed, Exec::Sequential).unwrap(),
            PrepareOutcome::Written(_)
        ));
    }

    #[test]
    fn cache_round_trips_frames() {
        let dir = tempfile::tempdir().unwrap();
        let req = request(dir.path());
        prepare(&req, Exec::Sequential).unwrap();
        let streams = load_streams(
            DatasetKind::Synthetic,
            None,
            Split::Train,
            Some(24),
            3,
            Exec::Sequential,
        )
        .unwrap();
        let direct =
            FrameSet::from_streams(&streams, 8, Binning::PerSample, Exec::Sequential).unwrap();
        let cached = FrameSet::load(&req.cache_dir(), Split::Train).unwrap();
        assert_eq!(cached, direct);
    }

    #[test]
    fn batch_is_time_major() {
        let set = FrameSet {
            sample_shape: vec![2, 3],
            data: (0..12).map(|v| v as f32).collect(),
            labels: vec![1, 0],
        };
        let (x, labels) = set.batch(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 3]);
        assert_eq!(labels, vec![0, 1]);
        let expect: Vec<Real> = [6, 7, 8, 0, 1, 2, 9, 10, 11, 3, 4, 5]
            .iter()
            .map(|&v| v as Real)
            .collect();
        assert_eq!(x.data(), expect.as_slice());
        assert!(set.batch(&[2]).is_err());
    }

    #[test]
    fn missing_cache_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = FrameSet::load(&dir.path().join("nope"), Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn parses_dataset_names() {
        assert_eq!(
            "N-MNIST".parse::<DatasetKind>().unwrap(),
            DatasetKind::Nmnist
        );
        assert!("cifar".parse::<DatasetKind>().is_err());
    }
}
