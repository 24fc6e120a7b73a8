//! Event streams and their aggregation into dense frames.
//!
//! Times are integer microseconds. A stream of duration `D` split into `T`
//! frames puts an event at time `t'` into frame `floor(t' * T / D)`, which
//! is `floor(t' / dt)` with `dt = D / T` evaluated exactly; an event at
//! `t' = D` is clamped into the last frame.

pub mod cache;
pub mod dataset;
pub mod nmnist;
#[cfg(feature = "hdf5")]
pub mod shd;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Address {
    /// Channel index of a 1-D sensor (cochlea model output unit).
    Unit(u32),
    /// Pixel event of a 2-D sensor.
    Pixel { polarity: u8, y: u16, x: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub time_us: u64,
    pub address: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialShape {
    Units(usize),
    Grid { c: usize, h: usize, w: usize },
}

impl SpatialShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            SpatialShape::Units(n) => vec![n],
            SpatialShape::Grid { c, h, w } => vec![c, h, w],
        }
    }

    pub fn size(&self) -> usize {
        self.dims().iter().product()
    }

    /// Row-major offset of `address`, or `None` if it does not fit.
    pub fn flat_index(&self, address: Address) -> Option<usize> {
        match (*self, address) {
            (SpatialShape::Units(n), Address::Unit(u)) if (u as usize) < n => Some(u as usize),
            (SpatialShape::Grid { c, h, w }, Address::Pixel { polarity, y, x })
                if (polarity as usize) < c && (y as usize) < h && (x as usize) < w =>
            {
                Some((polarity as usize * h + y as usize) * w + x as usize)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub spatial_shape: SpatialShape,
    pub duration_us: u64,
    pub label: usize,
}

impl EventStream {
    /// Validated constructor: events sorted by time (stable), every address
    /// inside `spatial_shape`, every time at most `duration_us`.
    pub fn new(
        mut events: Vec<Event>,
        spatial_shape: SpatialShape,
        duration_us: u64,
        label: usize,
    ) -> Result<Self> {
        events.sort_by_key(|e| e.time_us);
        let stream = EventStream {
            events,
            spatial_shape,
            duration_us,
            label,
        };
        stream.validate()?;
        Ok(stream)
    }

    /// Builds a stream whose duration is one microsecond past the last event.
    pub fn with_tight_duration(
        events: Vec<Event>,
        spatial_shape: SpatialShape,
        label: usize,
    ) -> Result<Self> {
        let duration = events.iter().map(|e| e.time_us + 1).max().unwrap_or(0);
        Self::new(events, spatial_shape, duration, label)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for e in &self.events {
            if self.spatial_shape.flat_index(e.address).is_none() {
                return Err(Error::CorruptInput(format!(
                    "event address {:?} outside spatial shape {:?}",
                    e.address, self.spatial_shape
                )));
            }
            if e.time_us > self.duration_us {
                return Err(Error::CorruptInput(format!(
                    "event at {} us beyond stream duration {} us",
                    e.time_us, self.duration_us
                )));
            }
            if e.time_us < last {
                return Err(Error::CorruptInput("event times are not sorted".into()));
            }
            last = e.time_us;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Dense non-negative frames `[T, ..spatial]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl FrameTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        FrameTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn frames(&self) -> usize {
        self.shape[0]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    /// Count events per address and frame.
    #[default]
    Accumulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Binning {
    /// `dt = stream duration / T` for each sample.
    #[default]
    PerSample,
    /// `dt = duration_us / T` for every sample; events at or after
    /// `duration_us` are cropped.
    Fixed { duration_us: u64 },
}

impl std::fmt::Display for Binning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Binning::PerSample => write!(f, "per-sample"),
            Binning::Fixed { duration_us } => write!(f, "fixed:{duration_us}"),
        }
    }
}

impl std::str::FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-sample" => Ok(Binning::PerSample),
            other => other
                .strip_prefix("fixed:")
                .and_then(|d| d.trim().parse().ok())
                .filter(|&d: &u64| d > 0)
                .map(|duration_us| Binning::Fixed { duration_us })
                .ok_or_else(|| {
                    Error::Config(format!(
                        "binning must be `per-sample` or `fixed:<microseconds>`, got `{other}`"
                    ))
                }),
        }
    }
}

/// Frame index of an event at `time_us` in a window of `duration_us` split
/// into `frames` bins.
#[inline]
pub fn frame_index(time_us: u64, duration_us: u64, frames: usize) -> usize {
    if duration_us == 0 {
        return 0;
    }
    let idx = (time_us as u128 * frames as u128 / duration_us as u128) as usize;
    idx.min(frames - 1)
}

pub fn aggregate_frames(
    stream: &EventStream,
    frames: usize,
    mode: Aggregation,
) -> Result<FrameTensor> {
    aggregate_frames_with(stream, frames, mode, Binning::PerSample)
}

pub fn aggregate_frames_with(
    stream: &EventStream,
    frames: usize,
    mode: Aggregation,
    binning: Binning,
) -> Result<FrameTensor> {
    if frames == 0 {
        return Err(invalid!("frame count T must be >= 1"));
    }
    let Aggregation::Accumulate = mode;
    let size = stream.spatial_shape.size();
    let mut shape = vec![frames];
    shape.extend(stream.spatial_shape.dims());
    let mut out = FrameTensor::zeros(shape);
    let duration = match binning {
        Binning::PerSample => stream.duration_us,
        Binning::Fixed { duration_us } => duration_us,
    };
    for e in &stream.events {
        let addr = stream.spatial_shape.flat_index(e.address).ok_or_else(|| {
            Error::CorruptInput(format!(
                "event address {:?} outside spatial shape {:?}",
                e.address, stream.spatial_shape
            ))
        })?;
        if matches!(binning, Binning::Fixed { .. }) && e.time_us >= duration {
            continue;
        }
        let t = frame_index(e.time_us, duration, frames);
        out.data[t * size + addr] += 1.0;
    }
    Ok(out)
}
