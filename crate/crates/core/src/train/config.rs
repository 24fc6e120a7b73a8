//! Training configuration as `key = value` text.
//!
//! Keys mirror the field names (`epochs`, `batch_size`, `learning_rate`,
//! `T`, `tau`, `v_th`, `K_F`, `K_G`, `r`, `seed`, ...). Lines starting with
//! `#` are comments. A `dataset` key selects that dataset's defaults before
//! the remaining keys are applied.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::diff::temporal::TemporalPadding;
use crate::error::{Error, Result};
use crate::events::dataset::DatasetKind;
use crate::events::Binning;
use crate::net::{AblationKind, NetConfig, NetworkSpec, StscPolicy};
use crate::neuron::LifConfig;
use crate::stsc::StscConfig;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Precision this build computes in.
    pub fn compiled() -> Self {
        if cfg!(feature = "single-precision") {
            Precision::F32
        } else {
            Precision::F64
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Which paths of every inserted STSC module are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StscPaths {
    Both,
    TrfOnly,
    FliOnly,
}

impl StscPaths {
    fn flags(self) -> (bool, bool) {
        match self {
            StscPaths::Both => (true, true),
            StscPaths::TrfOnly => (true, false),
            StscPaths::FliOnly => (false, true),
        }
    }
}

impl fmt::Display for StscPaths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StscPaths::Both => "both",
            StscPaths::TrfOnly => "trf",
            StscPaths::FliOnly => "fli",
        })
    }
}

/// Per-epoch wall time in the metrics file, or zeros for byte-comparable
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    Wall,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub spec: String,
    pub policy: StscPolicy,
    /// `None` keeps the neuron modes of the spec (LIF everywhere).
    pub variant: Option<AblationKind>,
    pub stsc_paths: StscPaths,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Real,
    pub frames: usize,
    pub tau: Real,
    pub v_th: Real,
    pub surrogate_alpha: Real,
    pub fire_at_threshold: bool,
    pub detach_reset: bool,
    pub k_f: usize,
    pub k_g: usize,
    pub r: usize,
    pub padding: TemporalPadding,
    pub bias: bool,
    pub binning: Binning,
    pub seed: u64,
    /// Number of batch shards run on separate tapes.
    pub shards: usize,
    /// Random subsets of the cached splits, for short runs.
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub precision: Precision,
    pub timing: Timing,
}

impl TrainConfig {
    /// Table 2 column of `dataset`.
    pub fn preset(dataset: DatasetKind) -> Self {
        let base = TrainConfig {
            dataset,
            spec: String::new(),
            policy: StscPolicy::None,
            variant: None,
            stsc_paths: StscPaths::Both,
            epochs: 0,
            batch_size: 0,
            learning_rate: 0.0,
            frames: 0,
            tau: 2.0,
            v_th: 1.0,
            surrogate_alpha: 2.0,
            fire_at_threshold: true,
            detach_reset: false,
            k_f: 3,
            k_g: 3,
            r: 1,
            padding: TemporalPadding::Symmetric,
            bias: true,
            binning: Binning::PerSample,
            seed: 0,
            shards: 1,
            limit_train: None,
            limit_test: None,
            precision: Precision::compiled(),
            timing: Timing::Wall,
        };
        match dataset {
            DatasetKind::Shd => TrainConfig {
                spec: "Input-128FC-128FC-100FC-Voting-20".into(),
                policy: StscPolicy::points([1]),
                epochs: 200,
                batch_size: 256,
                learning_rate: 1e-4,
                frames: 15,
                tau: 10.0,
                v_th: 0.3,
                k_f: 5,
                k_g: 3,
                r: 1,
                ..base
            },
            DatasetKind::Nmnist => TrainConfig {
                spec: "Input-128C3-AP2-128C3-AP2-0.5DP-2048FC-0.5DP-100FC-Voting-10".into(),
                policy: StscPolicy::points([1, 2]),
                epochs: 300,
                batch_size: 16,
                learning_rate: 1e-3,
                frames: 10,
                tau: 2.0,
                v_th: 1.0,
                k_f: 3,
                k_g: 3,
                r: 1,
                ..base
            },
            DatasetKind::Synthetic => TrainConfig {
                spec: "Input-48FC-48FC-30FC-Voting-6".into(),
                policy: StscPolicy::points([1]),
                epochs: 10,
                batch_size: 32,
                learning_rate: 1e-2,
                frames: 12,
                tau: 4.0,
                v_th: 0.5,
                k_f: 5,
                k_g: 3,
                r: 1,
                ..base
            },
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let (enable_trf, enable_fli) = self.stsc_paths.flags();
        let spec: NetworkSpec = self.spec.parse()?;
        let spec = match self.variant {
            Some(kind) => spec.ablation_variant(kind)?,
            None => spec,
        };
        Ok(spec.with_policy(self.policy.clone()).with_stsc(StscConfig {
            k_f: self.k_f,
            k_g: self.k_g,
            r: self.r,
            enable_trf,
            enable_fli,
            padding: self.padding,
        }))
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            lif: LifConfig {
                tau: self.tau,
                v_th: self.v_th,
                surrogate_alpha: self.surrogate_alpha,
                relaxed: false,
                fire_at_threshold: self.fire_at_threshold,
                detach_reset: self.detach_reset,
            },
            bias: self.bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("T", self.frames),
            ("K_F", self.k_f),
            ("K_G", self.k_g),
            ("r", self.r),
            ("shards", self.shards),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.precision != Precision::compiled() {
            return Err(Error::Config(format!(
                "precision {} requested but this build computes in {}",
                self.precision,
                Precision::compiled()
            )));
        }
        self.net_config()
            .lif
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.network_spec()?
            .stsc
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "spec",
        "policy",
        "variant",
        "stsc_paths",
        "epochs",
        "batch_size",
        "learning_rate",
        "T",
        "tau",
        "v_th",
        "surrogate_alpha",
        "fire_at_threshold",
        "detach_reset",
        "K_F",
        "K_G",
        "r",
        "padding",
        "bias",
        "binning",
        "seed",
        "shards",
        "limit_train",
        "limit_test",
        "precision",
        "timing",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("`{key}`: expected {what}, got `{value}`"));
        fn num<T: std::str::FromStr>(
            v: &str,
            bad: impl Fn(&str) -> Error,
            what: &str,
        ) -> Result<T> {
            v.parse().map_err(|_| bad(what))
        }
        let flag = |v: &str| match v {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            _ => Err(bad("true or false")),
        };
        let limit = |v: &str| -> Result<Option<usize>> {
            if v == "none" || v == "all" {
                Ok(None)
            } else {
                num(v, bad, "an integer or `none`").map(Some)
            }
        };
        match key.trim() {
            "dataset" => self.dataset = value.parse()?,
            "spec" => {
                value.parse::<NetworkSpec>()?;
                self.spec = value.to_string();
            }
            "policy" => self.policy = value.parse()?,
            "variant" => {
                self.variant = match value {
                    "none" | "default" => None,
                    v => Some(v.parse()?),
                }
            }
            "stsc_paths" => {
                self.stsc_paths = match value {
                    "both" => StscPaths::Both,
                    "trf" => StscPaths::TrfOnly,
                    "fli" => StscPaths::FliOnly,
                    _ => return Err(bad("both, trf or fli")),
                }
            }
            "epochs" => self.epochs = num(value, bad, "an integer")?,
            "batch_size" => self.batch_size = num(value, bad, "an integer")?,
            "learning_rate" => self.learning_rate = num(value, bad, "a number")?,
            "T" => self.frames = num(value, bad, "an integer")?,
            "tau" => self.tau = num(value, bad, "a number")?,
            "v_th" => self.v_th = num(value, bad, "a number")?,
            "surrogate_alpha" => self.surrogate_alpha = num(value, bad, "a number")?,
            "fire_at_threshold" => self.fire_at_threshold = flag(value)?,
            "detach_reset" => self.detach_reset = flag(value)?,
            "K_F" => self.k_f = num(value, bad, "an integer")?,
            "K_G" => self.k_g = num(value, bad, "an integer")?,
            "r" => self.r = num(value, bad, "an integer")?,
            "padding" => {
                self.padding = match value {
                    "symmetric" => TemporalPadding::Symmetric,
                    "causal" => TemporalPadding::Causal,
                    _ => return Err(bad("symmetric or causal")),
                }
            }
            "bias" => self.bias = flag(value)?,
            "binning" => self.binning = value.parse()?,
            "seed" => self.seed = num(value, bad, "an integer")?,
            "shards" => self.shards = num(value, bad, "an integer")?,
            "limit_train" => self.limit_train = limit(value)?,
            "limit_test" => self.limit_test = limit(value)?,
            "precision" => {
                self.precision = match value {
                    "f32" | "32" => Precision::F32,
                    "f64" | "64" => Precision::F64,
                    _ => return Err(bad("f32 or f64")),
                }
            }
            "timing" => {
                self.timing = match value {
                    "wall" => Timing::Wall,
                    "off" => Timing::Off,
                    _ => return Err(bad("wall or off")),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (known: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses a config text on top of the defaults of its `dataset` key
    /// (or `fallback` if there is none).
    pub fn parse(text: &str, fallback: DatasetKind) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let dataset = match pairs.iter().find(|(k, _)| k == "dataset") {
            Some((_, v)) => v.parse()?,
            None => fallback,
        };
        let mut cfg = TrainConfig::preset(dataset);
        for (k, v) in &pairs {
            if k != "dataset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: DatasetKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, fallback)
    }

    /// Every field as `key = value`, in [`Self::KEYS`] order. Parsing the
    /// result gives back the same config.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mut out = String::new();
        for &key in Self::KEYS {
            let value = match key {
                "dataset" => self.dataset.to_string(),
                "spec" => self.spec.clone(),
                "policy" => self.policy.to_string(),
                "variant" => self.variant.map_or("none".into(), |v| v.to_string()),
                "stsc_paths" => self.stsc_paths.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => format!("{:?}", self.learning_rate),
                "T" => self.frames.to_string(),
                "tau" => format!("{:?}", self.tau),
                "v_th" => format!("{:?}", self.v_th),
                "surrogate_alpha" => format!("{:?}", self.surrogate_alpha),
                "fire_at_threshold" => self.fire_at_threshold.to_string(),
                "detach_reset" => self.detach_reset.to_string(),
                "K_F" => self.k_f.to_string(),
                "K_G" => self.k_g.to_string(),
                "r" => self.r.to_string(),
                "padding" => match self.padding {
                    TemporalPadding::Symmetric => "symmetric".into(),
                    TemporalPadding::Causal => "causal".into(),
                },
                "bias" => self.bias.to_string(),
                "binning" => self.binning.to_string(),
                "seed" => self.seed.to_string(),
                "shards" => self.shards.to_string(),
                "limit_train" => opt(self.limit_train),
                "limit_test" => opt(self.limit_test),
                "precision" => self.precision.to_string(),
                "timing" => match self.timing {
                    Timing::Wall => "wall".into(),
                    Timing::Off => "off".into(),
                },
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
