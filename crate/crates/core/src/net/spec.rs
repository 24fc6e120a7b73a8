//! Architecture strings such as `Input-128FC-128FC-100FC-Voting-20`.
//!
//! Tokens are separated by `-`: `Input`, `<n>FC`, `<c>C<k>`, `MP<k>`,
//! `AP<k>`, `<p>DP`, `Voting`, and a trailing class count.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::diff::spatial::PoolKind;
use crate::error::{Error, Result};
use crate::stsc::StscConfig;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Fc { width: usize },
    Conv { channels: usize, kernel: usize },
    Pool { kind: PoolKind, size: usize },
    Dropout { p: Real },
}

impl LayerSpec {
    /// FC and conv layers: the points STSC can be inserted in front of.
    pub fn is_spatial_op(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::Conv { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Fc { width } => write!(f, "{width}FC"),
            LayerSpec::Conv { channels, kernel } => write!(f, "{channels}C{kernel}"),
            LayerSpec::Pool {
                kind: PoolKind::Max,
                size,
            } => write!(f, "MP{size}"),
            LayerSpec::Pool {
                kind: PoolKind::Avg,
                size,
            } => write!(f, "AP{size}"),
            LayerSpec::Dropout { p } => write!(f, "{p}DP"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeuronMode {
    Lif,
    Relu,
    None,
}

impl fmt::Display for NeuronMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeuronMode::Lif => "LIF",
            NeuronMode::Relu => "ReLU",
            NeuronMode::None => "none",
        })
    }
}

/// Set of 1-based spatial-op indices that get an STSC module in front.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum StscPolicy {
    #[default]
    None,
    All,
    Points(BTreeSet<usize>),
}

impl StscPolicy {
    pub fn points(points: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = points.into_iter().collect();
        if set.is_empty() {
            StscPolicy::None
        } else {
            StscPolicy::Points(set)
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        match self {
            StscPolicy::None => false,
            StscPolicy::All => true,
            StscPolicy::Points(p) => p.contains(&index),
        }
    }

    /// The seven insertion strategies over three layers.
    pub fn grid() -> Vec<StscPolicy> {
        ["P1", "P2", "P3", "P12", "P13", "P23", "P123"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }
}

impl fmt::Display for StscPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StscPolicy::None => f.write_str("none"),
            StscPolicy::All => f.write_str("all"),
            StscPolicy::Points(p) => {
                let digits_only = p.iter().all(|&i| i < 10);
                f.write_str("P")?;
                for (n, i) in p.iter().enumerate() {
                    if n > 0 && !digits_only {
                        f.write_str(",")?;
                    }
                    write!(f, "{i}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for StscPolicy {
    type Err = Error;

    /// `none`, `all`, `P1`, `P13`, `P123`, or comma separated indices such
    /// as `P1,12` for deep networks.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "none" | "vanilla" => return Ok(StscPolicy::None),
            "all" => return Ok(StscPolicy::All),
            _ => {}
        }
        let bad = || Error::Spec(format!("invalid STSC policy `{s}`"));
        let body = s.strip_prefix(['P', 'p']).ok_or_else(bad)?;
        let indices: Vec<usize> = if body.contains(',') {
            body.split(',')
                .map(|t| t.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?
        } else {
            body.chars()
                .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(bad))
                .collect::<Result<_>>()?
        };
        if indices.is_empty() || indices.contains(&0) {
            return Err(bad());
        }
        Ok(StscPolicy::points(indices))
    }
}

/// Temporal-module ablation variants of an FC-only network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationKind {
    /// No neurons and no activations.
    FcsNon,
    /// ReLU after all but the last FC layer.
    FcsRelu,
    /// LIF after every FC layer.
    Snn,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [
        AblationKind::FcsNon,
        AblationKind::FcsRelu,
        AblationKind::Snn,
    ];
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationKind::FcsNon => "FCs-Non",
            AblationKind::FcsRelu => "FCs-ReLU",
            AblationKind::Snn => "SNN",
        })
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "fcsnon" => Ok(AblationKind::FcsNon),
            "fcsrelu" => Ok(AblationKind::FcsRelu),
            "snn" => Ok(AblationKind::Snn),
            _ => Err(Error::Spec(format!("unknown ablation variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    pub policy: StscPolicy,
    /// One entry per spatial op.
    pub neurons: Vec<NeuronMode>,
    pub stsc: StscConfig,
}

impl NetworkSpec {
    pub fn spatial_ops(&self) -> usize {
        self.layers.iter().filter(|l| l.is_spatial_op()).count()
    }

    pub fn with_policy(mut self, policy: StscPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_stsc(mut self, stsc: StscConfig) -> Self {
        self.stsc = stsc;
        self
    }

    /// Replaces the neuron modes according to `kind`. Only FC-only
    /// networks have these variants.
    pub fn ablation_variant(&self, kind: AblationKind) -> Result<NetworkSpec> {
        if self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv { .. }))
        {
            return Err(Error::Unsupported(
                "ablation variants are defined for FC-only networks".into(),
            ));
        }
        let n = self.spatial_ops();
        let neurons = (0..n)
            .map(|i| match kind {
                AblationKind::FcsNon => NeuronMode::None,
                AblationKind::FcsRelu if i + 1 < n => NeuronMode::Relu,
                AblationKind::FcsRelu => NeuronMode::None,
                AblationKind::Snn => NeuronMode::Lif,
            })
            .collect();
        Ok(NetworkSpec {
            neurons,
            ..self.clone()
        })
    }

    pub fn policy_indices(&self) -> Vec<usize> {
        (1..=self.spatial_ops())
            .filter(|&i| self.policy.contains(i))
            .collect()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Input")?;
        for l in &self.layers {
            write!(f, "-{l}")?;
        }
        write!(f, "-Voting-{}", self.classes)
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_spec(s)
    }
}

fn spec_err(s: &str, why: impl fmt::Display) -> Error {
    Error::Spec(format!("`{s}`: {why}"))
}

fn parse_layer(tok: &str) -> Option<LayerSpec> {
    if let Some(n) = tok.strip_suffix("FC") {
        let width = n.parse().ok().filter(|&w| w > 0)?;
        return Some(LayerSpec::Fc { width });
    }
    if let Some(p) = tok.strip_suffix("DP") {
        let p: Real = p.parse().ok()?;
        return (0.0..1.0).contains(&p).then_some(LayerSpec::Dropout { p });
    }
    for (prefix, kind) in [("MP", PoolKind::Max), ("AP", PoolKind::Avg)] {
        if let Some(k) = tok.strip_prefix(prefix) {
            let size = k.parse().ok().filter(|&k| k > 0)?;
            return Some(LayerSpec::Pool { kind, size });
        }
    }
    let (c, k) = tok.split_once('C')?;
    let channels = c.parse().ok().filter(|&c| c > 0)?;
    let kernel = k.parse().ok().filter(|&k: &usize| k % 2 == 1)?;
    Some(LayerSpec::Conv { channels, kernel })
}

/// Parses the token grammar. Neurons default to LIF after every spatial op
/// and no STSC is inserted.
pub fn parse_spec(s: &str) -> Result<NetworkSpec> {
    let tokens: Vec<&str> = s.trim().split('-').map(str::trim).collect();
    if tokens.first() != Some(&"Input") {
        return Err(spec_err(s, "must start with `Input`"));
    }
    let votes = tokens.iter().filter(|&&t| t == "Voting").count();
    if votes != 1 {
        return Err(spec_err(
            s,
            format!("needs exactly one `Voting` token, found {votes}"),
        ));
    }
    let n = tokens.len();
    if n < 3 || tokens[n - 2] != "Voting" {
        return Err(spec_err(s, "must end with `Voting-<classes>`"));
    }
    let classes: usize = tokens[n - 1]
        .parse()
        .ok()
        .filter(|&c| c > 0)
        .ok_or_else(|| spec_err(s, format!("bad class count `{}`", tokens[n - 1])))?;
    let layers = tokens[1..n - 2]
        .iter()
        .map(|t| parse_layer(t).ok_or_else(|| spec_err(s, format!("unknown token `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(LayerSpec::Fc { width }) = layers.iter().rev().find(|l| l.is_spatial_op()) {
        if width % classes != 0 {
            return Err(spec_err(
                s,
                format!("voting width {width} is not divisible by {classes} classes"),
            ));
        }
    }
    let spatial = layers.iter().filter(|l| l.is_spatial_op()).count();
    Ok(NetworkSpec {
        layers,
        classes,
        policy: StscPolicy::None,
        neurons: vec![NeuronMode::Lif; spatial],
        stsc: StscConfig::default(),
    })
}
