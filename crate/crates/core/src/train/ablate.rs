//! Sweeps over insertion policies, kernel sizes and model variants.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::dataset::FrameSet;
use crate::exec::Exec;
use crate::net::{AblationKind, StscPolicy};
use crate::train::config::{StscPaths, TrainConfig};
use crate::train::trainer::{TrainReport, Trainer};
use crate::Real;

pub const ABLATION_HEADER: &str =
    "policy,K_F,K_G,variant,best_test_acc,final_test_acc,best_epoch,epochs";

/// Neuron variant plus the STSC paths in use, written like `SNN+STSC`,
/// `FCs-ReLU`, `SNN+TRF` or `SNN+FLI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub neurons: AblationKind,
    pub stsc: Option<StscPaths>,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neurons)?;
        match self.stsc {
            None => Ok(()),
            Some(StscPaths::Both) => f.write_str("+STSC"),
            Some(StscPaths::TrfOnly) => f.write_str("+TRF"),
            Some(StscPaths::FliOnly) => f.write_str("+FLI"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, module) = match s.split_once('+') {
            Some((b, m)) => (b, Some(m)),
            None => (s, None),
        };
        let stsc = match module.map(|m| m.trim().to_ascii_uppercase()) {
            None => None,
            Some(m) if m == "STSC" => Some(StscPaths::Both),
            Some(m) if m == "TRF" => Some(StscPaths::TrfOnly),
            Some(m) if m == "FLI" => Some(StscPaths::FliOnly),
            Some(m) => {
                return Err(Error::Spec(format!(
                    "unknown module `{m}` in variant `{s}`"
                )))
            }
        };
        Ok(Variant {
            neurons: base.parse()?,
            stsc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridPoint {
    pub policy: StscPolicy,
    pub k_f: usize,
    pub k_g: usize,
    pub variant: Variant,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.k_f = self.k_f;
        cfg.k_g = self.k_g;
        cfg.variant = match self.variant.neurons {
            AblationKind::Snn => None,
            other => Some(other),
        };
        match self.variant.stsc {
            Some(paths) => {
                cfg.policy = self.policy.clone();
                cfg.stsc_paths = paths;
            }
            None => {
                cfg.policy = StscPolicy::None;
                cfg.stsc_paths = StscPaths::Both;
            }
        }
        cfg
    }
}

/// Named grids. `base` supplies the policy, kernel sizes and STSC paths
/// that a grid does not vary.
pub fn named_grid(name: &str, base: &TrainConfig) -> Result<Vec<GridPoint>> {
    let snn = |stsc| Variant {
        neurons: AblationKind::Snn,
        stsc,
    };
    let point = |policy: &StscPolicy, k_f, k_g, variant| GridPoint {
        policy: policy.clone(),
        k_f,
        k_g,
        variant,
    };
    let rf = [1, 3, 5, 7, 9, 11];
    let grid = match name {
        "policies" => StscPolicy::grid()
            .iter()
            .map(|p| point(p, base.k_f, base.k_g, snn(Some(base.stsc_paths))))
            .collect(),
        "kf" => rf
            .iter()
            .map(|&k| point(&base.policy, k, base.k_g, snn(Some(StscPaths::TrfOnly))))
            .collect(),
        "kg" => rf
            .iter()
            .map(|&k| point(&base.policy, base.k_f, k, snn(Some(StscPaths::FliOnly))))
            .collect(),
        "rf" => {
            let ks = [1, 3, 5, 7];
            ks.iter()
                .flat_map(|&f| ks.iter().map(move |&g| (f, g)))
                .map(|(f, g)| point(&base.policy, f, g, snn(Some(StscPaths::Both))))
                .collect()
        }
        "variants" => AblationKind::ALL
            .iter()
            .flat_map(|&neurons| {
                [None, Some(StscPaths::Both)].map(|stsc| Variant { neurons, stsc })
            })
            .map(|v| point(&"P1".parse().unwrap(), base.k_f, base.k_g, v))
            .collect(),
        "modules" => [StscPaths::TrfOnly, StscPaths::FliOnly, StscPaths::Both]
            .iter()
            .map(|&p| point(&base.policy, base.k_f, base.k_g, snn(Some(p))))
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown grid `{other}` (expected policies, kf, kg, rf, variants or modules)"
            )))
        }
    };
    Ok(grid)
}

/// Cartesian product of explicit lists.
pub fn product_grid(
    policies: &[StscPolicy],
    k_f: &[usize],
    k_g: &[usize],
    variants: &[Variant],
) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for p in policies {
        for &f in k_f {
            for &g in k_g {
                for &v in variants {
                    out.push(GridPoint {
                        policy: p.clone(),
                        k_f: f,
                        k_g: g,
                        variant: v,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub point: GridPoint,
    pub report: TrainReport,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let p = &self.point;
        let policy = if p.variant.stsc.is_some() {
            p.policy.to_string()
        } else {
            "none".into()
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            policy,
            p.k_f,
            p.k_g,
            p.variant,
            self.report.best_test_acc,
            self.report.final_test_acc,
            self.report.best_epoch,
            self.report.history.len()
        )
    }

    pub fn best(&self) -> Real {
        self.report.best_test_acc
    }
}

/// One training run per grid point, all from the same seed. Rows are
/// appended to `<out>/ablation.csv` as they finish and each run keeps its
/// own directory `<out>/run_<i>`.
pub fn ablate(
    base: &TrainConfig,
    grid: &[GridPoint],
    train: &FrameSet,
    test: &FrameSet,
    out: Option<&Path>,
    exec: Exec,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let configs: Vec<TrainConfig> = grid.iter().map(|p| p.apply(base)).collect();
    for c in &configs {
        c.validate()?;
    }
    let mut csv = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("ablation.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{ABLATION_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(grid.len());
    for (i, (point, cfg)) in grid.iter().zip(configs).enumerate() {
        log::info!(
            "ablation run {}/{}: {} {}",
            i + 1,
            grid.len(),
            point.policy,
            point.variant
        );
        let mut trainer = Trainer::new(cfg, train.spatial_shape(), exec)?;
        let run_dir = out.map(|d| d.join(format!("run_{i}")));
        let report = trainer.fit(train, test, run_dir.as_deref(), |_| {})?;
        let row = AblationRow {
            point: point.clone(),
            report,
        };
        if let Some((w, path)) = csv.as_mut() {
            writeln!(w, "{}", row.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&*path, e))?;
        }
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::dataset::DatasetKind;

    #[test]
    fn named_grid_sizes() {
        let base = TrainConfig::preset(DatasetKind::Shd);
        assert_eq!(named_grid("policies", &base).unwrap().len(), 7);
        assert_eq!(named_grid("variants", &base).unwrap().len(), 6);
        assert_eq!(named_grid("modules", &base).unwrap().len(), 3);
        assert_eq!(named_grid("rf", &base).unwrap().len(), 16);
        assert!(named_grid("everything", &base).is_err());
    }

    #[test]
    fn variant_labels_round_trip() {
        let base = TrainConfig::preset(DatasetKind::Shd);
        let labels: Vec<String> = named_grid("variants", &base)
            .unwrap()
            .iter()
            .map(|p| p.variant.to_string())
            .collect();
        assert_eq!(
            labels,
            [
                "FCs-Non",
                "FCs-Non+STSC",
                "FCs-ReLU",
                "FCs-ReLU+STSC",
                "SNN",
                "SNN+STSC"
            ]
        );
        for l in labels {
            assert_eq!(l.parse::<Variant>().unwrap().to_string(), l);
        }
        assert!("SNN+XYZ".parse::<Variant>().is_err());
    }

    #[test]
    fn grid_point_sets_exactly_its_fields() {
        let base = TrainConfig::preset(DatasetKind::Shd);
        let p = GridPoint {
            policy: "P13".parse().unwrap(),
            k_f: 7,
            k_g: 5,
            variant: "FCs-ReLU+FLI".parse().unwrap(),
        };
        let c = p.apply(&base);
        assert_eq!(c.policy.to_string(), "P13");
        assert_eq!((c.k_f, c.k_g), (7, 5));
        assert_eq!(c.variant, Some(AblationKind::FcsRelu));
        assert_eq!(c.stsc_paths, StscPaths::FliOnly);
        assert_eq!(c.epochs, base.epochs);
        let plain = GridPoint {
            variant: "SNN".parse().unwrap(),
            ..p
        };
        assert_eq!(plain.apply(&base).policy, StscPolicy::None);
    }
}
