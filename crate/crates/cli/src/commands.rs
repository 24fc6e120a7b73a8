use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stsc::diff::ParamStore;
use stsc::error::{Error, Result};
use stsc::events::dataset::{
    self, DatasetKind, FrameSet, Manifest, PrepareOutcome, PrepareRequest, Split,
};
use stsc::exec::Exec;
use stsc::net::Network;
use stsc::train::ablate::{ablate as run_ablation, named_grid, ABLATION_HEADER};
use stsc::train::trainer::{derive_seed, limit_split, METRICS_HEADER};
use stsc::train::{TrainConfig, Trainer};
use stsc::validate;

use crate::{exit, Common};

impl Common {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    /// Preset, then config file, then `--seed`, then overrides in order.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let fallback = self.dataset.unwrap_or(DatasetKind::Shd);
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = TrainConfig::load(path, fallback)?;
                if let Some(d) = self.dataset.filter(|&d| d != cfg.dataset) {
                    return Err(Error::Config(format!(
                        "--dataset {d} conflicts with dataset = {} in {}",
                        cfg.dataset,
                        path.display()
                    )));
                }
                cfg
            }
            None => TrainConfig::preset(fallback),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &TrainConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(cfg.dataset.name()))
    }
}

fn print_config(cfg: &TrainConfig) {
    println!("# effective config");
    print!("{}", cfg.to_text());
    println!("# end config");
}

/// Caches always hold whole splits; `limit_train`/`limit_test` pick random
/// subsets at load time so that one cache serves every run.
fn prepare_request(common: &Common, cfg: &TrainConfig, out_dir: &Path) -> PrepareRequest {
    PrepareRequest {
        dataset: cfg.dataset,
        raw_dir: common.data_dir.clone(),
        out_dir: out_dir.to_path_buf(),
        frames: cfg.frames,
        binning: cfg.binning,
        limit_train: None,
        limit_test: None,
        seed: cfg.seed,
    }
}

fn print_manifest(m: &Manifest) {
    println!(
        "dataset: {}  T={}  binning={}",
        m.dataset, m.frames, m.binning
    );
    println!("sample shape: {:?}", m.sample_shape);
    for (split, s) in &m.splits {
        println!(
            "{split}: {} samples, {} events, labels {:?}",
            s.samples, s.events, s.label_histogram
        );
    }
}

pub fn prepare_data(common: &Common) -> Result<u8> {
    let cfg = common.resolve()?;
    print_config(&cfg);
    let root = common.out.clone().unwrap_or_else(|| common.cache.clone());
    let req = prepare_request(common, &cfg, &root);
    let outcome = dataset::prepare(&req, common.exec())?;
    match &outcome {
        PrepareOutcome::UpToDate(_) => println!("{} is up to date", req.cache_dir().display()),
        PrepareOutcome::Written(_) => println!("wrote {}", req.cache_dir().display()),
    }
    print_manifest(outcome.manifest());
    Ok(0)
}

/// Both splits of the frame cache, building it first when raw data is at
/// hand (always for the synthetic set).
fn load_data(common: &Common, cfg: &TrainConfig) -> Result<(FrameSet, FrameSet)> {
    let req = prepare_request(common, cfg, &common.cache);
    let dir = req.cache_dir();
    if cfg.dataset == DatasetKind::Synthetic || common.data_dir.is_some() {
        dataset::prepare(&req, common.exec())?;
    }
    let manifest = Manifest::read(&dir).map_err(|e| match e {
        Error::Io { path, source } => Error::Io {
            path,
            source: std::io::Error::new(
                source.kind(),
                format!("{source} (run prepare-data or pass --data-dir)"),
            ),
        },
        other => other,
    })?;
    if manifest.binning != cfg.binning.to_string() {
        return Err(Error::Config(format!(
            "cache {} was built with binning {}, config asks for {}",
            dir.display(),
            manifest.binning,
            cfg.binning
        )));
    }
    let train = FrameSet::load(&dir, Split::Train)?;
    let test = FrameSet::load(&dir, Split::Test)?;
    let train = limit_split(&train, cfg.limit_train, derive_seed(&[cfg.seed, 1]))?;
    let test = limit_split(&test, cfg.limit_test, derive_seed(&[cfg.seed, 2]))?;
    Ok((train, test))
}

pub fn train(common: &Common) -> Result<u8> {
    let cfg = common.resolve()?;
    print_config(&cfg);
    let (train, test) = load_data(common, &cfg)?;
    let out = common.out_dir(&cfg);
    println!(
        "train {} / test {} samples, writing {}",
        train.len(),
        test.len(),
        out.display()
    );
    let mut trainer = Trainer::new(cfg, train.spatial_shape(), common.exec())?;
    println!("{METRICS_HEADER}");
    let report = trainer.fit(&train, &test, Some(&out), |m| println!("{}", m.csv_row()))?;
    println!(
        "best test accuracy {:.4} at epoch {}, final {:.4}",
        report.best_test_acc, report.best_epoch, report.final_test_acc
    );
    Ok(0)
}

pub fn eval(common: &Common, checkpoint: Option<PathBuf>) -> Result<u8> {
    let mut common = common.clone();
    let checkpoint = checkpoint.unwrap_or_else(|| {
        let cfg = common.resolve().map(|c| common.out_dir(&c));
        cfg.unwrap_or_default().join("best.ckpt")
    });
    // A run directory carries its own config.
    if common.config.is_none() {
        let beside = checkpoint.with_file_name("config.txt");
        if beside.is_file() {
            common.config = Some(beside);
        }
    }
    let cfg = common.resolve()?;
    print_config(&cfg);
    let (_, test) = load_data(&common, &cfg)?;
    let mut trainer = Trainer::new(cfg, test.spatial_shape(), common.exec())?;
    trainer.load(&checkpoint)?;
    let e = trainer.evaluate(&test)?;
    println!("checkpoint: {}", checkpoint.display());
    println!("test samples: {}", test.len());
    println!("test loss: {:.6}", e.loss);
    println!("test accuracy: {:.4}", e.accuracy);
    Ok(0)
}

pub fn gradcheck(seeds: usize) -> Result<u8> {
    let inject = cfg!(feature = "fault-injection");
    if inject {
        println!("fault injection enabled: every check's backward is corrupted");
    }
    let results = validate::run_suite(seeds, inject, Exec::default())?;
    print!("{}", validate::format_report(&results));
    if results.iter().all(validate::CheckResult::passed) {
        Ok(0)
    } else {
        Ok(exit::CHECKS_FAILED)
    }
}

pub fn ablate(common: &Common, grid: &str) -> Result<u8> {
    let cfg = common.resolve()?;
    let points = named_grid(grid, &cfg)?;
    print_config(&cfg);
    let (train, test) = load_data(common, &cfg)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("{}-ablate-{grid}", cfg.dataset.name())));
    println!(
        "# {} runs, writing {}",
        points.len(),
        out.join("ablation.csv").display()
    );
    println!("{ABLATION_HEADER}");
    run_ablation(
        &cfg,
        &points,
        &train,
        &test,
        Some(&out),
        common.exec(),
        |row| println!("{}", row.csv_row()),
    )?;
    Ok(0)
}

pub fn inspect(common: &Common, spec: Option<String>) -> Result<u8> {
    let mut common = common.clone();
    if let Some(spec) = spec {
        common.overrides.insert(0, format!("spec={spec}"));
    }
    let cfg = common.resolve()?;
    print_config(&cfg);
    let net_spec = cfg.network_spec()?;
    let input_dims = cfg.dataset.spatial_shape().dims();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::build(
        &net_spec,
        &input_dims,
        cfg.net_config(),
        &mut store,
        &mut rng,
    )?;
    print!("{}", net.summary(&store));
    let fc = net_spec
        .layers
        .iter()
        .filter(|l| matches!(l, stsc::net::LayerSpec::Fc { .. }))
        .count();
    let conv = net_spec
        .layers
        .iter()
        .filter(|l| matches!(l, stsc::net::LayerSpec::Conv { .. }))
        .count();
    println!(
        "{fc} FC layers, {conv} conv layers, STSC at spatial ops {:?}",
        net_spec.policy_indices()
    );
    Ok(0)
}
