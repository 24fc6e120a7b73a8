//! Synthetic recordings through the frame cache, training, checkpointing and
//! evaluation, using only the public API.

use stsc::events::dataset::{
    self, DatasetKind, FrameSet, Manifest, PrepareOutcome, PrepareRequest, Split,
};
use stsc::exec::Exec;
use stsc::train::trainer::{derive_seed, limit_split};
use stsc::train::{Timing, TrainConfig, Trainer};
use stsc::Real;

fn request(cfg: &TrainConfig, out: &std::path::Path) -> PrepareRequest {
    PrepareRequest {
        dataset: cfg.dataset,
        raw_dir: None,
        out_dir: out.to_path_buf(),
        frames: cfg.frames,
        binning: cfg.binning,
        limit_train: None,
        limit_test: None,
        seed: cfg.seed,
    }
}

#[test]
fn cache_train_checkpoint_eval() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::preset(DatasetKind::Synthetic);
    cfg.epochs = 4;
    cfg.timing = Timing::Off;

    let req = request(&cfg, dir.path());
    let first = dataset::prepare(&req, Exec::Sequential).unwrap();
    assert!(matches!(first, PrepareOutcome::Written(_)));
    let again = dataset::prepare(&req, Exec::Sequential).unwrap();
    assert!(matches!(again, PrepareOutcome::UpToDate(_)));

    let cache = req.cache_dir();
    let manifest = Manifest::read(&cache).unwrap();
    assert_eq!(manifest.frames, cfg.frames);
    let train = FrameSet::load(&cache, Split::Train).unwrap();
    let test = FrameSet::load(&cache, Split::Test).unwrap();
    assert_eq!(train.frames(), cfg.frames);
    assert!(train.data.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));

    let train = limit_split(&train, Some(192), derive_seed(&[cfg.seed, 1])).unwrap();
    let test = limit_split(&test, Some(96), derive_seed(&[cfg.seed, 2])).unwrap();
    let classes = DatasetKind::Synthetic.classes();

    let run = dir.path().join("run");
    let mut trainer = Trainer::new(cfg.clone(), train.spatial_shape(), Exec::Sequential).unwrap();
    let report = trainer.fit(&train, &test, Some(&run), |_| {}).unwrap();
    assert_eq!(report.history.len(), cfg.epochs);
    assert!(
        report.best_test_acc > 1.5 / classes as Real,
        "best accuracy {} is near chance",
        report.best_test_acc
    );

    let live = trainer.evaluate(&test).unwrap();
    let mut restored = Trainer::new(
        TrainConfig {
            seed: cfg.seed + 1,
            ..cfg
        },
        test.spatial_shape(),
        Exec::Sequential,
    )
    .unwrap();
    restored.load(&run.join("final.ckpt")).unwrap();
    let replay = restored.evaluate(&test).unwrap();
    assert_eq!(live, replay);
    assert_eq!(live.accuracy, report.final_test_acc);
}
