//! Training step, evaluation and frame binning with the rayon executor
//! against the sequential fallback. Build without the `parallel` feature and
//! both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stsc::events::dataset::{load_streams, DatasetKind, FrameSet, Split};
use stsc::exec::Exec;
use stsc::train::{TrainConfig, Trainer};

const ARMS: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn setup() -> (TrainConfig, FrameSet) {
    let mut cfg = TrainConfig::preset(DatasetKind::Synthetic);
    cfg.shards = 4;
    cfg.batch_size = 64;
    let streams = load_streams(
        DatasetKind::Synthetic,
        None,
        Split::Train,
        Some(128),
        1,
        Exec::Sequential,
    )
    .unwrap();
    let set = FrameSet::from_streams(&streams, cfg.frames, cfg.binning, Exec::Sequential).unwrap();
    (cfg, set)
}

fn train_step(c: &mut Criterion) {
    let (cfg, set) = setup();
    let batch: Vec<usize> = (0..cfg.batch_size).collect();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for (name, exec) in ARMS {
        let mut trainer = Trainer::new(cfg.clone(), set.spatial_shape(), exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.train_step(&set, &batch, 7).unwrap())
        });
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let (cfg, set) = setup();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    for (name, exec) in ARMS {
        let trainer = Trainer::new(cfg.clone(), set.spatial_shape(), exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.evaluate(&set).unwrap())
        });
    }
    group.finish();
}

fn binning(c: &mut Criterion) {
    let streams = load_streams(
        DatasetKind::Synthetic,
        None,
        Split::Train,
        Some(512),
        3,
        Exec::Sequential,
    )
    .unwrap();
    let mut group = c.benchmark_group("frame_binning");
    for (name, exec) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| FrameSet::from_streams(&streams, 15, Default::default(), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, evaluate, binning);
criterion_main!(benches);
