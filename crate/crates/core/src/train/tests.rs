use proptest::prelude::*;

use super::loss::voting_mse;
use super::trainer::{limit_split, METRICS_HEADER};
use super::*;
use crate::diff::Tensor;
use crate::events::dataset::{load_streams, DatasetKind, FrameSet, Split};
use crate::events::Binning;
use crate::exec::Exec;
use crate::net::Voting;
use crate::Real;

fn synthetic(split: Split, n: usize, frames: usize) -> FrameSet {
    let streams = load_streams(
        DatasetKind::Synthetic,
        None,
        split,
        Some(n),
        11,
        Exec::Sequential,
    )
    .unwrap();
    FrameSet::from_streams(&streams, frames, Binning::PerSample, Exec::Sequential).unwrap()
}

fn small_cfg() -> TrainConfig {
    let mut c = TrainConfig::preset(DatasetKind::Synthetic);
    c.spec = "Input-24FC-12FC-Voting-6".into();
    c.epochs = 3;
    c.batch_size = 16;
    c.frames = 8;
    c.timing = Timing::Off;
    c
}

#[test]
fn training_reduces_loss() {
    let cfg = TrainConfig {
        epochs: 6,
        ..small_cfg()
    };
    let (train, test) = (
        synthetic(Split::Train, 96, 8),
        synthetic(Split::Test, 48, 8),
    );
    let mut t = Trainer::new(cfg, &[64], Exec::Sequential).unwrap();
    let report = t.fit(&train, &test, None, |_| {}).unwrap();
    let losses: Vec<Real> = report.history.iter().map(|m| m.train_loss).collect();
    assert!(
        losses.last().unwrap() < losses.first().unwrap(),
        "{losses:?}"
    );
    assert!(report
        .history
        .iter()
        .all(|m| (0.0..=1.0).contains(&m.test_acc)));
}

#[test]
fn same_seed_same_history() {
    let (train, test) = (
        synthetic(Split::Train, 40, 8),
        synthetic(Split::Test, 20, 8),
    );
    let run = |exec| {
        let mut t = Trainer::new(small_cfg(), &[64], exec).unwrap();
        t.fit(&train, &test, None, |_| {}).unwrap()
    };
    let a = run(Exec::Sequential);
    assert_eq!(a, run(Exec::Sequential));
    assert_eq!(a, run(Exec::Parallel));
}

#[test]
fn sharding_is_schedule_independent() {
    let (train, test) = (
        synthetic(Split::Train, 40, 8),
        synthetic(Split::Test, 20, 8),
    );
    let cfg = TrainConfig {
        shards: 3,
        ..small_cfg()
    };
    let run = |exec| {
        let mut t = Trainer::new(cfg.clone(), &[64], exec).unwrap();
        t.fit(&train, &test, None, |_| {}).unwrap()
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}

#[test]
fn sharded_gradients_sum_to_the_batch_gradient() {
    let train = synthetic(Split::Train, 12, 8);
    let idx: Vec<usize> = (0..12).collect();
    let grads = |shards| {
        let cfg = TrainConfig {
            shards,
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg, &[64], Exec::Sequential).unwrap();
        let s = t.train_step(&train, &idx, 5).unwrap();
        let g: Vec<Tensor> = t.store.iter().map(|p| p.grad.clone()).collect();
        (s.loss, g)
    };
    let (l1, g1) = grads(1);
    let (l4, g4) = grads(4);
    assert!((l1 - l4).abs() < crate::tol(1e-12));
    for (a, b) in g1.iter().zip(&g4) {
        assert!(a.max_abs_diff(b).unwrap() < crate::tol(1e-12));
    }
}

#[test]
fn every_layer_receives_gradient() {
    let train = synthetic(Split::Train, 24, 8);
    let cfg = TrainConfig {
        policy: "P12".parse().unwrap(),
        ..small_cfg()
    };
    let mut t = Trainer::new(cfg, &[64], Exec::Sequential).unwrap();
    let idx: Vec<usize> = (0..24).collect();
    t.train_step(&train, &idx, 1).unwrap();
    let prefixes = [
        "stsc.1.trf",
        "stsc.1.fli",
        "fc.1.",
        "stsc.2.trf",
        "stsc.2.fli",
        "fc.2.",
    ];
    for pre in prefixes {
        let nonzero = t
            .store
            .iter()
            .filter(|p| p.name.starts_with(pre))
            .any(|p| p.grad.max_abs() > 0.0);
        assert!(nonzero, "no gradient reached {pre}");
    }
}

#[test]
fn checkpoint_reproduces_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (
        synthetic(Split::Train, 40, 8),
        synthetic(Split::Test, 30, 8),
    );
    let mut t = Trainer::new(small_cfg(), &[64], Exec::Sequential).unwrap();
    t.fit(&train, &test, Some(dir.path()), |_| {}).unwrap();
    let before = t.evaluate(&test).unwrap();
    let mut fresh = Trainer::new(
        TrainConfig {
            seed: 99,
            ..small_cfg()
        },
        &[64],
        Exec::Sequential,
    )
    .unwrap();
    fresh.load(&dir.path().join("final.ckpt")).unwrap();
    let after = fresh.evaluate(&test).unwrap();
    assert_eq!(before, after);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("best.ckpt").is_file());
}

#[test]
fn conv_network_trains_with_batch_norm() {
    let mut cfg = small_cfg();
    cfg.spec = "Input-2C3-AP2-0.5DP-6FC-Voting-3".into();
    cfg.policy = "P1".parse().unwrap();
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.shards = 2;
    let shape = vec![8, 2, 4, 4];
    let n = 8;
    let data: Vec<f32> = (0..n * 256).map(|i| ((i * 7919) % 5) as f32).collect();
    let set = FrameSet {
        sample_shape: shape,
        data,
        labels: (0..n).map(|i| i % 3).collect(),
    };
    let mut t = Trainer::new(cfg, &[2, 4, 4], Exec::Sequential).unwrap();
    let before = t
        .store
        .value(t.store.find("bn.1.running_mean").unwrap())
        .clone();
    t.fit(&set, &set, None, |_| {}).unwrap();
    let after = t.store.value(t.store.find("bn.1.running_mean").unwrap());
    assert_ne!(&before, after);
}

#[test]
fn rejects_mismatched_data() {
    let train = synthetic(Split::Train, 8, 6);
    let mut t = Trainer::new(small_cfg(), &[64], Exec::Sequential).unwrap();
    assert!(t.train_epoch(&train, 1).is_err());
}

#[test]
fn limit_split_is_seeded_subset() {
    let set = synthetic(Split::Train, 30, 4);
    let a = limit_split(&set, Some(10), 1).unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a, limit_split(&set, Some(10), 1).unwrap());
    assert_eq!(limit_split(&set, Some(100), 1).unwrap(), set);
}

fn arb_outputs() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..3).prop_flat_map(|(t, b, c, g)| {
        (
            proptest::collection::vec(0.0..1.0f64, t * b * c * g),
            proptest::collection::vec(0..c, b),
        )
            .prop_map(move |(data, labels)| {
                let data = data.into_iter().map(|v| v as Real).collect();
                (Tensor::new([t, b, c * g], data).unwrap(), labels)
            })
    })
}

proptest! {
    #[test]
    fn loss_is_non_negative((o, labels) in arb_outputs()) {
        let v = Voting::new(o.shape()[2], o.shape()[2]).unwrap();
        let (loss, _) = voting_mse(&o, &labels.iter().map(|&l| l % v.classes).collect::<Vec<_>>(), v).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn loss_is_zero_only_for_one_hot_scores((o, labels) in arb_outputs(), groups in 1usize..3) {
        let width = o.shape()[2];
        let classes = if width % groups == 0 { width / groups } else { width };
        let v = Voting::new(width, classes).unwrap();
        let labels: Vec<usize> = labels.iter().map(|&l| l % classes).collect();
        let (loss, scores) = voting_mse(&o, &labels, v).unwrap();
        let one_hot = scores.data().chunks(classes).zip(&labels).all(|(row, &l)| {
            row.iter().enumerate().all(|(i, &s)| s == if i == l { 1.0 } else { 0.0 })
        });
        prop_assert_eq!(loss == 0.0, one_hot);
    }

    #[test]
    fn scaling_outputs_keeps_predictions((o, labels) in arb_outputs(), k in 0.01f64..100.0) {
        let width = o.shape()[2];
        let v = Voting::new(width, width).unwrap();
        let labels: Vec<usize> = labels.iter().map(|&l| l % width).collect();
        let pred = |o: &Tensor| {
            let (_, s) = voting_mse(o, &labels, v).unwrap();
            s.data().chunks(width).map(crate::net::argmax).collect::<Vec<_>>()
        };
        let scaled = o.map(|x| x * k as Real);
        prop_assert_eq!(pred(&o), pred(&scaled));
    }
}
