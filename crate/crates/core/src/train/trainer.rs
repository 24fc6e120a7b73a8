//! Mini-batch BPTT training loop.
//!
//! A batch is split into `shards` contiguous pieces. Each shard runs its
//! forward and backward pass on its own tape (possibly in parallel); the
//! parameter gradients are then summed in shard order and one Adam step is
//! taken, so results depend on the shard count but not on scheduling.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::checkpoint::{load_checkpoint, save_checkpoint, StoredPrecision};
use crate::diff::{ParamId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::events::dataset::FrameSet;
use crate::exec::Exec;
use crate::net::network::{merge_batch_stats, update_running_stats, BnObservation};
use crate::net::{Mode, Network};
use crate::train::adam::Adam;
use crate::train::config::{Timing, TrainConfig};
use crate::train::loss::voting_mse_loss;
use crate::Real;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

/// Deterministic seed derived from a list of integers (SplitMix64 mixing).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// A seeded random subset of `limit` samples, kept in original order.
pub fn limit_split(set: &FrameSet, limit: Option<usize>, seed: u64) -> Result<FrameSet> {
    match limit {
        Some(n) if n < set.len() => {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(n);
            idx.sort_unstable();
            set.subset(&idx)
        }
        _ => Ok(set.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: Real,
    pub train_acc: Real,
    pub test_acc: Real,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: Real,
    pub accuracy: Real,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_test_acc: Real,
    pub final_test_acc: Real,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Batch-mean loss.
    pub loss: Real,
    pub correct: usize,
    pub samples: usize,
}

struct ShardResult {
    loss: Real,
    correct: usize,
    grads: Vec<(ParamId, Tensor)>,
    bn: Vec<BnObservation>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: Network,
    pub store: ParamStore,
    pub adam: Adam,
    pub exec: Exec,
}

fn contiguous_shards(n: usize, shards: usize) -> Vec<std::ops::Range<usize>> {
    let k = shards.clamp(1, n.max(1));
    (0..k).map(|i| i * n / k..(i + 1) * n / k).collect()
}

impl Trainer {
    pub fn new(cfg: TrainConfig, input_dims: &[usize], exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.network_spec()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0]));
        let net = Network::build(&spec, input_dims, cfg.net_config(), &mut store, &mut rng)?;
        let adam = Adam::new(cfg.learning_rate, &store);
        log::info!(
            "built {} with {} trainable parameters (bias {})",
            spec,
            net.num_params(&store),
            if cfg.bias { "on" } else { "off" }
        );
        Ok(Trainer {
            cfg,
            net,
            store,
            adam,
            exec,
        })
    }

    fn check_set(&self, set: &FrameSet) -> Result<()> {
        if set.frames() != self.cfg.frames || set.spatial_shape() != self.net.input_dims.as_slice()
        {
            return Err(invalid!(
                "data samples are {:?}, network expects [{}, {:?}]",
                set.sample_shape,
                self.cfg.frames,
                self.net.input_dims
            ));
        }
        Ok(())
    }

    fn run_shard(
        &self,
        set: &FrameSet,
        indices: &[usize],
        normalizer: Real,
        seed: u64,
    ) -> Result<ShardResult> {
        let (x, labels) = set.batch(indices)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let fwd = self
            .net
            .forward(&mut tape, &self.store, x, Mode::Train(&mut rng))?;
        let out = voting_mse_loss(&mut tape, fwd.output, &labels, self.net.voting, normalizer)?;
        let loss = tape.value(out.loss).data()[0];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss is {loss}")));
        }
        let correct = out
            .predictions()
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        let grads = tape.backward(out.loss)?;
        Ok(ShardResult {
            loss,
            correct,
            grads: tape.take_param_grads(grads),
            bn: fwd.bn,
        })
    }

    /// One optimizer step on the samples at `indices`.
    pub fn train_step(
        &mut self,
        set: &FrameSet,
        indices: &[usize],
        seed: u64,
    ) -> Result<StepStats> {
        if indices.is_empty() {
            return Err(invalid!("empty batch"));
        }
        let normalizer = indices.len() as Real;
        let ranges = contiguous_shards(indices.len(), self.cfg.shards);
        let results = {
            let this = &*self;
            this.exec.map(&ranges, |r| {
                this.run_shard(
                    set,
                    &indices[r.clone()],
                    normalizer,
                    derive_seed(&[seed, r.start as u64]),
                )
            })
        };
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        self.store.zero_grad();
        let mut stats = StepStats {
            loss: 0.0,
            correct: 0,
            samples: indices.len(),
        };
        for r in &results {
            self.store.accumulate_grads(&r.grads)?;
            stats.loss += r.loss;
            stats.correct += r.correct;
        }
        let layers = results[0].bn.len();
        for j in 0..layers {
            let parts: Vec<_> = results.iter().map(|r| r.bn[j].stats.clone()).collect();
            let obs = BnObservation {
                stats: merge_batch_stats(&parts)?,
                ..results[0].bn[j].clone()
            };
            update_running_stats(&mut self.store, &obs)?;
        }
        self.adam.step(&mut self.store)?;
        Ok(stats)
    }

    /// Shuffled pass over `set`; returns mean batch loss and accuracy.
    pub fn train_epoch(&mut self, set: &FrameSet, epoch: usize) -> Result<(Real, Real)> {
        self.check_set(set)?;
        if set.is_empty() {
            return Err(invalid!("training set is empty"));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
            self.cfg.seed,
            1,
            epoch as u64,
        ])));
        let (mut loss, mut correct, mut batches) = (0.0, 0, 0);
        for (step, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let seed = derive_seed(&[self.cfg.seed, 2, epoch as u64, step as u64]);
            let s = self.train_step(set, batch, seed)?;
            loss += s.loss;
            correct += s.correct;
            batches += 1;
        }
        Ok((loss / batches as Real, correct as Real / set.len() as Real))
    }

    pub fn evaluate(&self, set: &FrameSet) -> Result<Evaluation> {
        self.check_set(set)?;
        if set.is_empty() {
            return Ok(Evaluation {
                loss: 0.0,
                accuracy: 0.0,
                predictions: Vec::new(),
            });
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(self.cfg.batch_size).collect();
        let n = set.len() as Real;
        let parts = self
            .exec
            .map(&chunks, |chunk| -> Result<(Real, Vec<usize>)> {
                let (x, labels) = set.batch(chunk)?;
                let mut tape = Tape::new();
                let x = tape.constant(x);
                let fwd = self.net.forward(&mut tape, &self.store, x, Mode::Eval)?;
                let out = voting_mse_loss(&mut tape, fwd.output, &labels, self.net.voting, n)?;
                Ok((tape.value(out.loss).data()[0], out.predictions()))
            });
        let mut loss = 0.0;
        let mut predictions = Vec::with_capacity(set.len());
        for p in parts {
            let (l, pred) = p?;
            loss += l;
            predictions.extend(pred);
        }
        let correct = predictions
            .iter()
            .zip(&set.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(Evaluation {
            loss,
            accuracy: correct as Real / n,
            predictions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let precision = if cfg!(feature = "single-precision") {
            StoredPrecision::F32
        } else {
            StoredPrecision::F64
        };
        save_checkpoint(path, &self.store, precision)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        load_checkpoint(path, &mut self.store)
    }

    /// Trains for `cfg.epochs` epochs, evaluating on `test` after each.
    /// With `out`, writes `config.txt`, `metrics.csv`, `best.ckpt` and
    /// `final.ckpt` there.
    pub fn fit(
        &mut self,
        train: &FrameSet,
        test: &FrameSet,
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<TrainReport> {
        self.check_set(train)?;
        self.check_set(test)?;
        let mut csv = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let cfg_path = dir.join("config.txt");
                fs::write(&cfg_path, self.cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
                let path = dir.join("metrics.csv");
                let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                Some((w, path))
            }
            None => None,
        };
        let mut report = TrainReport {
            history: Vec::new(),
            best_epoch: 0,
            best_test_acc: Real::NEG_INFINITY,
            final_test_acc: 0.0,
        };
        for epoch in 1..=self.cfg.epochs {
            let start = Instant::now();
            let (train_loss, train_acc) = self.train_epoch(train, epoch)?;
            let eval = self.evaluate(test)?;
            let seconds = match self.cfg.timing {
                Timing::Wall => start.elapsed().as_secs_f64(),
                Timing::Off => 0.0,
            };
            let m = EpochMetrics {
                epoch,
                train_loss,
                train_acc,
                test_acc: eval.accuracy,
                seconds,
            };
            if let Some((w, path)) = csv.as_mut() {
                writeln!(w, "{}", m.csv_row())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(&*path, e))?;
            }
            if eval.accuracy > report.best_test_acc {
                report.best_test_acc = eval.accuracy;
                report.best_epoch = epoch;
                if let Some(dir) = out {
                    self.save(&dir.join("best.ckpt"))?;
                }
            }
            report.final_test_acc = eval.accuracy;
            report.history.push(m);
            on_epoch(&m);
        }
        if let Some(dir) = out {
            self.save(&dir.join("final.ckpt"))?;
        }
        Ok(report)
    }
}

/// Paths written by [`Trainer::fit`].
pub fn run_files(dir: &Path) -> [PathBuf; 4] {
    ["config.txt", "metrics.csv", "best.ckpt", "final.ckpt"].map(|f| dir.join(f))
}
