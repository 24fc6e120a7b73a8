//! Finite-difference validation suite over every differentiable piece:
//! the primitives, the relaxed LIF recurrence, both STSC variants and the
//! voting loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::elementwise::{add, add_bias, mul, relu, reshape, scale, sigmoid, sum};
use crate::diff::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::diff::linalg::matmul;
use crate::diff::norm::{batchnorm, dropout, BatchNormMode};
use crate::diff::spatial::{broadcast_spatial, conv2d, pool2d, spatial_avg, PoolKind};
use crate::diff::temporal::{
    depthwise_tconv, depthwise_tconv1d, depthwise_tconv3d, tconv1d_mix, TemporalPadding,
};
use crate::diff::{Fault, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::Voting;
use crate::neuron::{lif, LifConfig};
use crate::stsc::{stsc_forward, StscVariant};
use crate::train::loss::voting_mse_loss;
use crate::Real;

pub const DEFAULT_SEEDS: usize = 20;
/// Bound for single primitives.
pub const PRIMITIVE_THRESHOLD: Real = 1e-6;
/// Bound for composites that chain several primitives (LIF, STSC).
pub const DEFAULT_THRESHOLD: Real = 1e-5;

type Inputs = Vec<Tensor>;
type CheckFn = fn(&mut ChaCha8Rng, &GradCheckConfig) -> Result<GradCheckReport>;

pub struct Check {
    pub name: &'static str,
    /// Tape op whose backward the fault-injection mode corrupts.
    pub op: &'static str,
    pub threshold: Real,
    run: CheckFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_error: Real,
    pub threshold: Real,
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error < self.threshold
    }
}

fn u(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from kinks.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: Real = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced well beyond the finite-difference step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| order[i] as Real * 0.1 - 1.0)
}

/// Operands in `[lo, hi)` with `0 < lo`. Products of these never cancel, so
/// every gradient entry stays well above the finite-difference noise floor
/// (about `ulp(f) / eps`).
fn pos(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    debug_assert!(lo > 0.0);
    u(rng, shape, lo, hi)
}

fn relaxed_lif() -> LifConfig {
    LifConfig {
        relaxed: true,
        ..LifConfig::new(2.0, 1.0)
    }
}

macro_rules! check {
    ($inputs:expr, $cfg:expr, |$tape:ident, $x:ident| $body:expr) => {{
        let inputs: Inputs = $inputs;
        grad_check(|$tape, $x| $body, &inputs, $cfg)
    }};
}

fn checks_list() -> Vec<Check> {
    vec![
        Check {
            name: "matmul",
            op: "matmul",
            threshold: 1e-7,
            run: |r, c| {
                check!(
                    vec![pos(r, &[3, 4], 0.1, 1.0), pos(r, &[4, 2], 0.1, 1.0)],
                    c,
                    |t, x| matmul(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "matmul chain",
            op: "matmul",
            threshold: 1e-7,
            run: |r, c| {
                check!(
                    vec![
                        pos(r, &[2, 3], 0.1, 1.0),
                        pos(r, &[3, 4], 0.1, 1.0),
                        pos(r, &[4, 2], 0.1, 1.0)
                    ],
                    c,
                    |t, x| {
                        let ab = matmul(t, x[0], x[1])?;
                        matmul(t, ab, x[2])
                    }
                )
            },
        },
        Check {
            name: "sigmoid(matmul)",
            op: "sigmoid",
            threshold: 1e-6,
            run: |r, c| {
                check!(
                    vec![pos(r, &[3, 4], 0.1, 0.6), pos(r, &[4, 3], 0.1, 0.6)],
                    c,
                    |t, x| {
                        let y = matmul(t, x[0], x[1])?;
                        sigmoid(t, y)
                    }
                )
            },
        },
        Check {
            name: "add",
            op: "add",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![u(r, &[3, 4], -1.0, 1.0), u(r, &[3, 4], -1.0, 1.0)],
                    c,
                    |t, x| add(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "mul",
            op: "mul",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![off_zero(r, &[3, 4]), off_zero(r, &[3, 4])],
                    c,
                    |t, x| mul(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "scale",
            op: "scale",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| check!(vec![u(r, &[5], -1.0, 1.0)], c, |t, x| scale(t, x[0], -1.7)),
        },
        Check {
            name: "sigmoid",
            op: "sigmoid",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| check!(vec![u(r, &[3, 4], -3.0, 3.0)], c, |t, x| sigmoid(t, x[0])),
        },
        Check {
            name: "relu",
            op: "relu",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| check!(vec![off_zero(r, &[3, 5])], c, |t, x| relu(t, x[0])),
        },
        Check {
            name: "sum",
            op: "sum",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| check!(vec![u(r, &[2, 3], -1.0, 1.0)], c, |t, x| sum(t, x[0])),
        },
        Check {
            name: "reshape",
            op: "reshape",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(vec![u(r, &[2, 6], -1.0, 1.0)], c, |t, x| reshape(
                    t,
                    x[0],
                    &[3, 4]
                ))
            },
        },
        Check {
            name: "add_bias",
            op: "add_bias",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![u(r, &[2, 3, 4], -1.0, 1.0), u(r, &[3], -1.0, 1.0)],
                    c,
                    |t, x| add_bias(t, x[0], x[1], 1)
                )
            },
        },
        Check {
            name: "depthwise_tconv1d",
            op: "depthwise_tconv",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                let k = [1, 3, 5][r.random_range(0..3)];
                check!(
                    vec![pos(r, &[6, 4], 0.1, 1.0), pos(r, &[k, 4], 0.1, 1.0)],
                    c,
                    |t, x| depthwise_tconv1d(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "depthwise_tconv1d causal",
            op: "depthwise_tconv",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![pos(r, &[6, 2, 3], 0.1, 1.0), pos(r, &[3, 3], 0.1, 1.0)],
                    c,
                    |t, x| { depthwise_tconv(t, x[0], x[1], 2, TemporalPadding::Causal) }
                )
            },
        },
        Check {
            name: "depthwise_tconv3d",
            op: "depthwise_tconv",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![pos(r, &[5, 2, 3, 3], 0.1, 1.0), pos(r, &[3, 2], 0.1, 1.0)],
                    c,
                    |t, x| depthwise_tconv3d(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "tconv1d_mix",
            op: "tconv_mix",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![pos(r, &[6, 3], 0.1, 1.0), pos(r, &[3, 3, 2], 0.1, 1.0)],
                    c,
                    |t, x| tconv1d_mix(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "conv2d",
            op: "conv2d",
            threshold: 1e-7,
            run: |r, c| {
                check!(
                    vec![
                        pos(r, &[2, 2, 4, 4], 0.1, 1.0),
                        pos(r, &[3, 2, 3, 3], 0.1, 1.0)
                    ],
                    c,
                    |t, x| conv2d(t, x[0], x[1])
                )
            },
        },
        Check {
            name: "pool2d max",
            op: "max_pool2d",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(vec![distinct(r, &[2, 2, 4, 4])], c, |t, x| pool2d(
                    t,
                    x[0],
                    PoolKind::Max,
                    2
                ))
            },
        },
        Check {
            name: "pool2d avg",
            op: "avg_pool2d",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(vec![u(r, &[2, 2, 4, 4], -1.0, 1.0)], c, |t, x| pool2d(
                    t,
                    x[0],
                    PoolKind::Avg,
                    2
                ))
            },
        },
        Check {
            name: "spatial_avg",
            op: "spatial_avg",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(vec![u(r, &[3, 2, 3, 3], -1.0, 1.0)], c, |t, x| spatial_avg(
                    t, x[0]
                ))
            },
        },
        Check {
            name: "broadcast_spatial",
            op: "broadcast_spatial",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(vec![u(r, &[3, 2], -1.0, 1.0)], c, |t, x| broadcast_spatial(
                    t, x[0], 2, 3
                ))
            },
        },
        Check {
            name: "dropout",
            op: "dropout",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                let mask_seed: u64 = r.random();
                check!(vec![u(r, &[4, 5], -1.0, 1.0)], c, |t, x| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
                    dropout(t, x[0], 0.3, Some(&mut rng))
                })
            },
        },
        Check {
            name: "batchnorm train",
            op: "batchnorm",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![
                        u(r, &[6, 3], -1.0, 1.0),
                        u(r, &[3], 0.5, 1.5),
                        u(r, &[3], -0.5, 0.5)
                    ],
                    c,
                    |t, x| {
                        // squared so the reduced output is not nearly constant; a
                        // small batch keeps the per-channel sums short
                        let y = batchnorm(t, x[0], x[1], x[2], 1, BatchNormMode::Train)?.0;
                        mul(t, y, y)
                    }
                )
            },
        },
        Check {
            name: "batchnorm eval",
            op: "batchnorm",
            threshold: PRIMITIVE_THRESHOLD,
            run: |r, c| {
                let mean = u(r, &[3], -0.5, 0.5);
                let var = u(r, &[3], 0.5, 1.5);
                check!(
                    vec![
                        u(r, &[4, 3, 2], -1.0, 1.0),
                        u(r, &[3], 0.5, 1.5),
                        u(r, &[3], -0.5, 0.5)
                    ],
                    c,
                    |t, x| {
                        let mode = BatchNormMode::Eval {
                            running_mean: &mean,
                            running_var: &var,
                        };
                        Ok(batchnorm(t, x[0], x[1], x[2], 1, mode)?.0)
                    }
                )
            },
        },
        Check {
            name: "lif relaxed (T=6, 8 units)",
            op: "lif",
            threshold: DEFAULT_THRESHOLD,
            run: |r, c| {
                check!(vec![u(r, &[6, 8], 0.0, 1.5)], c, |t, x| lif(
                    t,
                    x[0],
                    &relaxed_lif()
                ))
            },
        },
        Check {
            name: "stsc dense-1d",
            op: "tconv_mix",
            threshold: DEFAULT_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![
                        pos(r, &[6, 4], 0.1, 1.0),
                        pos(r, &[3, 4], 0.1, 1.0),
                        pos(r, &[3, 4, 2], 0.05, 0.3),
                        pos(r, &[2, 4], 0.05, 0.3),
                    ],
                    c,
                    |t, x| {
                        let y = stsc_forward(
                            t,
                            x[0],
                            Some(x[1]),
                            Some((x[2], x[3])),
                            StscVariant::Dense1d,
                            TemporalPadding::Symmetric,
                        )?;
                        lif(t, y, &relaxed_lif())
                    }
                )
            },
        },
        Check {
            name: "stsc conv-3d",
            op: "tconv_mix",
            threshold: DEFAULT_THRESHOLD,
            run: |r, c| {
                check!(
                    vec![
                        pos(r, &[5, 3, 2, 2], 0.1, 1.0),
                        pos(r, &[3, 3], 0.1, 1.0),
                        pos(r, &[3, 3, 2], 0.05, 0.3),
                        pos(r, &[2, 3], 0.05, 0.3),
                    ],
                    c,
                    |t, x| {
                        let y = stsc_forward(
                            t,
                            x[0],
                            Some(x[1]),
                            Some((x[2], x[3])),
                            StscVariant::Conv3d,
                            TemporalPadding::Symmetric,
                        )?;
                        lif(t, y, &relaxed_lif())
                    }
                )
            },
        },
        Check {
            name: "voting_mse_loss",
            op: "voting_mse",
            threshold: 1e-7,
            run: |r, c| {
                let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..2)).collect();
                check!(vec![u(r, &[4, 3, 6], 0.0, 1.0)], c, |t, x| {
                    let v = Voting::new(6, 2)?;
                    Ok(voting_mse_loss(t, x[0], &labels, v, 3.0)?.loss)
                })
            },
        },
    ]
}

pub fn checks() -> Vec<Check> {
    checks_list()
}

impl Check {
    /// Worst error over `seeds` seeded draws.
    pub fn run(&self, seeds: usize, inject_fault: bool) -> CheckResult {
        let mut worst: Real = 0.0;
        let mut error = None;
        for seed in 0..seeds as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cfg = GradCheckConfig::weighted(seed);
            if inject_fault {
                cfg.fault = Some(Fault {
                    op: self.op,
                    input: 0,
                    element: 0,
                    delta: 0.1,
                });
            }
            match (self.run)(&mut rng, &cfg) {
                Ok(report) => worst = worst.max(report.max_rel_error),
                Err(e) => {
                    error = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        CheckResult {
            name: self.name,
            seeds,
            max_rel_error: worst,
            threshold: self.threshold,
            error,
        }
    }
}

/// Runs every check. Needs 64-bit precision.
pub fn run_suite(seeds: usize, inject_fault: bool, exec: Exec) -> Result<Vec<CheckResult>> {
    if cfg!(feature = "single-precision") {
        return Err(Error::Unsupported(
            "gradient checks need a 64-bit build".into(),
        ));
    }
    let all = checks_list();
    Ok(exec.map(&all, |c| c.run(seeds, inject_fault)))
}

/// One line per check plus a summary line.
pub fn format_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let _ = write!(
            out,
            "{status}  {:<28} max_rel_err={:.3e}  threshold={:.0e}  seeds={}",
            r.name, r.max_rel_error, r.threshold, r.seeds
        );
        if let Some(e) = &r.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(out, "{} checks, {} failed", results.len(), failed);
    out
}
