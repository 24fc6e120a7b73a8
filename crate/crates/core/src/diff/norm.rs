//! Dropout and batch normalization.

use rand::Rng;

use crate::diff::elementwise::split_axis;
use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::Real;

struct DropoutOp {
    mask: Tensor,
}

impl Backward for DropoutOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(args.grad.zip_map(&self.mask, |g, m| g * m)?)])
    }
}

/// Inverted dropout. Each element (so each timestep independently) is zeroed
/// with probability `p` and survivors are scaled by `1/(1-p)`. Pass `None`
/// for evaluation, where the op is the identity.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: NodeId,
    p: Real,
    rng: Option<&mut R>,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid!("dropout probability must be in [0, 1), got {p}"));
    }
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let xv = tape.value(x);
    let mask = Tensor::from_fn(xv.shape().to_vec(), |_| {
        if rng.random::<Real>() < p {
            0.0
        } else {
            keep
        }
    });
    let out = xv.zip_map(&mask, |a, m| a * m)?;
    Ok(tape.push("dropout", out, &[x], DropoutOp { mask }))
}

/// Batch statistics observed in training mode, for running-average updates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance.
    pub var: Tensor,
    pub count: usize,
}

pub enum BatchNormMode<'a> {
    Train,
    Eval {
        running_mean: &'a Tensor,
        running_var: &'a Tensor,
    },
}

struct BatchNormOp {
    axis: usize,
    /// Normalized input.
    xhat: Tensor,
    /// `1 / sqrt(var + eps)` per channel.
    inv_std: Vec<Real>,
    train: bool,
}

impl Backward for BatchNormOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let gamma = args.inputs[1].data();
        let g = args.grad.data();
        let xh = self.xhat.data();
        let (outer, c, inner) = split_axis(args.grad.shape(), self.axis);
        let n = (outer * inner) as Real;

        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xh[i];
                }
            }
        }

        let dx = args.needs[0].then(|| {
            let mut dx = Tensor::zeros(args.grad.shape().to_vec());
            let d = dx.data_mut();
            for o in 0..outer {
                for ch in 0..c {
                    let k = gamma[ch] * self.inv_std[ch];
                    let base = (o * c + ch) * inner;
                    for i in base..base + inner {
                        d[i] = if self.train {
                            k * (g[i] - sum_g[ch] / n - xh[i] * sum_gx[ch] / n)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            dx
        });
        let dgamma = args.needs[1]
            .then(|| Tensor::new([c], sum_gx.clone()))
            .transpose()?;
        let dbeta = args.needs[2]
            .then(|| Tensor::new([c], sum_g.clone()))
            .transpose()?;
        Ok(vec![dx, dgamma, dbeta])
    }
}

pub const BN_EPS: Real = 1e-5;

/// Per-channel normalization along `axis`, statistics pooled over every
/// other axis. Returns the output and, in training mode, the batch
/// statistics.
pub fn batchnorm(
    tape: &mut Tape<'_>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    axis: usize,
    mode: BatchNormMode<'_>,
) -> Result<(NodeId, Option<BatchStats>)> {
    let xv = tape.value(x);
    if axis >= xv.rank() {
        return Err(invalid!(
            "batchnorm axis {axis} out of range for {:?}",
            xv.shape()
        ));
    }
    let (outer, c, inner) = split_axis(xv.shape(), axis);
    for (name, t) in [("gamma", tape.value(gamma)), ("beta", tape.value(beta))] {
        if t.shape() != [c] {
            return Err(invalid!(
                "batchnorm {name} must be [{c}], got {:?}",
                t.shape()
            ));
        }
    }
    let n = outer * inner;
    let xd = xv.data();

    let (mean, var, stats) = match mode {
        BatchNormMode::Train => {
            if n < 2 {
                return Err(invalid!(
                    "batchnorm needs at least two values per channel in training, got {n}"
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    mean[ch] += xd[base..base + inner].iter().sum::<Real>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as Real);
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    var[ch] += xd[base..base + inner]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<Real>();
                }
            }
            let unbiased: Vec<Real> = var.iter().map(|v| v / (n - 1) as Real).collect();
            var.iter_mut().for_each(|v| *v /= n as Real);
            let stats = BatchStats {
                mean: Tensor::new([c], mean.clone())?,
                var: Tensor::new([c], unbiased)?,
                count: n,
            };
            (mean, var, Some(stats))
        }
        BatchNormMode::Eval {
            running_mean,
            running_var,
        } => {
            running_mean.expect_shape(&[c])?;
            running_var.expect_shape(&[c])?;
            (
                running_mean.data().to_vec(),
                running_var.data().to_vec(),
                None,
            )
        }
    };

    let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(xv.shape().to_vec());
    let mut out = Tensor::zeros(xv.shape().to_vec());
    let (gd, bd) = (tape.value(gamma).data(), tape.value(beta).data());
    {
        let (xh, od) = (xhat.data_mut(), out.data_mut());
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    xh[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    od[i] = gd[ch] * xh[i] + bd[ch];
                }
            }
        }
    }
    let op = BatchNormOp {
        axis,
        xhat,
        inv_std,
        train: stats.is_some(),
    };
    Ok((tape.push("batchnorm", out, &[x, gamma, beta], op), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([4, 4], 2.0));
        let y = dropout::<ChaCha8Rng>(&mut tape, x, 0.5, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1000], 1.0));
        let y = dropout(&mut tape, x, 0.5, Some(&mut rng)).unwrap();
        let v = tape.value(y);
        assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.data().iter().filter(|&&e| e > 0.0).count();
        assert!((400..600).contains(&kept), "kept {kept}");
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([4, 2, 3], |i| (i * i) as Real * 0.1));
        let g = tape.leaf(Tensor::full([2], 1.0));
        let b = tape.leaf(Tensor::zeros([2]));
        let (y, stats) = batchnorm(&mut tape, x, g, b, 1, BatchNormMode::Train).unwrap();
        assert_eq!(stats.unwrap().count, 12);
        let y = tape.value(y);
        for ch in 0..2 {
            let vals: Vec<Real> = (0..4)
                .flat_map(|o| (0..3).map(move |i| (o, i)))
                .map(|(o, i)| y.at(&[o, ch, i]))
                .collect();
            let mean: Real = vals.iter().sum::<Real>() / 12.0;
            let var: Real = vals.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / 12.0;
            assert!(mean.abs() < crate::tol(1e-12));
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
