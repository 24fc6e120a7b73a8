//! Voting mean-squared-error loss.
//!
//! `scores[b, i]` is the time average of the outputs voted into class `i`;
//! the loss of a batch is `sum_b sum_i (y[b, i] - scores[b, i])^2 / B` with
//! one-hot targets `y`.

use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::net::{argmax, Voting};
use crate::Real;

pub struct LossOutput {
    pub loss: NodeId,
    /// `[B, C]`.
    pub scores: Tensor,
}

impl LossOutput {
    pub fn predictions(&self) -> Vec<usize> {
        let c = self.scores.shape()[1];
        self.scores.data().chunks(c).map(argmax).collect()
    }
}

struct VotingMseOp {
    voting: Voting,
    residual: Tensor,
    normalizer: Real,
}

impl Backward for VotingMseOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let shape = args.inputs[0].shape();
        let (t, b, l) = (shape[0], shape[1], shape[2]);
        let g = self.voting.group();
        let c = self.voting.classes;
        let k = args.grad.data()[0] * 2.0 / (self.normalizer * (t * g) as Real);
        let r = self.residual.data();
        let d = Tensor::from_fn([t, b, l], |i| {
            let bi = (i / l) % b;
            k * r[bi * c + (i % l) / g]
        });
        Ok(vec![Some(d)])
    }
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(invalid!("{} labels for a batch of {batch}", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid!("label {l} out of range for {classes} classes"));
    }
    Ok(())
}

/// Loss on a tape. The sum over samples is divided by `normalizer`, which
/// is the batch size for a whole batch; a shard of a batch passes the full
/// batch size so shard losses and gradients add up to the batch values.
pub fn voting_mse_loss(
    tape: &mut Tape<'_>,
    o: NodeId,
    labels: &[usize],
    voting: Voting,
    normalizer: Real,
) -> Result<LossOutput> {
    let ov = tape.value(o);
    let scores = voting.scores(ov)?;
    let b = ov.shape()[1];
    check_labels(labels, b, voting.classes)?;
    if !(normalizer > 0.0) {
        return Err(invalid!("loss normalizer must be positive"));
    }
    let c = voting.classes;
    let residual = Tensor::from_fn([b, c], |i| {
        let target = if labels[i / c] == i % c { 1.0 } else { 0.0 };
        scores.data()[i] - target
    });
    let loss = residual.data().iter().map(|r| r * r).sum::<Real>() / normalizer;
    let op = VotingMseOp {
        voting,
        residual,
        normalizer,
    };
    let loss = tape.push("voting_mse", Tensor::scalar(loss), &[o], op);
    Ok(LossOutput { loss, scores })
}

/// Value-only form: batch-mean loss and scores.
pub fn voting_mse(o: &Tensor, labels: &[usize], voting: Voting) -> Result<(Real, Tensor)> {
    let mut tape = Tape::new();
    let node = tape.constant(o.clone());
    let b = o.shape().get(1).copied().unwrap_or(0).max(1);
    let out = voting_mse_loss(&mut tape, node, labels, voting, b as Real)?;
    Ok((tape.value(out.loss).data()[0], out.scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let o = Tensor::new([1, 1, 4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let (loss, scores) = voting_mse(&o, &[1], Voting::new(4, 2).unwrap()).unwrap();
        assert_eq!(scores.data(), &[0.5, 1.0]);
        assert!((loss - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_pattern_has_zero_loss() {
        let v = Voting::new(6, 3).unwrap();
        let o = Tensor::from_fn([4, 2, 6], |i| {
            let (b, n) = ((i / 6) % 2, i % 6);
            let target = [2, 0][b];
            if n / 2 == target {
                1.0
            } else {
                0.0
            }
        });
        let (loss, _) = voting_mse(&o, &[2, 0], v).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let o = Tensor::zeros([1, 1, 4]);
        assert!(voting_mse(&o, &[2], Voting::new(4, 2).unwrap()).is_err());
        assert!(voting_mse(&o, &[0, 1], Voting::new(4, 2).unwrap()).is_err());
    }

    #[test]
    fn prediction_prefers_lowest_index_on_ties() {
        let mut tape = Tape::new();
        let o = tape.constant(Tensor::new([1, 1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let out = voting_mse_loss(&mut tape, o, &[0], Voting::new(4, 2).unwrap(), 1.0).unwrap();
        assert_eq!(out.predictions(), vec![0]);
    }
}
