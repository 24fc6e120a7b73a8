//! Shape-preserving element-wise primitives, reductions and reshapes.

use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::Real;

struct AddOp;

impl Backward for AddOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(args
            .needs
            .iter()
            .map(|&n| n.then(|| args.grad.clone()))
            .collect())
    }
}

pub fn add(tape: &mut Tape<'_>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = tape.value(a).zip_map(tape.value(b), |x, y| x + y)?;
    Ok(tape.push("add", out, &[a, b], AddOp))
}

struct MulOp;

impl Backward for MulOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let [a, b] = args.inputs else { unreachable!() };
        let da = if args.needs[0] {
            Some(args.grad.zip_map(b, |g, y| g * y)?)
        } else {
            None
        };
        let db = if args.needs[1] {
            Some(args.grad.zip_map(a, |g, x| g * x)?)
        } else {
            None
        };
        Ok(vec![da, db])
    }
}

/// Element-wise (Hadamard) product of equally shaped tensors.
pub fn mul(tape: &mut Tape<'_>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = tape.value(a).zip_map(tape.value(b), |x, y| x * y)?;
    Ok(tape.push("mul", out, &[a, b], MulOp))
}

struct ScaleOp(Real);

impl Backward for ScaleOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let c = self.0;
        Ok(vec![Some(args.grad.map(|g| g * c))])
    }
}

pub fn scale(tape: &mut Tape<'_>, a: NodeId, factor: Real) -> Result<NodeId> {
    let out = tape.value(a).map(|x| x * factor);
    Ok(tape.push("scale", out, &[a], ScaleOp(factor)))
}

#[inline]
pub fn sigmoid_scalar(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SigmoidOp;

impl Backward for SigmoidOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(
            args.grad.zip_map(args.output, |g, y| g * y * (1.0 - y))?,
        )])
    }
}

pub fn sigmoid(tape: &mut Tape<'_>, a: NodeId) -> Result<NodeId> {
    let out = tape.value(a).map(sigmoid_scalar);
    Ok(tape.push("sigmoid", out, &[a], SigmoidOp))
}

struct ReluOp;

impl Backward for ReluOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = args.inputs[0];
        Ok(vec![Some(args.grad.zip_map(x, |g, v| {
            if v > 0.0 {
                g
            } else {
                0.0
            }
        })?)])
    }
}

pub fn relu(tape: &mut Tape<'_>, a: NodeId) -> Result<NodeId> {
    let out = tape.value(a).map(|x| x.max(0.0));
    Ok(tape.push("relu", out, &[a], ReluOp))
}

struct SumOp;

impl Backward for SumOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = args.grad.data()[0];
        Ok(vec![Some(Tensor::full(args.inputs[0].shape().to_vec(), g))])
    }
}

/// Sum of all elements as a rank-0 tensor.
pub fn sum(tape: &mut Tape<'_>, a: NodeId) -> Result<NodeId> {
    let out = Tensor::scalar(tape.value(a).sum());
    Ok(tape.push("sum", out, &[a], SumOp))
}

struct WeightedSumOp(Tensor);

impl Backward for WeightedSumOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = args.grad.data()[0];
        Ok(vec![Some(self.0.map(|w| w * g))])
    }
}

/// `sum(weights * a)` as a rank-0 tensor; `weights` is a constant.
pub fn weighted_sum(tape: &mut Tape<'_>, a: NodeId, weights: Tensor) -> Result<NodeId> {
    let x = tape.value(a);
    weights.expect_shape(x.shape())?;
    let s: Real = x
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum();
    Ok(tape.push(
        "weighted_sum",
        Tensor::scalar(s),
        &[a],
        WeightedSumOp(weights),
    ))
}

struct ReshapeOp;

impl Backward for ReshapeOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(
            args.grad.clone().reshape(args.inputs[0].shape().to_vec())?,
        )])
    }
}

pub fn reshape(tape: &mut Tape<'_>, a: NodeId, shape: &[usize]) -> Result<NodeId> {
    if tape.shape(a) == shape {
        return Ok(a);
    }
    let out = tape.value(a).clone().reshape(shape.to_vec())?;
    Ok(tape.push("reshape", out, &[a], ReshapeOp))
}

/// View of a tensor as `[outer, channels, inner]` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct AddBiasOp {
    axis: usize,
}

impl Backward for AddBiasOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let dx = args.needs[0].then(|| args.grad.clone());
        let db = if args.needs[1] {
            let (outer, c, inner) = split_axis(args.grad.shape(), self.axis);
            let g = args.grad.data();
            let mut db = vec![0.0; c];
            for o in 0..outer {
                for (ch, acc) in db.iter_mut().enumerate() {
                    let base = (o * c + ch) * inner;
                    *acc += g[base..base + inner].iter().sum::<Real>();
                }
            }
            Some(Tensor::new([c], db)?)
        } else {
            None
        };
        Ok(vec![dx, db])
    }
}

/// Adds a per-channel bias `b[c]` along `axis` of `x`.
pub fn add_bias(tape: &mut Tape<'_>, x: NodeId, bias: NodeId, axis: usize) -> Result<NodeId> {
    let xv = tape.value(x);
    let bv = tape.value(bias);
    if axis >= xv.rank() || bv.shape() != [xv.shape()[axis]] {
        return Err(invalid!(
            "bias of shape {:?} does not match axis {} of {:?}",
            bv.shape(),
            axis,
            xv.shape()
        ));
    }
    let (outer, c, inner) = split_axis(xv.shape(), axis);
    let mut out = xv.clone();
    let b = bv.data();
    let data = out.data_mut();
    for o in 0..outer {
        for (ch, &bc) in b.iter().enumerate().take(c) {
            let base = (o * c + ch) * inner;
            data[base..base + inner].iter_mut().for_each(|v| *v += bc);
        }
    }
    Ok(tape.push("add_bias", out, &[x, bias], AddBiasOp { axis }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0).is_finite());
        assert!(sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn mul_gradients_swap_operands() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new([2], vec![2.0, 3.0]).unwrap());
        let b = tape.leaf(Tensor::new([2], vec![5.0, 7.0]).unwrap());
        let y = mul(&mut tape, a, b).unwrap();
        let s = sum(&mut tape, y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn shared_input_gradients_add_up() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new([1], vec![3.0]).unwrap());
        let y = mul(&mut tape, a, a).unwrap();
        let s = sum(&mut tape, y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new([1], vec![3.0]).unwrap());
        let c = tape.constant(Tensor::new([1], vec![4.0]).unwrap());
        let y = mul(&mut tape, a, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(a).unwrap().data(), &[4.0]);
    }

    #[test]
    fn bias_broadcasts_along_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3, 2]));
        let b = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = add_bias(&mut tape, x, b, 1).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
        );
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0, 4.0]);
    }
}
