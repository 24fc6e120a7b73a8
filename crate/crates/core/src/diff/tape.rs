//! Operation tape for reverse-mode differentiation.
//!
//! Every primitive pushes one record holding its output value, the handles of
//! its inputs and a closed-form vector-Jacobian map. `backward` walks the
//! records once, newest first. Records only reference older records, so the
//! tape is acyclic by construction.

use std::ops::Deref;

use crate::diff::{ParamId, ParamStore, Tensor};
use crate::error::{invalid, Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a backward map.
pub(crate) struct BackwardArgs<'a> {
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    /// Which inputs need a gradient; maps may skip the others.
    pub needs: &'a [bool],
}

pub(crate) trait Backward {
    /// One entry per input. `None` means "no gradient" (not needed or
    /// identically zero).
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>>;
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Record<'p> {
    name: &'static str,
    value: Value<'p>,
    inputs: Vec<NodeId>,
    op: Option<Box<dyn Backward + 'p>>,
    requires_grad: bool,
}

/// Perturbation added to one partial derivative during backward. Used to
/// confirm that the gradient checker notices a broken backward map.
#[derive(Debug, Clone, Copy)]
pub struct Fault {
    pub op: &'static str,
    pub input: usize,
    pub element: usize,
    pub delta: Real,
}

#[derive(Default)]
pub struct Tape<'p> {
    records: Vec<Record<'p>>,
    params: Vec<(ParamId, NodeId)>,
    fault: Option<Fault>,
}

/// Gradients of the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            params: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Value::Owned(value), true)
    }

    /// Input that never receives a gradient (data, labels, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Value::Owned(value), false)
    }

    /// Bind a registered parameter. Binding the same parameter twice returns
    /// the existing handle so its gradient is summed over all uses.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.params.iter().find(|(p, _)| *p == id) {
            return node;
        }
        let param = store.get(id);
        let node = self.push_leaf(Value::Borrowed(&param.value), param.trainable);
        self.params.push((id, node));
        node
    }

    fn push_leaf(&mut self, value: Value<'p>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.records.len());
        self.records.push(Record {
            name: "leaf",
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        id
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor,
        inputs: &[NodeId],
        op: impl Backward + 'p,
    ) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.records[i.0].requires_grad);
        let id = NodeId(self.records.len());
        self.records.push(Record {
            name,
            value: Value::Owned(value),
            inputs: inputs.to_vec(),
            op: if requires_grad {
                Some(Box::new(op))
            } else {
                None
            },
            requires_grad,
        });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.records[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.records[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.records[id.0].requires_grad
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.records[id.0].name
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    /// Backward from `output` seeded with ones.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let seed = Tensor::full(self.shape(output).to_vec(), 1.0);
        self.backward_with(output, seed)
    }

    /// Backward from `output` seeded with `seed` (the upstream gradient).
    pub fn backward_with(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        let out = self
            .records
            .get(output.0)
            .ok_or_else(|| Error::State(format!("node {} is not on this tape", output.0)))?;
        seed.expect_shape(out.value.shape())?;

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let rec = &self.records[idx];
            let Some(op) = &rec.op else { continue };
            let Some(grad) = grads[idx].take() else {
                continue;
            };

            let inputs: Vec<&Tensor> = rec.inputs.iter().map(|i| self.value(*i)).collect();
            let needs: Vec<bool> = rec.inputs.iter().map(|i| self.requires_grad(*i)).collect();
            let mut partials = op.backward(&BackwardArgs {
                inputs: &inputs,
                output: &rec.value,
                grad: &grad,
                needs: &needs,
            })?;
            if partials.len() != rec.inputs.len() {
                return Err(Error::State(format!(
                    "{} returned {} partials for {} inputs",
                    rec.name,
                    partials.len(),
                    rec.inputs.len()
                )));
            }
            if let Some(f) = self.fault.filter(|f| f.op == rec.name) {
                if let Some(Some(p)) = partials.get_mut(f.input) {
                    p.data_mut()[f.element] += f.delta;
                }
            }

            for ((input, partial), need) in rec.inputs.iter().zip(partials).zip(&needs) {
                let (Some(partial), true) = (partial, *need) else {
                    continue;
                };
                if partial.shape() != self.shape(*input) {
                    return Err(invalid!(
                        "{} produced a gradient of shape {:?} for an input of shape {:?}",
                        rec.name,
                        partial.shape(),
                        self.shape(*input)
                    ));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&partial)?,
                    slot => *slot = Some(partial),
                }
            }
            // Intermediate gradients are no longer needed once propagated.
            grads[idx] = None;
        }
        Ok(Gradients { grads })
    }

    /// Parameter gradients from a backward pass, in binding order.
    pub fn param_grads<'g>(&self, grads: &'g Gradients) -> Vec<(ParamId, &'g Tensor)> {
        self.params
            .iter()
            .filter_map(|&(p, node)| grads.get(node).map(|g| (p, g)))
            .collect()
    }

    /// Move the parameter gradients out of a backward result. The returned
    /// list no longer borrows the tape, so it can be added into the store
    /// once the tape is dropped.
    pub fn take_param_grads(&self, mut grads: Gradients) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .filter_map(|&(p, node)| grads.take(node).map(|g| (p, g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::elementwise::{mul, sum};
    use crate::diff::linalg::matmul;

    #[test]
    fn backward_accumulates_into_parameters() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new([2, 2], vec![0.3, -1.1, 0.7, 2.0]).unwrap());
        let step = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new([1, 2], vec![1.5, -0.25]).unwrap());
            let wn = tape.param(store, w);
            let y = matmul(&mut tape, x, wn).unwrap();
            let y = mul(&mut tape, y, y).unwrap();
            let loss = sum(&mut tape, y).unwrap();
            let g = tape.backward(loss).unwrap();
            tape.take_param_grads(g)
        };
        let once = step(&store);
        store.accumulate_grads(&once).unwrap();
        let first = store.get(w).grad.clone();
        assert!(first.max_abs() > 0.0);
        let again = step(&store);
        store.accumulate_grads(&again).unwrap();
        let doubled = first.map(|v| 2.0 * v);
        assert_eq!(store.get(w).grad, doubled);
        store.zero_grad();
        assert_eq!(store.get(w).grad.max_abs(), 0.0);
    }

    #[test]
    fn shared_node_is_visited_once_per_use() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([1], vec![3.0]).unwrap());
        let y = mul(&mut tape, x, x).unwrap();
        let z = mul(&mut tape, y, x).unwrap();
        let g = tape.backward(z).unwrap();
        // d(x^3)/dx
        assert_eq!(g.get(x).unwrap().data(), &[27.0]);
    }
}
