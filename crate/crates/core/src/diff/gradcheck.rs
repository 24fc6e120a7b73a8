//! Central finite-difference check of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::elementwise::{sum, weighted_sum};
use crate::diff::tape::Fault;
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::Real;

/// How a non-scalar output is reduced to the scalar that is differentiated.
#[derive(Debug, Clone, Copy)]
pub enum Reduction {
    Sum,
    /// `sum(w * y)` with fixed weights drawn from `[0.5, 1.5)`. Plain sums
    /// hide errors in maps whose outputs sum to a constant (normalization).
    Weighted {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: Real,
    pub reduction: Reduction,
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            reduction: Reduction::Sum,
            fault: None,
        }
    }
}

impl GradCheckConfig {
    pub fn weighted(seed: u64) -> Self {
        GradCheckConfig {
            reduction: Reduction::Weighted { seed },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over every element of every input of `|a-b| / max(|a|,|b|,1e-8)`.
    pub max_rel_error: Real,
    pub per_input: Vec<Real>,
    pub evaluations: usize,
}

pub fn relative_error(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `inputs` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, one element at a time.
///
/// `f` receives one leaf handle per input and returns the output handle.
/// It must be deterministic (reseed any randomness inside).
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &[NodeId]) -> Result<NodeId>,
{
    let mut weights: Option<Tensor> = None;
    let mut evaluate = |values: &[Tensor], want_grad: bool| -> Result<(Real, Vec<Tensor>)> {
        let mut tape = Tape::new();
        if let Some(fault) = cfg.fault {
            tape.inject_fault(fault);
        }
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        if !tape.value(out).all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {}",
                tape.op_name(out)
            )));
        }
        let scalar = match cfg.reduction {
            Reduction::Sum => sum(&mut tape, out)?,
            Reduction::Weighted { seed } => {
                let w = weights
                    .get_or_insert_with(|| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        Tensor::from_fn(tape.shape(out).to_vec(), |_| rng.random_range(0.5..1.5))
                    })
                    .clone();
                weighted_sum(&mut tape, out, w)?
            }
        };
        let value = tape.value(scalar).data()[0];
        let grads = if want_grad {
            let g = tape.backward(scalar)?;
            leaves
                .iter()
                .zip(values)
                .map(|(&l, v)| {
                    g.get(l)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()))
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let mut values = inputs.to_vec();
    let (_, analytic) = evaluate(&values, true)?;
    let mut evaluations = 1;
    let mut per_input = Vec::with_capacity(inputs.len());
    for i in 0..values.len() {
        let mut worst: Real = 0.0;
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + cfg.eps;
            let (plus, _) = evaluate(&values, false)?;
            values[i].data_mut()[j] = orig - cfg.eps;
            let (minus, _) = evaluate(&values, false)?;
            values[i].data_mut()[j] = orig;
            evaluations += 2;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, Real::max),
        per_input,
        evaluations,
    })
}
