//! Iterative leaky integrate-and-fire neurons with hard reset.
//!
//! For `t = 1..T`, starting from `V(0) = 0`, `S(0) = 0`:
//!
//! ```text
//! V(t) = (1 - 1/tau) * V(t-1) * (1 - S(t-1)) + I(t)
//! S(t) = H(V(t) - V_th)
//! ```
//!
//! The backward pass replaces `H'` by the derivative of the arctangent
//! surrogate `sigma(x) = 1/2 + atan(pi * alpha * x / 2) / pi`. In relaxed
//! mode the forward pass uses `sigma` itself, which makes the whole
//! recurrence smooth and checkable by finite differences.

use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::{Real, PI};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifConfig {
    pub tau: Real,
    pub v_th: Real,
    pub surrogate_alpha: Real,
    /// Smooth forward pass (`sigma` instead of the step).
    pub relaxed: bool,
    /// Fire when `V == V_th` exactly; otherwise only when `V > V_th`.
    pub fire_at_threshold: bool,
    /// Stop gradients through the `(1 - S(t-1))` reset factor.
    pub detach_reset: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            tau: 2.0,
            v_th: 1.0,
            surrogate_alpha: 2.0,
            relaxed: false,
            fire_at_threshold: true,
            detach_reset: false,
        }
    }
}

impl LifConfig {
    pub fn new(tau: Real, v_th: Real) -> Self {
        LifConfig {
            tau,
            v_th,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) {
            return Err(invalid!("LIF tau must be >= 1, got {}", self.tau));
        }
        if !(self.v_th > 0.0) {
            return Err(invalid!("LIF threshold must be > 0, got {}", self.v_th));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(invalid!(
                "surrogate alpha must be > 0, got {}",
                self.surrogate_alpha
            ));
        }
        Ok(())
    }

    /// Membrane decay factor `1 - 1/tau`, in `[0, 1)`.
    pub fn decay(&self) -> Real {
        1.0 - 1.0 / self.tau
    }

    fn fire(&self, x: Real) -> Real {
        if self.relaxed {
            surrogate(x, self.surrogate_alpha)
        } else if x > 0.0 || (self.fire_at_threshold && x == 0.0) {
            1.0
        } else {
            0.0
        }
    }
}

/// `sigma_alpha(x) = 1/2 + atan(pi * alpha * x / 2) / pi`.
#[inline]
pub fn surrogate(x: Real, alpha: Real) -> Real {
    0.5 + (PI * alpha * x / 2.0).atan() / PI
}

/// `sigma_alpha'(x) = (alpha/2) / (1 + (pi * alpha * x / 2)^2)`.
#[inline]
pub fn surrogate_grad(x: Real, alpha: Real) -> Real {
    let z = PI * alpha * x / 2.0;
    (alpha / 2.0) / (1.0 + z * z)
}

/// Membrane potentials (before reset) and spikes of one forward pass, both
/// shaped like the input current.
#[derive(Debug, Clone)]
pub struct LifTrace {
    pub v: Tensor,
    pub s: Tensor,
}

/// Runs the recurrence over the leading (time) axis of `current`.
pub fn lif_forward(current: &Tensor, cfg: &LifConfig) -> Result<LifTrace> {
    cfg.validate()?;
    if current.rank() < 1 {
        return Err(invalid!("LIF input needs a leading time axis"));
    }
    let t_len = current.shape()[0];
    let units = current.len().checked_div(t_len).unwrap_or(0);
    let decay = cfg.decay();
    let mut v = Tensor::zeros(current.shape().to_vec());
    let mut s = Tensor::zeros(current.shape().to_vec());
    let (i_d, v_d, s_d) = (current.data(), v.data_mut(), s.data_mut());
    for t in 0..t_len {
        let row = t * units;
        for u in 0..units {
            let prev = if t == 0 {
                0.0
            } else {
                let p = row - units + u;
                decay * v_d[p] * (1.0 - s_d[p])
            };
            let vt = prev + i_d[row + u];
            v_d[row + u] = vt;
            s_d[row + u] = cfg.fire(vt - cfg.v_th);
        }
    }
    Ok(LifTrace { v, s })
}

/// Reverse-time pass: gradient of the loss w.r.t. the input current given
/// its gradient w.r.t. the spikes.
pub fn lif_backward(trace: &LifTrace, grad_s: &Tensor, cfg: &LifConfig) -> Result<Tensor> {
    grad_s.expect_shape(trace.s.shape())?;
    let shape = trace.v.shape();
    let t_len = shape.first().copied().unwrap_or(0);
    let units = trace.v.len().checked_div(t_len).unwrap_or(0);
    let decay = cfg.decay();
    let (v, s, gs) = (trace.v.data(), trace.s.data(), grad_s.data());
    let mut grad_i = Tensor::zeros(shape.to_vec());
    let gi = grad_i.data_mut();
    let mut gv_next = vec![0.0; units];
    for t in (0..t_len).rev() {
        let row = t * units;
        for u in 0..units {
            let k = row + u;
            let reset_path = if cfg.detach_reset {
                0.0
            } else {
                -decay * v[k] * gv_next[u]
            };
            let gs_total = gs[k] + reset_path;
            let gv = gs_total * surrogate_grad(v[k] - cfg.v_th, cfg.surrogate_alpha)
                + decay * (1.0 - s[k]) * gv_next[u];
            gi[k] = gv;
            gv_next[u] = gv;
        }
    }
    Ok(grad_i)
}

/// A neuron layer that remembers its last forward pass, for use outside a
/// tape.
#[derive(Debug, Clone)]
pub struct LifNeuron {
    pub cfg: LifConfig,
    trace: Option<LifTrace>,
}

impl LifNeuron {
    pub fn new(cfg: LifConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LifNeuron { cfg, trace: None })
    }

    pub fn forward(&mut self, current: &Tensor) -> Result<&LifTrace> {
        let trace = lif_forward(current, &self.cfg)?;
        Ok(self.trace.insert(trace))
    }

    pub fn backward(&self, grad_s: &Tensor) -> Result<Tensor> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("LIF backward called before forward".into()))?;
        lif_backward(trace, grad_s, &self.cfg)
    }
}

struct LifOp {
    cfg: LifConfig,
    v: Tensor,
}

impl Backward for LifOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let trace = LifTrace {
            v: self.v.clone(),
            s: args.output.clone(),
        };
        Ok(vec![Some(lif_backward(&trace, args.grad, &self.cfg)?)])
    }
}

/// LIF layer on a tape: input current `[T, ..]` to spikes `[T, ..]`.
pub fn lif(tape: &mut Tape<'_>, current: NodeId, cfg: &LifConfig) -> Result<NodeId> {
    let LifTrace { v, s } = lif_forward(tape.value(current), cfg)?;
    Ok(tape.push("lif", s, &[current], LifOp { cfg: *cfg, v }))
}
