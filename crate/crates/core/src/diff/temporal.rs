//! Convolutions along the leading (time) axis.
//!
//! Kernels are stored with tap index `k = 0..K`. With symmetric padding the
//! tap offset is `t_f = k - (K-1)/2` and the output is
//! `C(t) = sum_k W[k] * X(t - t_f)`, so storage tap 0 weights the frame
//! `(K-1)/2` steps in the future. Out-of-range frames read as zero and the
//! output keeps the input length.

use crate::diff::elementwise::split_axis;
use crate::diff::gemm::{gemm, rm, tr};
use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalPadding {
    /// `(K-1)/2` frames on both ends; each output sees past and future.
    #[default]
    Symmetric,
    /// `K-1` frames before the start; each output sees only the current and
    /// earlier frames.
    Causal,
}

impl TemporalPadding {
    /// Storage index of the tap with offset zero.
    pub fn center(self, k: usize) -> usize {
        match self {
            TemporalPadding::Symmetric => (k - 1) / 2,
            TemporalPadding::Causal => 0,
        }
    }
}

pub(crate) fn check_kernel_size(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid!("temporal kernel size must be odd, got {k}"));
    }
    Ok(())
}

/// For tap `k`, the output frames `[lo, hi)` whose source frame
/// `t - (k - center)` is in range, and that shift.
#[inline]
fn tap_range(k: usize, center: usize, t_len: usize) -> (usize, usize, isize) {
    let shift = k as isize - center as isize;
    let lo = shift.max(0) as usize;
    let hi = (t_len as isize + shift).clamp(0, t_len as isize) as usize;
    (lo.min(hi), hi, shift)
}

#[derive(Clone, Copy)]
struct DwLayout {
    t: usize,
    outer: usize,
    c: usize,
    inner: usize,
    k: usize,
    center: usize,
}

impl DwLayout {
    fn new(x: &Tensor, w: &Tensor, axis: usize, padding: TemporalPadding) -> Result<Self> {
        if axis == 0 || axis >= x.rank() {
            return Err(invalid!(
                "channel axis {axis} is not a non-time axis of {:?}",
                x.shape()
            ));
        }
        if w.rank() != 2 {
            return Err(invalid!(
                "depthwise kernel must be [K, C], got {:?}",
                w.shape()
            ));
        }
        let k = w.shape()[0];
        check_kernel_size(k)?;
        let t = x.shape()[0];
        let (outer, c, inner) = split_axis(&x.shape()[1..], axis - 1);
        if w.shape()[1] != c {
            return Err(invalid!(
                "kernel has {} channels but input {:?} has {} on axis {axis}",
                w.shape()[1],
                x.shape(),
                c
            ));
        }
        Ok(DwLayout {
            t,
            outer,
            c,
            inner,
            k,
            center: padding.center(k),
        })
    }

    fn frame(&self) -> usize {
        self.outer * self.c * self.inner
    }
}

fn dw_forward(x: &Tensor, w: &Tensor, l: DwLayout) -> Tensor {
    let mut out = Tensor::zeros(x.shape().to_vec());
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    let frame = l.frame();
    for k in 0..l.k {
        let (lo, hi, shift) = tap_range(k, l.center, l.t);
        let wk = &wd[k * l.c..(k + 1) * l.c];
        for t in lo..hi {
            let src = (t as isize - shift) as usize;
            let xs = &xd[src * frame..(src + 1) * frame];
            let os = &mut od[t * frame..(t + 1) * frame];
            for o in 0..l.outer {
                for (c, &wc) in wk.iter().enumerate() {
                    let base = (o * l.c + c) * l.inner;
                    for i in base..base + l.inner {
                        os[i] += wc * xs[i];
                    }
                }
            }
        }
    }
    out
}

struct DepthwiseOp(DwLayout);

impl Backward for DepthwiseOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let l = self.0;
        let [x, w] = args.inputs else { unreachable!() };
        let (xd, wd, gd) = (x.data(), w.data(), args.grad.data());
        let frame = l.frame();
        let mut dx = args.needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut dw = args.needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
        for k in 0..l.k {
            let (lo, hi, shift) = tap_range(k, l.center, l.t);
            for t in lo..hi {
                let src = (t as isize - shift) as usize;
                let gs = &gd[t * frame..(t + 1) * frame];
                for o in 0..l.outer {
                    for c in 0..l.c {
                        let base = (o * l.c + c) * l.inner;
                        if let Some(dx) = dx.as_mut() {
                            let wc = wd[k * l.c + c];
                            let dxs = &mut dx.data_mut()[src * frame..(src + 1) * frame];
                            for i in base..base + l.inner {
                                dxs[i] += wc * gs[i];
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            let xs = &xd[src * frame..(src + 1) * frame];
                            let mut acc: Real = 0.0;
                            for i in base..base + l.inner {
                                acc += gs[i] * xs[i];
                            }
                            dw.data_mut()[k * l.c + c] += acc;
                        }
                    }
                }
            }
        }
        Ok(vec![dx, dw])
    }
}

/// Depth-wise temporal convolution with one `[K, C]` kernel; `channel_axis`
/// picks the axis of `x` that indexes `C`. Every other non-time axis shares
/// the kernel of its channel.
pub fn depthwise_tconv(
    tape: &mut Tape<'_>,
    x: NodeId,
    w: NodeId,
    channel_axis: usize,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let (xv, wv) = (tape.value(x), tape.value(w));
    let layout = DwLayout::new(xv, wv, channel_axis, padding)?;
    let out = dw_forward(xv, wv, layout);
    Ok(tape.push("depthwise_tconv", out, &[x, w], DepthwiseOp(layout)))
}

/// `[T, N]` or `[T, B, N]` input, `[K, N]` kernel.
pub fn depthwise_tconv1d(tape: &mut Tape<'_>, x: NodeId, w: NodeId) -> Result<NodeId> {
    let rank = tape.shape(x).len();
    if rank < 2 {
        return Err(invalid!(
            "tconv1d input must be [T, (B,) N], got {:?}",
            tape.shape(x)
        ));
    }
    depthwise_tconv(tape, x, w, rank - 1, TemporalPadding::Symmetric)
}

/// `[T, C, H, W]` or `[T, B, C, H, W]` input, `[K, C]` kernel shared over
/// all spatial positions of a channel.
pub fn depthwise_tconv3d(tape: &mut Tape<'_>, x: NodeId, w: NodeId) -> Result<NodeId> {
    let rank = tape.shape(x).len();
    if rank != 4 && rank != 5 {
        return Err(invalid!(
            "tconv3d input must be [T, (B,) C, H, W], got {:?}",
            tape.shape(x)
        ));
    }
    depthwise_tconv(tape, x, w, rank - 3, TemporalPadding::Symmetric)
}

#[derive(Clone, Copy)]
struct MixLayout {
    t: usize,
    rows: usize,
    n: usize,
    m: usize,
    k: usize,
    center: usize,
}

impl MixLayout {
    fn new(x: &Tensor, w: &Tensor, padding: TemporalPadding) -> Result<Self> {
        if x.rank() < 2 || w.rank() != 3 {
            return Err(invalid!(
                "tconv mix needs x [T, (B,) N] and W [K, N, M], got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        }
        let k = w.shape()[0];
        check_kernel_size(k)?;
        let n = *x.shape().last().unwrap();
        if w.shape()[1] != n {
            return Err(invalid!(
                "kernel {:?} expects {} input channels, input {:?} has {n}",
                w.shape(),
                w.shape()[1],
                x.shape()
            ));
        }
        let t = x.shape()[0];
        Ok(MixLayout {
            t,
            rows: x.len() / (t.max(1) * n.max(1)),
            n,
            m: w.shape()[2],
            k,
            center: padding.center(k),
        })
    }
}

fn mix_forward(x: &Tensor, w: &Tensor, l: MixLayout) -> Tensor {
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = l.m;
    let mut out = Tensor::zeros(shape);
    let (in_frame, out_frame) = (l.rows * l.n, l.rows * l.m);
    for k in 0..l.k {
        let (lo, hi, shift) = tap_range(k, l.center, l.t);
        if lo >= hi {
            continue;
        }
        let src = (lo as isize - shift) as usize;
        let wk = &w.data()[k * l.n * l.m..(k + 1) * l.n * l.m];
        gemm(
            (hi - lo) * l.rows,
            l.n,
            l.m,
            1.0,
            &x.data()[src * in_frame..],
            rm(l.n),
            wk,
            rm(l.m),
            1.0,
            &mut out.data_mut()[lo * out_frame..hi * out_frame],
            rm(l.m),
        );
    }
    out
}

struct MixOp(MixLayout);

impl Backward for MixOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let l = self.0;
        let [x, w] = args.inputs else { unreachable!() };
        let g = args.grad;
        let (in_frame, out_frame) = (l.rows * l.n, l.rows * l.m);
        let mut dx = args.needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut dw = args.needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
        for k in 0..l.k {
            let (lo, hi, shift) = tap_range(k, l.center, l.t);
            if lo >= hi {
                continue;
            }
            let src = (lo as isize - shift) as usize;
            let rows = (hi - lo) * l.rows;
            let gk = &g.data()[lo * out_frame..hi * out_frame];
            let wk_range = k * l.n * l.m..(k + 1) * l.n * l.m;
            if let Some(dx) = dx.as_mut() {
                // dX[src] += G[t] * W[k]^T
                gemm(
                    rows,
                    l.m,
                    l.n,
                    1.0,
                    gk,
                    rm(l.m),
                    &w.data()[wk_range.clone()],
                    tr(l.m),
                    1.0,
                    &mut dx.data_mut()[src * in_frame..src * in_frame + rows * l.n],
                    rm(l.n),
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dW[k] += X[src]^T * G[t]
                gemm(
                    l.n,
                    rows,
                    l.m,
                    1.0,
                    &x.data()[src * in_frame..],
                    tr(l.n),
                    gk,
                    rm(l.m),
                    1.0,
                    &mut dw.data_mut()[wk_range],
                    rm(l.m),
                );
            }
        }
        Ok(vec![dx, dw])
    }
}

/// Temporal convolution that also mixes channels:
/// `S(t, m) = sum_k sum_n W[k, n, m] * X(t - t_k, n)`.
pub fn tconv_mix(
    tape: &mut Tape<'_>,
    x: NodeId,
    w: NodeId,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let (xv, wv) = (tape.value(x), tape.value(w));
    let layout = MixLayout::new(xv, wv, padding)?;
    let out = mix_forward(xv, wv, layout);
    Ok(tape.push("tconv_mix", out, &[x, w], MixOp(layout)))
}

/// [`tconv_mix`] with symmetric padding.
pub fn tconv1d_mix(tape: &mut Tape<'_>, x: NodeId, w: NodeId) -> Result<NodeId> {
    tconv_mix(tape, x, w, TemporalPadding::Symmetric)
}
