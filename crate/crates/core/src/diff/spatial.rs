//! Spatial primitives for `[.., C, H, W]` feature maps.

use crate::diff::gemm::{gemm, rm, tr};
use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::Real;

#[derive(Clone, Copy)]
struct ConvLayout {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvLayout {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Unfold one image `[C_in, H, W]` into `[C_in*kh*kw, H*W]` with zero
/// padding that keeps the spatial size.
fn im2col(img: &[Real], l: &ConvLayout, col: &mut [Real]) {
    let (ph, pw) = ((l.kh - 1) / 2, (l.kw - 1) / 2);
    let plane = l.plane();
    for c in 0..l.c_in {
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = (c * l.kh + ky) * l.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for y in 0..l.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    for x in 0..l.w {
                        let sx = x as isize + kx as isize - pw as isize;
                        dst[y * l.w + x] =
                            if sy >= 0 && (sy as usize) < l.h && sx >= 0 && (sx as usize) < l.w {
                                img[(c * l.h + sy as usize) * l.w + sx as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[Real], l: &ConvLayout, img: &mut [Real]) {
    let (ph, pw) = ((l.kh - 1) / 2, (l.kw - 1) / 2);
    let plane = l.plane();
    for c in 0..l.c_in {
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = (c * l.kh + ky) * l.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for y in 0..l.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy as usize >= l.h {
                        continue;
                    }
                    for x in 0..l.w {
                        let sx = x as isize + kx as isize - pw as isize;
                        if sx >= 0 && (sx as usize) < l.w {
                            img[(c * l.h + sy as usize) * l.w + sx as usize] += src[y * l.w + x];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp(ConvLayout);

impl Backward for Conv2dOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let l = self.0;
        let [x, w] = args.inputs else { unreachable!() };
        let (patch, plane) = (l.patch(), l.plane());
        let mut dx = args.needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut dw = args.needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
        let mut col = vec![0.0; patch * plane];
        let mut dcol = vec![0.0; patch * plane];
        let (img_in, img_out) = (l.c_in * plane, l.c_out * plane);
        for b in 0..l.batch {
            let g = &args.grad.data()[b * img_out..(b + 1) * img_out];
            if let Some(dw) = dw.as_mut() {
                im2col(&x.data()[b * img_in..(b + 1) * img_in], &l, &mut col);
                // dW[C_out, patch] += G[C_out, HW] * col^T
                gemm(
                    l.c_out,
                    plane,
                    patch,
                    1.0,
                    g,
                    rm(plane),
                    &col,
                    tr(plane),
                    1.0,
                    dw.data_mut(),
                    rm(patch),
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcol[patch, HW] = W^T * G
                gemm(
                    patch,
                    l.c_out,
                    plane,
                    1.0,
                    w.data(),
                    tr(patch),
                    g,
                    rm(plane),
                    0.0,
                    &mut dcol,
                    rm(plane),
                );
                col2im(&dcol, &l, &mut dx.data_mut()[b * img_in..(b + 1) * img_in]);
            }
        }
        Ok(vec![dx, dw])
    }
}

/// Stride-1 cross-correlation with zero padding that preserves `H x W`.
/// `x` is `[B, C_in, H, W]`, `w` is `[C_out, C_in, kh, kw]` with odd kernel
/// sides (the networks here use 3x3).
pub fn conv2d(tape: &mut Tape<'_>, x: NodeId, w: NodeId) -> Result<NodeId> {
    let (xv, wv) = (tape.value(x), tape.value(w));
    if xv.rank() != 4 || wv.rank() != 4 {
        return Err(invalid!(
            "conv2d needs x [B, C, H, W] and w [C_out, C_in, kh, kw], got {:?} and {:?}",
            xv.shape(),
            wv.shape()
        ));
    }
    let (xs, ws) = (xv.shape(), wv.shape());
    if xs[1] != ws[1] {
        return Err(invalid!(
            "conv2d channel mismatch: input has {} channels, kernel expects {}",
            xs[1],
            ws[1]
        ));
    }
    if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
        return Err(invalid!("conv2d kernel sides must be odd, got {:?}", ws));
    }
    let l = ConvLayout {
        batch: xs[0],
        c_in: xs[1],
        c_out: ws[0],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
    };
    let (patch, plane) = (l.patch(), l.plane());
    let mut out = Tensor::zeros([l.batch, l.c_out, l.h, l.w]);
    let mut col = vec![0.0; patch * plane];
    let (img_in, img_out) = (l.c_in * plane, l.c_out * plane);
    for b in 0..l.batch {
        im2col(&xv.data()[b * img_in..(b + 1) * img_in], &l, &mut col);
        gemm(
            l.c_out,
            patch,
            plane,
            1.0,
            wv.data(),
            rm(patch),
            &col,
            rm(plane),
            0.0,
            &mut out.data_mut()[b * img_out..(b + 1) * img_out],
            rm(plane),
        );
    }
    Ok(tape.push("conv2d", out, &[x, w], Conv2dOp(l)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

struct PoolOp {
    kind: PoolKind,
    /// For max pooling, the flat input index chosen for each output.
    argmax: Vec<usize>,
    window: [usize; 4],
}

impl Backward for PoolOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = args.inputs[0];
        let g = args.grad.data();
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let d = dx.data_mut();
        match self.kind {
            PoolKind::Max => {
                for (o, &src) in self.argmax.iter().enumerate() {
                    d[src] += g[o];
                }
            }
            PoolKind::Avg => {
                let [planes, h, w, k] = self.window;
                let (oh, ow) = (h / k, w / k);
                let scale = 1.0 / (k * k) as Real;
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[(p * oh + oy) * ow + ox] * scale;
                            for dy in 0..k {
                                for dx_ in 0..k {
                                    d[(p * h + oy * k + dy) * w + ox * k + dx_] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Non-overlapping `size x size` pooling over the last two axes. Trailing
/// rows/columns that do not fill a window are dropped.
pub fn pool2d(tape: &mut Tape<'_>, x: NodeId, kind: PoolKind, size: usize) -> Result<NodeId> {
    let xv = tape.value(x);
    let shape = xv.shape();
    if shape.len() < 3 || size == 0 {
        return Err(invalid!(
            "pool2d needs [.., C, H, W] input, got {:?}",
            shape
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < size || w < size {
        return Err(invalid!(
            "pool window {size} does not fit spatial size {h}x{w}"
        ));
    }
    let planes = xv.len() / (h * w);
    let (oh, ow) = (h / size, w / size);
    let mut out_shape = shape.to_vec();
    let rank = out_shape.len();
    out_shape[rank - 2] = oh;
    out_shape[rank - 1] = ow;
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = Vec::new();
    let xd = xv.data();
    let od = out.data_mut();
    let scale = 1.0 / (size * size) as Real;
    if kind == PoolKind::Max {
        argmax.reserve(od.len());
    }
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = Real::NEG_INFINITY;
                let mut best_idx = 0;
                let mut acc = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = (p * h + oy * size + dy) * w + ox * size + dx;
                        let v = xd[idx];
                        acc += v;
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                match kind {
                    PoolKind::Max => {
                        od[o] = best;
                        argmax.push(best_idx);
                    }
                    PoolKind::Avg => od[o] = acc * scale,
                }
            }
        }
    }
    let op = PoolOp {
        kind,
        argmax,
        window: [planes, h, w, size],
    };
    let name = match kind {
        PoolKind::Max => "max_pool2d",
        PoolKind::Avg => "avg_pool2d",
    };
    Ok(tape.push(name, out, &[x], op))
}

struct SpatialAvgOp;

impl Backward for SpatialAvgOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = args.inputs[0];
        let n = x.len() / args.grad.len().max(1);
        let scale = 1.0 / n as Real;
        let mut dx = Tensor::zeros(x.shape().to_vec());
        for (chunk, &g) in dx.data_mut().chunks_mut(n).zip(args.grad.data()) {
            chunk.fill(g * scale);
        }
        Ok(vec![Some(dx)])
    }
}

/// Mean over the last two (spatial) axes: `[.., C, H, W] -> [.., C]`.
pub fn spatial_avg(tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
    let xv = tape.value(x);
    let shape = xv.shape();
    if shape.len() < 3 {
        return Err(invalid!("spatial_avg needs [.., C, H, W], got {:?}", shape));
    }
    let plane = shape[shape.len() - 2] * shape[shape.len() - 1];
    if plane == 0 {
        return Err(invalid!("spatial_avg over an empty plane {:?}", shape));
    }
    let out_shape = shape[..shape.len() - 2].to_vec();
    let scale = 1.0 / plane as Real;
    let data = xv
        .data()
        .chunks(plane)
        .map(|c| c.iter().sum::<Real>() * scale)
        .collect();
    let out = Tensor::new(out_shape, data)?;
    Ok(tape.push("spatial_avg", out, &[x], SpatialAvgOp))
}

struct BroadcastOp {
    plane: usize,
}

impl Backward for BroadcastOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let d = args.inputs[0];
        let data = args
            .grad
            .data()
            .chunks(self.plane)
            .map(|c| c.iter().sum())
            .collect();
        Ok(vec![Some(Tensor::new(d.shape().to_vec(), data)?)])
    }
}

/// Copy each element of `[.., C]` to every position of an `h x w` plane.
pub fn broadcast_spatial(tape: &mut Tape<'_>, d: NodeId, h: usize, w: usize) -> Result<NodeId> {
    let dv = tape.value(d);
    let plane = h * w;
    let mut shape = dv.shape().to_vec();
    shape.extend([h, w]);
    let mut data = Vec::with_capacity(dv.len() * plane);
    for &v in dv.data() {
        data.extend(std::iter::repeat_n(v, plane));
    }
    let out = Tensor::new(shape, data)?;
    Ok(tape.push("broadcast_spatial", out, &[d], BroadcastOp { plane }))
}
