//! Spatio-temporal synaptic connection: a temporal response filter (TRF)
//! and a feedforward lateral inhibition gate (FLI) applied to the same
//! input and multiplied element-wise, `Y = C * D`.
//!
//! Dense (1-D) inputs are `[T, (B,) N]`. Convolutional (3-D) inputs are
//! `[T, (B,) C, H, W]`; there the TRF kernel is shared over each channel's
//! plane and the gate is computed from the spatial mean of each channel and
//! broadcast back over the plane.

use rand::Rng;

use crate::diff::elementwise::{mul, relu, sigmoid};
use crate::diff::linalg::matmul;
use crate::diff::spatial::{broadcast_spatial, spatial_avg};
use crate::diff::temporal::{check_kernel_size, depthwise_tconv, tconv_mix, TemporalPadding};
use crate::diff::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StscVariant {
    Dense1d,
    Conv3d,
}

impl StscVariant {
    /// Axis of the channel dimension, counting the leading time axis.
    fn channel_axis(self, rank: usize) -> usize {
        match self {
            StscVariant::Dense1d => rank - 1,
            StscVariant::Conv3d => rank - 3,
        }
    }

    fn check_rank(self, shape: &[usize]) -> Result<()> {
        let ok = match self {
            StscVariant::Dense1d => shape.len() == 2 || shape.len() == 3,
            StscVariant::Conv3d => shape.len() == 4 || shape.len() == 5,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!(
                "{self:?} STSC cannot take input of shape {shape:?}"
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StscConfig {
    pub k_f: usize,
    pub k_g: usize,
    pub r: usize,
    pub enable_trf: bool,
    pub enable_fli: bool,
    pub padding: TemporalPadding,
}

impl Default for StscConfig {
    fn default() -> Self {
        StscConfig {
            k_f: 5,
            k_g: 3,
            r: 1,
            enable_trf: true,
            enable_fli: true,
            padding: TemporalPadding::Symmetric,
        }
    }
}

impl StscConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enable_trf && !self.enable_fli {
            return Err(invalid!("STSC needs at least one of TRF and FLI enabled"));
        }
        if self.enable_trf {
            check_kernel_size(self.k_f)?;
        }
        if self.enable_fli {
            check_kernel_size(self.k_g)?;
            if self.r == 0 {
                return Err(invalid!("FLI reduction ratio must be >= 1"));
            }
        }
        Ok(())
    }

    /// Hidden width of the gate, `ceil(N / r)`.
    pub fn hidden(&self, n: usize) -> usize {
        n.div_ceil(self.r).max(1)
    }
}

/// Filtering path, `C = f(X)`.
pub fn trf_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    w_f: NodeId,
    variant: StscVariant,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let shape = tape.shape(x).to_vec();
    variant.check_rank(&shape)?;
    depthwise_tconv(tape, x, w_f, variant.channel_axis(shape.len()), padding)
}

/// Gating path, `D = g(X)`, with values in `(0, 1)` and the shape of `X`.
pub fn fli_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    w_g1: NodeId,
    w_g2: NodeId,
    variant: StscVariant,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let shape = tape.shape(x).to_vec();
    variant.check_rank(&shape)?;
    match variant {
        StscVariant::Dense1d => fli_dense(tape, x, w_g1, w_g2, padding),
        StscVariant::Conv3d => {
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let pooled = spatial_avg(tape, x)?;
            let gate = fli_dense(tape, pooled, w_g1, w_g2, padding)?;
            broadcast_spatial(tape, gate, h, w)
        }
    }
}

fn fli_dense(
    tape: &mut Tape<'_>,
    x: NodeId,
    w_g1: NodeId,
    w_g2: NodeId,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let n = *tape.shape(x).last().unwrap();
    let w2 = tape.shape(w_g2);
    if w2.len() != 2 || w2[1] != n || w2[0] != tape.shape(w_g1).get(2).copied().unwrap_or(0) {
        return Err(invalid!(
            "FLI weights {:?} and {:?} do not fit {n} channels",
            tape.shape(w_g1),
            w2
        ));
    }
    let s = tconv_mix(tape, x, w_g1, padding)?;
    let s = relu(tape, s)?;
    let logits = matmul(tape, s, w_g2)?;
    sigmoid(tape, logits)
}

/// `Y = C * D`; a disabled path contributes the identity (`C = X` or
/// `D = 1`).
pub fn stsc_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    w_f: Option<NodeId>,
    w_g: Option<(NodeId, NodeId)>,
    variant: StscVariant,
    padding: TemporalPadding,
) -> Result<NodeId> {
    let c = match w_f {
        Some(w) => trf_forward(tape, x, w, variant, padding)?,
        None => x,
    };
    match w_g {
        Some((w1, w2)) => {
            let d = fli_forward(tape, x, w1, w2, variant, padding)?;
            mul(tape, c, d)
        }
        None if w_f.is_some() => Ok(c),
        None => Err(invalid!("STSC needs at least one of TRF and FLI enabled")),
    }
}

/// Registered STSC parameters for one insertion point.
#[derive(Debug, Clone)]
pub struct StscModule {
    pub name: String,
    pub cfg: StscConfig,
    pub variant: StscVariant,
    pub channels: usize,
    pub w_f: Option<ParamId>,
    pub w_g1: Option<ParamId>,
    pub w_g2: Option<ParamId>,
}

impl StscModule {
    /// Registers `stsc.<layer>.trf.W_F`, `stsc.<layer>.fli.W_G1` and
    /// `stsc.<layer>.fli.W_G2` as needed.
    ///
    /// TRF starts as a delta kernel plus `U(-0.01, 0.01)` noise so the
    /// module begins close to a pass-through. FLI weights use fan-in scaled
    /// uniform bounds `1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        layer: usize,
        channels: usize,
        variant: StscVariant,
        cfg: StscConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(invalid!("STSC needs at least one channel"));
        }
        let name = format!("stsc.{layer}");
        let w_f = cfg.enable_trf.then(|| {
            let center = cfg.padding.center(cfg.k_f);
            let mut w = Tensor::uniform([cfg.k_f, channels], -0.01, 0.01, rng);
            for c in 0..channels {
                let v = w.at(&[center, c]) + 1.0;
                w.set(&[center, c], v);
            }
            store.add(format!("{name}.trf.W_F"), w)
        });
        let (w_g1, w_g2) = if cfg.enable_fli {
            let m = cfg.hidden(channels);
            let b1 = 1.0 / ((cfg.k_g * channels) as Real).sqrt();
            let b2 = 1.0 / (m as Real).sqrt();
            let w1 = Tensor::uniform([cfg.k_g, channels, m], -b1, b1, rng);
            let w2 = Tensor::uniform([m, channels], -b2, b2, rng);
            (
                Some(store.add(format!("{name}.fli.W_G1"), w1)),
                Some(store.add(format!("{name}.fli.W_G2"), w2)),
            )
        } else {
            (None, None)
        };
        Ok(StscModule {
            name,
            cfg,
            variant,
            channels,
            w_f,
            w_g1,
            w_g2,
        })
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: NodeId,
    ) -> Result<NodeId> {
        let w_f = self.w_f.map(|id| tape.param(store, id));
        let w_g = match (self.w_g1, self.w_g2) {
            (Some(a), Some(b)) => Some((tape.param(store, a), tape.param(store, b))),
            _ => None,
        };
        stsc_forward(tape, x, w_f, w_g, self.variant, self.cfg.padding)
    }

    /// `K_F * C` for TRF plus `K_G * N * M + M * N` for FLI.
    pub fn num_params(&self) -> usize {
        let n = self.channels;
        let trf = if self.cfg.enable_trf {
            self.cfg.k_f * n
        } else {
            0
        };
        let fli = if self.cfg.enable_fli {
            let m = self.cfg.hidden(n);
            self.cfg.k_g * n * m + m * n
        } else {
            0
        };
        trf + fli
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.iter().map(|&v| v as Real).collect()).unwrap()
    }

    #[test]
    fn fli_hand_trace() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1], &[1.0, 0.0]));
        let w1 = tape.leaf(t(&[1, 1, 1], &[1.0]));
        let w2 = tape.leaf(t(&[1, 1], &[2.0]));
        let d = fli_forward(
            &mut tape,
            x,
            w1,
            w2,
            StscVariant::Dense1d,
            TemporalPadding::Symmetric,
        )
        .unwrap();
        let d = tape.value(d).data();
        assert!((d[0] as f64 - 0.880797077977882).abs() < crate::tol(1e-12) as f64);
        assert_eq!(d[1], 0.5);
    }

    #[test]
    fn zero_gate_weights_give_one_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([4, 2, 3], |i| i as Real));
        let w1 = tape.leaf(Tensor::zeros([3, 3, 2]));
        let w2 = tape.leaf(Tensor::zeros([2, 3]));
        let d = fli_forward(
            &mut tape,
            x,
            w1,
            w2,
            StscVariant::Dense1d,
            TemporalPadding::Symmetric,
        )
        .unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_filter_with_neutral_gate_halves_input() {
        let mut tape = Tape::new();
        let xs = Tensor::from_fn([5, 4], |i| (i as Real).cos());
        let x = tape.leaf(xs.clone());
        let mut wf = Tensor::zeros([3, 4]);
        (0..4).for_each(|c| wf.set(&[1, c], 1.0));
        let wf = tape.leaf(wf);
        let w1 = tape.leaf(Tensor::zeros([3, 4, 4]));
        let w2 = tape.leaf(Tensor::zeros([4, 4]));
        let y = stsc_forward(
            &mut tape,
            x,
            Some(wf),
            Some((w1, w2)),
            StscVariant::Dense1d,
            TemporalPadding::Symmetric,
        )
        .unwrap();
        let expect = xs.map(|v| 0.5 * v);
        assert_eq!(tape.value(y), &expect);
    }

    #[test]
    fn gate_is_constant_over_each_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = StscConfig {
            k_f: 3,
            k_g: 3,
            r: 2,
            ..Default::default()
        };
        let m = StscModule::new(&mut store, 0, 3, StscVariant::Conv3d, cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::uniform([4, 2, 3, 5, 5], 0.0, 2.0, &mut rng));
        let w1 = tape.param(&store, m.w_g1.unwrap());
        let w2 = tape.param(&store, m.w_g2.unwrap());
        let d = fli_forward(
            &mut tape,
            x,
            w1,
            w2,
            StscVariant::Conv3d,
            TemporalPadding::Symmetric,
        )
        .unwrap();
        let d = tape.value(d);
        for plane in d.data().chunks(25) {
            assert!(plane.iter().all(|&v| v == plane[0]));
            assert!(plane[0] > 0.0 && plane[0] < 1.0);
        }
    }

    #[test]
    fn parameter_count_matches_registry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (n, r) in [(700, 1), (10, 3), (7, 2)] {
            let mut store = ParamStore::new();
            let cfg = StscConfig {
                r,
                ..Default::default()
            };
            let m = StscModule::new(&mut store, 1, n, StscVariant::Dense1d, cfg, &mut rng).unwrap();
            let hidden = n.div_ceil(r);
            assert_eq!(m.num_params(), 5 * n + 3 * n * hidden + hidden * n);
            assert_eq!(store.num_trainable(), m.num_params());
            assert!(store.find("stsc.1.trf.W_F").is_some());
            assert!(store.find("stsc.1.fli.W_G1").is_some());
            assert!(store.find("stsc.1.fli.W_G2").is_some());
        }
    }

    #[test]
    fn both_paths_disabled_is_rejected() {
        let cfg = StscConfig {
            enable_trf: false,
            enable_fli: false,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rank_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([4, 3]));
        let w = tape.leaf(Tensor::zeros([3, 3]));
        assert!(trf_forward(
            &mut tape,
            x,
            w,
            StscVariant::Conv3d,
            TemporalPadding::Symmetric
        )
        .is_err());
    }

    use proptest::prelude::*;

    fn odd() -> impl Strategy<Value = usize> {
        (0usize..4).prop_map(|h| 2 * h + 1)
    }

    proptest! {
        #[test]
        fn module_invariants(
            conv in any::<bool>(),
            (t, b, c) in (1usize..7, 1usize..3, 1usize..6),
            (k_f, k_g, r) in (odd(), odd(), 1usize..4),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (variant, shape) = if conv {
                (StscVariant::Conv3d, vec![t, b, c, 3, 2])
            } else {
                (StscVariant::Dense1d, vec![t, b, c])
            };
            let cfg = StscConfig { k_f, k_g, r, ..Default::default() };
            let mut store = ParamStore::new();
            let m = StscModule::new(&mut store, 0, c, variant, cfg, &mut rng).unwrap();
            let hidden = c.div_ceil(r);
            let expect = k_f * c + k_g * c * hidden + hidden * c;
            prop_assert_eq!(m.num_params(), expect);
            prop_assert_eq!(store.num_trainable(), expect);

            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::uniform(shape.clone(), 0.0, 3.0, &mut rng));
            let w_f = tape.param(&store, m.w_f.unwrap());
            let w1 = tape.param(&store, m.w_g1.unwrap());
            let w2 = tape.param(&store, m.w_g2.unwrap());
            let pad = TemporalPadding::Symmetric;
            let cn = trf_forward(&mut tape, x, w_f, variant, pad).unwrap();
            let dn = fli_forward(&mut tape, x, w1, w2, variant, pad).unwrap();
            let yn = m.forward(&mut tape, &store, x).unwrap();
            let (cv, dv, yv) = (tape.value(cn), tape.value(dn), tape.value(yn));
            prop_assert_eq!(yv.shape(), &shape[..]);
            prop_assert_eq!(dv.shape(), &shape[..]);
            prop_assert!(dv.data().iter().all(|&d| d > 0.0 && d < 1.0));
            for (y, c) in yv.data().iter().zip(cv.data()) {
                prop_assert!(y.abs() <= c.abs());
            }
        }
    }
}
