//! Network assembly and the time-major forward pass.
//!
//! Activations are `[T, B, ..]` and every layer processes the whole
//! sequence at once; weights are shared over time because each one is a
//! single parameter node. Per spatial op the order is STSC, the op itself,
//! batch norm (conv only), then the neuron.

use std::fmt::Write as _;

use rand::{Rng, RngCore};

use crate::diff::elementwise::{add_bias, relu, reshape};
use crate::diff::linalg::matmul;
use crate::diff::norm::{batchnorm, dropout, BatchNormMode, BatchStats};
use crate::diff::spatial::{conv2d, pool2d, PoolKind};
use crate::diff::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::net::spec::{LayerSpec, NetworkSpec, NeuronMode};
use crate::net::voting::Voting;
use crate::neuron::{lif, LifConfig};
use crate::stsc::{StscModule, StscVariant};
use crate::Real;

/// Running-statistics momentum of batch norm.
pub const BN_MOMENTUM: Real = 0.1;

#[derive(Debug, Clone)]
pub enum Layer {
    Stsc(StscModule),
    Fc {
        index: usize,
        weight: ParamId,
        bias: Option<ParamId>,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        index: usize,
        weight: ParamId,
        bias: Option<ParamId>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    BatchNorm {
        index: usize,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    },
    Neuron {
        index: usize,
        mode: NeuronMode,
    },
    Pool {
        kind: PoolKind,
        size: usize,
    },
    Dropout {
        p: Real,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub lif: LifConfig,
    /// Bias terms on FC and conv layers.
    pub bias: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            lif: LifConfig::default(),
            bias: true,
        }
    }
}

pub enum Mode<'a> {
    /// Dropout active (masks drawn from the generator) and batch norm on
    /// batch statistics.
    Train(&'a mut dyn RngCore),
    Eval,
}

/// Batch statistics of one batch-norm layer seen in a training forward.
#[derive(Debug, Clone)]
pub struct BnObservation {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

pub struct ForwardOutput {
    /// `[T, B, L_out]`.
    pub output: NodeId,
    pub bn: Vec<BnObservation>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub cfg: NetConfig,
    /// Per-sample input dims without time and batch.
    pub input_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub voting: Voting,
}

fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let b = 1.0 / (fan_in as Real).sqrt();
    Tensor::uniform(shape.to_vec(), -b, b, rng)
}

impl Network {
    /// Registers every parameter in `store` and lays out the layers.
    pub fn build<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        input_dims: &[usize],
        cfg: NetConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Network> {
        cfg.lif.validate()?;
        if spec.neurons.len() != spec.spatial_ops() {
            return Err(Error::Spec(format!(
                "{} neuron modes for {} spatial layers",
                spec.neurons.len(),
                spec.spatial_ops()
            )));
        }
        if input_dims.is_empty() || input_dims.contains(&0) {
            return Err(invalid!("bad input dims {input_dims:?}"));
        }
        let mut dims = input_dims.to_vec();
        let mut layers = Vec::new();
        let mut index = 0;
        for l in &spec.layers {
            if l.is_spatial_op() {
                index += 1;
                if spec.policy.contains(index) {
                    let (variant, channels) = match dims.len() {
                        1 => (StscVariant::Dense1d, dims[0]),
                        3 => (StscVariant::Conv3d, dims[0]),
                        _ => return Err(invalid!("STSC cannot take input dims {dims:?}")),
                    };
                    layers.push(Layer::Stsc(StscModule::new(
                        store, index, channels, variant, spec.stsc, rng,
                    )?));
                }
            }
            match *l {
                LayerSpec::Fc { width } => {
                    let inputs: usize = dims.iter().product();
                    let weight = store.add(
                        format!("fc.{index}.weight"),
                        uniform_init(&[inputs, width], inputs, rng),
                    );
                    let bias = cfg.bias.then(|| {
                        store.add(
                            format!("fc.{index}.bias"),
                            uniform_init(&[width], inputs, rng),
                        )
                    });
                    layers.push(Layer::Fc {
                        index,
                        weight,
                        bias,
                        inputs,
                        outputs: width,
                    });
                    dims = vec![width];
                }
                LayerSpec::Conv { channels, kernel } => {
                    let &[c_in, _, _] = dims.as_slice() else {
                        return Err(Error::Spec(format!(
                            "{l} needs [C, H, W] input, got {dims:?}"
                        )));
                    };
                    let fan_in = c_in * kernel * kernel;
                    let weight = store.add(
                        format!("conv.{index}.weight"),
                        uniform_init(&[channels, c_in, kernel, kernel], fan_in, rng),
                    );
                    let bias = cfg.bias.then(|| {
                        store.add(
                            format!("conv.{index}.bias"),
                            uniform_init(&[channels], fan_in, rng),
                        )
                    });
                    layers.push(Layer::Conv {
                        index,
                        weight,
                        bias,
                        in_channels: c_in,
                        out_channels: channels,
                        kernel,
                    });
                    layers.push(Layer::BatchNorm {
                        index,
                        gamma: store
                            .add(format!("bn.{index}.gamma"), Tensor::full([channels], 1.0)),
                        beta: store.add(format!("bn.{index}.beta"), Tensor::zeros([channels])),
                        running_mean: store.add_buffer(
                            format!("bn.{index}.running_mean"),
                            Tensor::zeros([channels]),
                        ),
                        running_var: store.add_buffer(
                            format!("bn.{index}.running_var"),
                            Tensor::full([channels], 1.0),
                        ),
                    });
                    dims[0] = channels;
                }
                LayerSpec::Pool { kind, size } => {
                    let &[c, h, w] = dims.as_slice() else {
                        return Err(Error::Spec(format!(
                            "{l} needs [C, H, W] input, got {dims:?}"
                        )));
                    };
                    if h < size || w < size {
                        return Err(Error::Spec(format!("{l} does not fit a {h}x{w} map")));
                    }
                    layers.push(Layer::Pool { kind, size });
                    dims = vec![c, h / size, w / size];
                }
                LayerSpec::Dropout { p } => layers.push(Layer::Dropout { p }),
            }
            if l.is_spatial_op() {
                layers.push(Layer::Neuron {
                    index,
                    mode: spec.neurons[index - 1],
                });
            }
        }
        let voting = Voting::new(dims.iter().product(), spec.classes)?;
        Ok(Network {
            spec: spec.clone(),
            cfg,
            input_dims: input_dims.to_vec(),
            layers,
            voting,
        })
    }

    pub fn output_width(&self) -> usize {
        self.voting.width
    }

    pub fn stsc_modules(&self) -> impl Iterator<Item = &StscModule> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Stsc(m) => Some(m),
            _ => None,
        })
    }

    /// Runs `x` of shape `[T, B, ..input_dims]` to outputs `[T, B, L_out]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: NodeId,
        mut mode: Mode<'_>,
    ) -> Result<ForwardOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != self.input_dims.len() + 2
            || shape[2..] != self.input_dims[..]
            || shape[0] == 0
        {
            return Err(invalid!(
                "network expects [T, B, {:?}] input, got {:?}",
                self.input_dims,
                shape
            ));
        }
        let (t, b) = (shape[0], shape[1]);
        let mut h = x;
        let mut bn = Vec::new();
        for layer in &self.layers {
            h = match layer {
                Layer::Stsc(m) => m.forward(tape, store, h)?,
                Layer::Fc {
                    weight,
                    bias,
                    inputs,
                    ..
                } => {
                    let flat = reshape(tape, h, &[t, b, *inputs])?;
                    let w = tape.param(store, *weight);
                    let y = matmul(tape, flat, w)?;
                    match bias {
                        Some(id) => {
                            let bias = tape.param(store, *id);
                            add_bias(tape, y, bias, 2)?
                        }
                        None => y,
                    }
                }
                Layer::Conv { weight, bias, .. } => {
                    let s = tape.shape(h).to_vec();
                    let folded = reshape(tape, h, &[t * b, s[2], s[3], s[4]])?;
                    let w = tape.param(store, *weight);
                    let mut y = conv2d(tape, folded, w)?;
                    if let Some(id) = bias {
                        let bias = tape.param(store, *id);
                        y = add_bias(tape, y, bias, 1)?;
                    }
                    let c_out = tape.shape(y)[1];
                    reshape(tape, y, &[t, b, c_out, s[3], s[4]])?
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    let g = tape.param(store, *gamma);
                    let be = tape.param(store, *beta);
                    let bn_mode = match mode {
                        Mode::Train(_) => BatchNormMode::Train,
                        Mode::Eval => BatchNormMode::Eval {
                            running_mean: store.value(*running_mean),
                            running_var: store.value(*running_var),
                        },
                    };
                    let (y, stats) = batchnorm(tape, h, g, be, 2, bn_mode)?;
                    if let Some(stats) = stats {
                        bn.push(BnObservation {
                            running_mean: *running_mean,
                            running_var: *running_var,
                            stats,
                        });
                    }
                    y
                }
                Layer::Neuron { mode: neuron, .. } => match neuron {
                    NeuronMode::Lif => lif(tape, h, &self.cfg.lif)?,
                    NeuronMode::Relu => relu(tape, h)?,
                    NeuronMode::None => h,
                },
                Layer::Pool { kind, size } => pool2d(tape, h, *kind, *size)?,
                Layer::Dropout { p } => match &mut mode {
                    Mode::Train(rng) => dropout(tape, h, *p, Some(&mut **rng))?,
                    Mode::Eval => h,
                },
            };
        }
        let output = reshape(tape, h, &[t, b, self.voting.width])?;
        Ok(ForwardOutput { output, bn })
    }

    /// Number of trainable scalars.
    pub fn num_params(&self, store: &ParamStore) -> usize {
        store
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Human readable layer table with parameter counts.
    pub fn summary(&self, store: &ParamStore) -> String {
        let count = |ids: &[Option<ParamId>]| -> usize {
            ids.iter().flatten().map(|&id| store.value(id).len()).sum()
        };
        let mut out = String::new();
        let _ = writeln!(out, "spec: {}", self.spec);
        let _ = writeln!(out, "input: {:?}", self.input_dims);
        let _ = writeln!(out, "stsc policy: {}", self.spec.policy);
        for layer in &self.layers {
            let _ = match layer {
                Layer::Stsc(m) => writeln!(
                    out,
                    "  {:<28} {:>10}  {:?} K_F={} K_G={} r={} trf={} fli={}",
                    m.name,
                    m.num_params(),
                    m.variant,
                    m.cfg.k_f,
                    m.cfg.k_g,
                    m.cfg.r,
                    m.cfg.enable_trf,
                    m.cfg.enable_fli
                ),
                Layer::Fc {
                    index,
                    weight,
                    bias,
                    inputs,
                    outputs,
                } => writeln!(
                    out,
                    "  {:<28} {:>10}",
                    format!("fc.{index} {inputs}->{outputs}"),
                    count(&[Some(*weight), *bias])
                ),
                Layer::Conv {
                    index,
                    weight,
                    bias,
                    in_channels,
                    out_channels,
                    kernel,
                } => writeln!(
                    out,
                    "  {:<28} {:>10}",
                    format!("conv.{index} {in_channels}->{out_channels} k{kernel}"),
                    count(&[Some(*weight), *bias])
                ),
                Layer::BatchNorm {
                    index, gamma, beta, ..
                } => writeln!(
                    out,
                    "  {:<28} {:>10}",
                    format!("bn.{index}"),
                    count(&[Some(*gamma), Some(*beta)])
                ),
                Layer::Neuron { index, mode } => {
                    writeln!(out, "  {:<28}", format!("neuron.{index} {mode}"))
                }
                Layer::Pool { kind, size } => {
                    writeln!(out, "  {:<28}", format!("{kind:?}Pool{size}"))
                }
                Layer::Dropout { p } => writeln!(out, "  {:<28}", format!("dropout p={p}")),
            };
        }
        let _ = writeln!(
            out,
            "voting: {}->{} (groups of {})",
            self.voting.width,
            self.voting.classes,
            self.voting.group()
        );
        let _ = writeln!(out, "trainable parameters: {}", self.num_params(store));
        out
    }
}

/// Pools the statistics of several shards as if they were one batch.
pub fn merge_batch_stats(parts: &[BatchStats]) -> Result<BatchStats> {
    let first = parts
        .first()
        .ok_or_else(|| invalid!("no batch statistics to merge"))?;
    let c = first.mean.len();
    let total: usize = parts.iter().map(|p| p.count).sum();
    let mut mean = vec![0.0; c];
    for p in parts {
        p.mean.expect_shape(&[c])?;
        for (m, &v) in mean.iter_mut().zip(p.mean.data()) {
            *m += v * p.count as Real / total as Real;
        }
    }
    let mut var = vec![0.0; c];
    for p in parts {
        for ch in 0..c {
            let d = p.mean.data()[ch] - mean[ch];
            var[ch] += (p.count as Real - 1.0) * p.var.data()[ch] + p.count as Real * d * d;
        }
    }
    var.iter_mut()
        .for_each(|v| *v /= (total as Real - 1.0).max(1.0));
    Ok(BatchStats {
        mean: Tensor::new([c], mean)?,
        var: Tensor::new([c], var)?,
        count: total,
    })
}

/// Exponential running-average update of batch-norm buffers.
pub fn update_running_stats(store: &mut ParamStore, obs: &BnObservation) -> Result<()> {
    for (id, batch) in [
        (obs.running_mean, &obs.stats.mean),
        (obs.running_var, &obs.stats.var),
    ] {
        let next = store
            .value(id)
            .zip_map(batch, |r, s| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * s)?;
        store.assign(id, next)?;
    }
    Ok(())
}
