//! Layer specifications and their execution on time-stacked activations.

mod block;
mod dropout;
mod head;

pub use block::{block_forward, ActAfterAdditionBlock, BlockSpec, BlockVariant};
pub use dropout::{dropout, dropout_mask};
pub use head::{head_to_spikes, l2_head_forward, HeadKind, HeadOutput, HeadSpec, L2NormHead};

use crate::error::{dim_err, Error, Result};
use crate::neuron::{lif_step_tape, LifConfig};
use crate::tensor::{conv_output_size, BatchNormStats, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Flat, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value, grad: None });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Learnable affine parameters and running statistics of one BN layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnRef {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

/// Allocates parameters and BN statistics while a model is being assembled.
pub struct Builder<'a> {
    pub params: &'a mut ParamStore,
    pub stats: &'a mut Vec<BatchNormStats>,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    /// Kaiming-normal kernel, fan-in scaled.
    pub fn conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) -> ParamId {
        let fan_in = in_ch * k * k;
        let w = normal(&[out_ch, in_ch, k, k], (2.0 / fan_in as f64).sqrt(), self.rng);
        self.params.add(name, w)
    }

    pub fn linear_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let w = normal(&[fan_in, fan_out], (2.0 / fan_in as f64).sqrt(), self.rng);
        self.params.add(name, w)
    }

    /// Uniform in ±1/sqrt(fan_in), used for classifier heads.
    pub fn head_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.add(name, Tensor::new(vec![fan_in, fan_out], data).expect("head shape"))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.params.add(name, Tensor::zeros(shape))
    }

    pub fn bn(&mut self, name: &str, channels: usize) -> BnRef {
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::ones(&[channels]));
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.stats.push(BatchNormStats::new(channels));
        BnRef { gamma, beta, stats: self.stats.len() - 1 }
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("normal shape")
}

/// Execution context of one multi-timestep forward pass.
///
/// Activations are time-major stacks of shape (T·B, ...): rows `t*B..(t+1)*B`
/// hold timestep `t`. Stateless layers process all timesteps in one call, so
/// batch norm statistics are pooled over time and batch; LIF layers unroll the
/// recurrence internally, starting from rest.
pub struct Runtime<'a> {
    pub tape: &'a mut Tape,
    /// Tape leaves for every parameter, indexed by [`ParamId`].
    pub params: &'a [Var],
    pub stats: &'a mut [BatchNormStats],
    pub mode: Mode,
    pub steps: usize,
    pub rng: &'a mut ChaCha8Rng,
}

impl Runtime<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn bn(&mut self, x: Var, r: &BnRef) -> Result<Var> {
        let (g, b) = (self.p(r.gamma), self.p(r.beta));
        let train = self.mode == Mode::Train;
        self.tape.batch_norm(x, g, b, &mut self.stats[r.stats], train)
    }

    /// Runs a LIF layer over a stacked input sequence; returns stacked spikes.
    pub fn lif(&mut self, x: Var, cfg: &LifConfig) -> Result<Var> {
        let inputs = self.tape.split_rows(x, self.steps)?;
        let spikes = self.lif_sequence(&inputs, cfg)?;
        self.tape.stack_rows(&spikes)
    }

    /// Unrolls LIF neurons from rest over per-step inputs.
    pub fn lif_sequence(&mut self, inputs: &[Var], cfg: &LifConfig) -> Result<Vec<Var>> {
        let mut state = None;
        let mut spikes = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (s, next) = lif_step_tape(self.tape, state, x, cfg)?;
            state = Some(next);
            spikes.push(s);
        }
        Ok(spikes)
    }

    pub fn conv(&mut self, x: Var, w: ParamId, stride: usize, padding: usize) -> Result<Var> {
        let w = self.p(w);
        self.tape.conv2d(x, w, stride, padding)
    }
}

/// Serializable description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize },
    Lif { neuron: LifConfig },
    MaxPool { size: usize },
    /// Adaptive average pool to 1×1, emitting (B, C).
    AvgPool,
    Dropout { p: f64 },
    Linear { in_features: usize, out_features: usize, bias: bool },
    Flatten,
    /// Joins several (B, n_i) inputs along features; only valid first.
    Concat { widths: Vec<usize> },
    Residual { block: BlockSpec },
}

impl LayerSpec {
    /// Per-sample output shape (batch axis omitted).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let need_chw = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [c, h, w] => Ok((*c, *h, *w)),
                _ => Err(Error::Config(format!("{what} expects (C, H, W) input, got {input:?}"))),
            }
        };
        let cfg_err = |e: Error| Error::Config(e.to_string());
        match self {
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                let (c, h, w) = need_chw("conv")?;
                if c != *in_channels {
                    return Err(Error::Config(format!("conv expects {in_channels} channels, got {c}")));
                }
                let ho = conv_output_size(h, *kernel, *stride, *padding).map_err(cfg_err)?;
                let wo = conv_output_size(w, *kernel, *stride, *padding).map_err(cfg_err)?;
                Ok(vec![*out_channels, ho, wo])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(channels) {
                    return Err(Error::Config(format!("batch norm over {channels} channels, input {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Lif { .. } | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = need_chw("max pool")?;
                if *size == 0 || *size > h || *size > w {
                    return Err(Error::Config(format!("pool window {size} larger than {h}x{w}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::AvgPool => {
                let (c, _, _) = need_chw("average pool")?;
                Ok(vec![c])
            }
            LayerSpec::Linear { in_features, out_features, .. } => {
                if input != [*in_features] {
                    return Err(Error::Config(format!("linear expects [{in_features}], got {input:?}")));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Concat { widths } => {
                let total: usize = widths.iter().sum();
                if input != [total] {
                    return Err(Error::Config(format!("concat of {widths:?} expects [{total}], got {input:?}")));
                }
                Ok(vec![total])
            }
            LayerSpec::Residual { block } => block.output_shape(input),
        }
    }

    /// One-line human-readable summary used in layer listings.
    pub fn describe(&self) -> String {
        match self {
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                format!("conv {in_channels}->{out_channels} k{kernel} s{stride} p{padding}")
            }
            LayerSpec::BatchNorm { channels } => format!("bn {channels}"),
            LayerSpec::Lif { neuron } => format!("lif beta={} vth={} reset={:?}", neuron.beta, neuron.v_th, neuron.reset),
            LayerSpec::MaxPool { size } => format!("maxpool {size}x{size}"),
            LayerSpec::AvgPool => "avgpool 1x1".into(),
            LayerSpec::Dropout { p } => format!("dropout p={p}"),
            LayerSpec::Linear { in_features, out_features, bias } => {
                format!("linear {in_features}->{out_features}{}", if *bias { " +bias" } else { "" })
            }
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Concat { widths } => format!("concat {widths:?}"),
            LayerSpec::Residual { block } => block.describe(),
        }
    }
}

/// A [`LayerSpec`] bound to its parameters and state slots.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv { w: ParamId, stride: usize, padding: usize },
    BatchNorm(BnRef),
    Lif(LifConfig),
    MaxPool(usize),
    AvgPool,
    Dropout(f64),
    Linear { w: ParamId, b: Option<ParamId> },
    Flatten,
    Concat,
    Residual(Box<ActAfterAdditionBlock>),
}

impl Layer {
    pub fn build(spec: &LayerSpec, name: &str, b: &mut Builder<'_>) -> Result<Layer> {
        Ok(match spec {
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => Layer::Conv {
                w: b.conv(&format!("{name}.w"), *out_channels, *in_channels, *kernel),
                stride: *stride,
                padding: *padding,
            },
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(b.bn(name, *channels)),
            LayerSpec::Lif { neuron } => {
                neuron.validate()?;
                Layer::Lif(*neuron)
            }
            LayerSpec::MaxPool { size } => Layer::MaxPool(*size),
            LayerSpec::AvgPool => Layer::AvgPool,
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Config(format!("dropout probability must lie in [0, 1), got {p}")));
                }
                Layer::Dropout(*p)
            }
            LayerSpec::Linear { in_features, out_features, bias } => Layer::Linear {
                w: b.linear_weight(&format!("{name}.w"), *in_features, *out_features),
                b: bias.then(|| b.zeros(&format!("{name}.b"), &[*out_features])),
            },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Concat { .. } => Layer::Concat,
            LayerSpec::Residual { block } => Layer::Residual(Box::new(ActAfterAdditionBlock::build(block, name, b)?)),
        })
    }

    /// Applies the layer to a stacked (T·B, ...) sequence.
    pub fn forward(&self, rt: &mut Runtime<'_>, x: Var) -> Result<Var> {
        match self {
            Layer::Conv { w, stride, padding } => rt.conv(x, *w, *stride, *padding),
            Layer::BatchNorm(r) => rt.bn(x, r),
            Layer::Lif(cfg) => rt.lif(x, cfg),
            Layer::MaxPool(k) => rt.tape.max_pool2d(x, *k),
            Layer::AvgPool => rt.tape.global_avg_pool(x),
            Layer::Dropout(p) => {
                if rt.mode == Mode::Eval || *p == 0.0 {
                    return Ok(x);
                }
                let mask = dropout_mask(rt.tape.value(x).numel(), *p, rt.rng);
                rt.tape.mul_const(x, mask)
            }
            Layer::Linear { w, b } => {
                let y = rt.tape.matmul(x, rt.p(*w))?;
                match b {
                    Some(b) => rt.tape.add_bias(y, rt.p(*b)),
                    None => Ok(y),
                }
            }
            Layer::Flatten => rt.tape.flatten(x),
            Layer::Concat => Ok(x),
            Layer::Residual(block) => block.forward(rt, x),
        }
    }
}

/// Checks that a list of layer specs chains from `input` and returns the
/// per-sample output shape.
pub fn infer_shapes(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, LayerSpec::Concat { .. }) && i != 0 {
            return Err(Error::Config("concat is only valid as the first layer".into()));
        }
        cur = l.output_shape(&cur).map_err(|e| Error::Config(format!("layer {i} ({}): {e}", l.describe())))?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

pub(crate) fn check_2d(tape: &Tape, v: Var, what: &str) -> Result<(usize, usize)> {
    match tape.shape(v) {
        [r, c] => Ok((*r, *c)),
        s => dim_err(format!("{what} expects (B, d), got {s:?}")),
    }
}
