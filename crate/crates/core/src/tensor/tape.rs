use super::batchnorm::{self, BatchNormStats, BnCache, BnLayout};
use super::conv::{self, ConvGeom};
use super::linalg::gemm;
use super::pool;
use super::{same_shape, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::neuron::{ResetMode, SurrogateSpec};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the spike nonlinearity is evaluated in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SpikeForward {
    /// Heaviside step; the surrogate is used only for gradients.
    Hard,
    /// The smooth function whose derivative is the surrogate. Makes the
    /// whole network differentiable so it can be finite-difference checked.
    Relaxed,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    ClampUnit(Var),
    MulConst(Var, Vec<f64>),
    AddBias { x: Var, bias: Var },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, widths: Vec<usize> },
    StackRows(Vec<Var>),
    /// Element offset of the slice inside its source.
    SliceRows { x: Var, offset: usize },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BnCache },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var, spatial: usize },
    Normalize { x: Var, axis: usize, norms: Vec<f64> },
    LifCharge { prev: Option<Var>, input: Var, beta: f64 },
    Spike { membrane: Var, threshold: f64, surrogate: SurrogateSpec },
    Reset { membrane: Var, spikes: Var, threshold: f64, mode: ResetMode, detach: bool },
    Sum(Var),
    Mean(Var),
    Mse { x: Var, target: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended in evaluation
/// order, so inputs always precede the nodes that consume them.
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    spike: SpikeForward,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), record: true, spike: SpikeForward::Hard }
    }

    /// A tape that evaluates values but records no backward rules.
    pub fn no_grad() -> Self {
        Tape { record: false, ..Self::new() }
    }

    /// A recording tape whose spikes use the smooth surrogate forward form.
    pub fn relaxed() -> Self {
        Tape { spike: SpikeForward::Relaxed, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let (op, needs_grad) = if self.record && needs_grad { (op, true) } else { (Op::Leaf, false) };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        let rec = self.record;
        self.push(value, Op::Leaf, rec)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Elementwise sum of any number of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Contract("add_n of nothing".into()))?;
        let mut data = self.value(first).data().to_vec();
        for &p in &parts[1..] {
            same_shape(self.value(first), self.value(p), "add_n")?;
            for (d, x) in data.iter_mut().zip(self.value(p).data()) {
                *d += x;
            }
        }
        let value = Tensor::new(self.shape(first).to_vec(), data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::AddN(parts.to_vec()), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    /// Clamps cosine values to [-1, 1]. Only rounding error can push a
    /// product of unit vectors outside that range, so the gradient passes
    /// through unchanged.
    pub fn clamp_unit(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.clamp(-1.0, 1.0));
        let ng = self.needs(x);
        self.push(value, Op::ClampUnit(x), ng)
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return dim_err("mask length differs from input");
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::MulConst(x, mask), ng))
    }

    /// Adds a length-N bias to every row of a (B, N) input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || self.value(bias).numel() != xs[1] {
            return dim_err(format!("bias of {} elements for input {xs:?}", self.value(bias).numel()));
        }
        let n = xs[1];
        let b = self.value(bias).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, v)| v + b[i % n]).collect();
        let value = Tensor::new(xs.to_vec(), data)?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// (B, N) -> (B, prod(rest)).
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return dim_err("cannot flatten a scalar");
        }
        let rest = s[1..].iter().product();
        self.reshape(x, &[s[0], rest])
    }

    /// Concatenates 2-D nodes with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p)[0],
            None => return Err(Error::Contract("concat of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return dim_err(format!("concat part {s:?} incompatible with {rows} rows"));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), widths }, ng))
    }

    /// Joins nodes with equal trailing dimensions along the leading axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("stack of nothing".into()));
        };
        let tail = self.shape(first).get(1..).map(<[usize]>::to_vec).unwrap_or_default();
        if self.shape(first).is_empty() {
            return dim_err("cannot stack scalars");
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return dim_err(format!("stack part {s:?} does not match trailing dims {tail:?}"));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::StackRows(parts.to_vec()), ng))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return dim_err(format!("row slice {start}..{} out of {s:?}", start + len));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s;
        shape[0] = len;
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let value = Tensor::new(shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceRows { x, offset: start * row }, ng))
    }

    /// Splits the leading axis into `parts` equal chunks.
    pub fn split_rows(&mut self, x: Var, parts: usize) -> Result<Vec<Var>> {
        let n = self.shape(x).first().copied().unwrap_or(0);
        if parts == 0 || n % parts != 0 {
            return dim_err(format!("cannot split {n} rows into {parts} parts"));
        }
        let len = n / parts;
        (0..parts).map(|i| self.slice_rows(x, i * len, len)).collect()
    }

    /// Cross-correlation of (B, C, H, W) input with (F, C, kh, kw) kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::new(geom.out_shape(), out)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::Conv2d { x, w, geom }, ng))
    }

    /// Per-channel batch normalisation over (B, C, ...). Train mode uses and
    /// folds the batch statistics into `stats`; eval mode reads `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        train: bool,
    ) -> Result<Var> {
        let layout = BnLayout::from_shape(self.shape(x))
            .ok_or_else(|| Error::Dimension(format!("batch norm needs (B, C, ...), got {:?}", self.shape(x))))?;
        if self.value(gamma).numel() != layout.c || self.value(beta).numel() != layout.c || stats.channels() != layout.c {
            return dim_err(format!("batch norm parameters do not match {} channels", layout.c));
        }
        let (y, cache) = batchnorm::forward(
            layout,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            train,
        );
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, cache }, ng))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (y, argmax, shape) = pool::max_pool(self.value(x).data(), self.shape(x), k)?;
        let value = Tensor::new(shape, y)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, ng))
    }

    /// Adaptive average pool to 1×1, returned as (B, C).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (y, shape) = pool::global_avg_pool(self.value(x).data(), self.shape(x))?;
        let spatial = self.shape(x)[2..].iter().product();
        let value = Tensor::new(shape, y)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::GlobalAvgPool { x, spatial }, ng))
    }

    /// L2-normalises a 2-D node along `axis` (1: rows, 0: columns).
    ///
    /// Slices with norm below 1e-12 are an error unless `allow_degenerate`, in
    /// which case they map to zero and pass no gradient; the returned list
    /// names them.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, allow_degenerate: bool) -> Result<(Var, Vec<usize>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || axis > 1 {
            return dim_err(format!("l2_normalize expects 2-D input and axis 0/1, got {s:?}/{axis}"));
        }
        let (r, c) = (s[0], s[1]);
        let (count, len) = if axis == 1 { (r, c) } else { (c, r) };
        let idx = |slice: usize, j: usize| if axis == 1 { slice * c + j } else { j * c + slice };
        let xd = self.value(x).data();
        let mut norms = vec![0.0; count];
        let mut degenerate = Vec::new();
        let mut out = vec![0.0; r * c];
        for (i, norm) in norms.iter_mut().enumerate() {
            let n = (0..len).map(|j| xd[idx(i, j)].powi(2)).sum::<f64>().sqrt();
            if n < 1e-12 {
                degenerate.push(i);
                continue;
            }
            *norm = n;
            for j in 0..len {
                out[idx(i, j)] = xd[idx(i, j)] / n;
            }
        }
        if !degenerate.is_empty() && !allow_degenerate {
            return Err(Error::DegenerateEmbedding { rows: degenerate });
        }
        let value = Tensor::new(s, out)?;
        let ng = self.needs(x);
        Ok((self.push(value, Op::Normalize { x, axis, norms }, ng), degenerate))
    }

    /// Membrane charge `beta * prev + input`; `prev = None` is the zero state.
    pub fn lif_charge(&mut self, prev: Option<Var>, input: Var, beta: f64) -> Result<Var> {
        let mut data = self.value(input).data().to_vec();
        if let Some(p) = prev {
            same_shape(self.value(p), self.value(input), "lif state vs input")?;
            for (d, v) in data.iter_mut().zip(self.value(p).data()) {
                *d += beta * v;
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), data)?;
        let ng = self.needs(input) || prev.is_some_and(|p| self.needs(p));
        Ok(self.push(value, Op::LifCharge { prev, input, beta }, ng))
    }

    /// Spike emission `H(membrane - threshold)` with surrogate backward.
    pub fn spike(&mut self, membrane: Var, threshold: f64, surrogate: SurrogateSpec) -> Var {
        let mode = self.spike;
        let value = self.value(membrane).map(|m| match mode {
            SpikeForward::Hard => {
                if m >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeForward::Relaxed => surrogate.relaxed(m - threshold),
        });
        let ng = self.needs(membrane);
        self.push(value, Op::Spike { membrane, threshold, surrogate }, ng)
    }

    /// Post-spike membrane. With `detach` the spike is treated as a constant
    /// in the backward pass.
    pub fn reset(&mut self, membrane: Var, spikes: Var, threshold: f64, mode: ResetMode, detach: bool) -> Result<Var> {
        same_shape(self.value(membrane), self.value(spikes), "reset")?;
        let m = self.value(membrane).data();
        let s = self.value(spikes).data();
        let data = m
            .iter()
            .zip(s)
            .map(|(&m, &s)| match mode {
                ResetMode::Subtract => m - threshold * s,
                ResetMode::Zero => m * (1.0 - s),
                ResetMode::None => m,
            })
            .collect();
        let value = Tensor::new(self.shape(membrane).to_vec(), data)?;
        let ng = self.needs(membrane) || (!detach && self.needs(spikes));
        Ok(self.push(value, Op::Reset { membrane, spikes, threshold, mode, detach }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        let ng = self.needs(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// Mean of squared differences to a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        same_shape(self.value(x), target, "mse")?;
        let n = target.numel() as f64;
        let loss = self.value(x).data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { x, target: target.data().to_vec() }, ng))
    }

    /// Reverse replay from a scalar node. Every recorded node is visited at
    /// most once; gradients accumulate on fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn acc_vec(&self, grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
        self.acc(grads, v, |s| {
            for (a, b) in s.iter_mut().zip(d) {
                *a += b;
            }
        });
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_vec(grads, *a, g);
                self.acc_vec(grads, *b, g);
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.acc_vec(grads, *p, g);
                }
            }
            Op::Scale(x, c) => self.acc(grads, *x, |s| {
                for (a, b) in s.iter_mut().zip(g) {
                    *a += c * b;
                }
            }),
            Op::ClampUnit(x) => self.acc_vec(grads, *x, g),
            Op::MulConst(x, mask) => self.acc(grads, *x, |s| {
                for ((a, b), m) in s.iter_mut().zip(g).zip(mask) {
                    *a += m * b;
                }
            }),
            Op::AddBias { x, bias } => {
                self.acc_vec(grads, *x, g);
                let n = self.value(*bias).numel();
                self.acc(grads, *bias, |s| {
                    for (i, b) in g.iter().enumerate() {
                        s[i % n] += b;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |s| gemm(m, n, k, 1.0, g, false, bd, true, 1.0, s));
                self.acc(grads, *b, |s| gemm(k, m, n, 1.0, ad, true, g, false, 1.0, s));
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(grads, *x, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => self.acc_vec(grads, *x, g),
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut off = 0;
                for (p, &w) in parts.iter().zip(widths) {
                    self.acc(grads, *p, |s| {
                        for r in 0..rows {
                            for j in 0..w {
                                s[r * w + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    self.acc_vec(grads, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::SliceRows { x, offset } => self.acc(grads, *x, |s| {
                for (a, b) in s[*offset..].iter_mut().zip(g) {
                    *a += b;
                }
            }),
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(dx) = dx {
                    self.acc_vec(grads, *x, &dx);
                }
                if let Some(dw) = dw {
                    self.acc_vec(grads, *w, &dw);
                }
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (dx, dgamma, dbeta) = batchnorm::backward(cache, self.value(*gamma).data(), g);
                self.acc_vec(grads, *x, &dx);
                self.acc_vec(grads, *gamma, &dgamma);
                self.acc_vec(grads, *beta, &dbeta);
            }
            Op::MaxPool { x, argmax } => self.acc(grads, *x, |s| {
                for (gi, &src) in g.iter().zip(argmax) {
                    s[src] += gi;
                }
            }),
            Op::GlobalAvgPool { x, spatial } => self.acc(grads, *x, |s| {
                for (i, v) in s.iter_mut().enumerate() {
                    *v += g[i / spatial] / *spatial as f64;
                }
            }),
            Op::Normalize { x, axis, norms } => {
                let y = node.value.data();
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let len = if *axis == 1 { c } else { r };
                let idx = |slice: usize, j: usize| if *axis == 1 { slice * c + j } else { j * c + slice };
                self.acc(grads, *x, |s| {
                    for (i, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let dot: f64 = (0..len).map(|j| y[idx(i, j)] * g[idx(i, j)]).sum();
                        for j in 0..len {
                            let k = idx(i, j);
                            s[k] += (g[k] - y[k] * dot) / n;
                        }
                    }
                });
            }
            Op::LifCharge { prev, input, beta } => {
                self.acc_vec(grads, *input, g);
                if let Some(p) = prev {
                    self.acc(grads, *p, |s| {
                        for (a, b) in s.iter_mut().zip(g) {
                            *a += beta * b;
                        }
                    });
                }
            }
            Op::Spike { membrane, threshold, surrogate } => {
                let m = self.value(*membrane).data();
                self.acc(grads, *membrane, |s| {
                    for ((a, b), &v) in s.iter_mut().zip(g).zip(m) {
                        *a += b * surrogate.derivative(v - threshold);
                    }
                });
            }
            Op::Reset { membrane, spikes, threshold, mode, detach } => {
                let sv = self.value(*spikes).data();
                self.acc(grads, *membrane, |s| {
                    for ((a, b), &sp) in s.iter_mut().zip(g).zip(sv) {
                        *a += match mode {
                            ResetMode::Zero => b * (1.0 - sp),
                            _ => *b,
                        };
                    }
                });
                if !detach {
                    let mv = self.value(*membrane).data();
                    self.acc(grads, *spikes, |s| {
                        for ((a, b), &m) in s.iter_mut().zip(g).zip(mv) {
                            *a += match mode {
                                ResetMode::Subtract => -threshold * b,
                                ResetMode::Zero => -m * b,
                                ResetMode::None => 0.0,
                            };
                        }
                    });
                }
            }
            Op::Sum(x) => self.acc(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                self.acc(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::Mse { x, target } => {
                let n = target.len() as f64;
                let xv = self.value(*x).data();
                self.acc(grads, *x, |s| {
                    for ((a, &xi), &ti) in s.iter_mut().zip(xv).zip(target) {
                        *a += g[0] * 2.0 * (xi - ti) / n;
                    }
                });
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v` or zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let l = t.sum(x);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_via_matmul() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let y = t.matmul(x, x).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(t.value(y).item(), 9.0);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn diamond_fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.5));
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::ones(&[2]));
        let p = t.param(Tensor::ones(&[2]));
        let s = t.add(c, p).unwrap();
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }

    #[test]
    fn no_grad_tape_matches_values() {
        let build = |t: &mut Tape| {
            let a = t.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
            let b = t.param(Tensor::from_rows(&[vec![0.5], vec![-1.0]]).unwrap());
            let y = t.matmul(a, b).unwrap();
            t.value(y).clone()
        };
        let mut rec = Tape::new();
        let mut plain = Tape::no_grad();
        assert_eq!(build(&mut rec), build(&mut plain));
    }

    #[test]
    fn degenerate_rows_are_reported() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap());
        assert!(matches!(t.l2_normalize(x, 1, false), Err(Error::DegenerateEmbedding { ref rows }) if rows == &[1]));
        let (y, bad) = t.l2_normalize(x, 1, true).unwrap();
        assert_eq!(bad, vec![1]);
        assert_eq!(t.value(y).data(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
