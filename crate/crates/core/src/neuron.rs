//! First-order leaky integrate-and-fire neurons.
//!
//! Per step the membrane charges as `v' = beta * v + i`, emits a spike where
//! `v' >= v_th`, and spiking neurons are then reset. The forward spike is a
//! hard step; training backpropagates through a [`SurrogateSpec`] instead.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold, keeping residual charge.
    Subtract,
    /// Clamp the membrane to zero.
    Zero,
    /// No reset: a pure leaky accumulator.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Arctan,
    FastSigmoid,
}

/// Pseudo-derivative used in place of the spike step's zero/undefined derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Arctan sharpness.
    pub a: f64,
    /// Fast-sigmoid slope.
    pub k: f64,
    /// Use the printed derivative formulas verbatim instead of the exact
    /// derivatives of the smooth forms (see [`SurrogateSpec::derivative`]).
    pub printed_form: bool,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self::arctan(2.0)
    }
}

impl SurrogateSpec {
    pub fn arctan(a: f64) -> Self {
        SurrogateSpec { kind: SurrogateKind::Arctan, a, k: 5.0, printed_form: false }
    }

    pub fn fast_sigmoid(k: f64) -> Self {
        SurrogateSpec { kind: SurrogateKind::FastSigmoid, a: 2.0, k, printed_form: false }
    }

    pub fn literal(mut self) -> Self {
        self.printed_form = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SurrogateKind::Arctan => self.a > 0.0,
            SurrogateKind::FastSigmoid => self.k > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("surrogate parameter must be positive: {self:?}")))
        }
    }

    /// Smooth stand-in for the spike step, as a function of `u = v - v_th`.
    ///
    /// Arctan: `atan(pi * u * a / 2) / pi`. Fast sigmoid: `u / (1 + k|u|)`.
    pub fn relaxed(&self, u: f64) -> f64 {
        match self.kind {
            SurrogateKind::Arctan => (PI * u * self.a / 2.0).atan() / PI,
            SurrogateKind::FastSigmoid => u / (1.0 + self.k * u.abs()),
        }
    }

    /// Pseudo-derivative at `u = v - v_th`.
    ///
    /// By default this is the exact derivative of [`relaxed`](Self::relaxed):
    /// `(a/2) / (1 + (pi*u*a/2)^2)` and `1 / (1 + k|u|)^2`. With
    /// `printed_form` it is `(1/pi) / (1 + (pi*u*a/2)^2)` and
    /// `u / (1 + k|u|)^2` respectively.
    pub fn derivative(&self, u: f64) -> f64 {
        match (self.kind, self.printed_form) {
            (SurrogateKind::Arctan, false) => (self.a / 2.0) / (1.0 + (PI * u * self.a / 2.0).powi(2)),
            (SurrogateKind::Arctan, true) => (1.0 / PI) / (1.0 + (PI * u * self.a / 2.0).powi(2)),
            (SurrogateKind::FastSigmoid, false) => 1.0 / (1.0 + self.k * u.abs()).powi(2),
            (SurrogateKind::FastSigmoid, true) => u / (1.0 + self.k * u.abs()).powi(2),
        }
    }
}

/// Elementwise surrogate pseudo-derivatives of `v - v_th` values.
pub fn surrogate_backward(v_minus_th: &Tensor, spec: &SurrogateSpec) -> Tensor {
    v_minus_th.map(|u| spec.derivative(u))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifConfig {
    pub beta: f64,
    pub v_th: f64,
    pub reset: ResetMode,
    pub surrogate: SurrogateSpec,
    /// Treat the reset term as a constant during backpropagation.
    pub detach_reset: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            beta: 0.9,
            v_th: 1.0,
            reset: ResetMode::Subtract,
            surrogate: SurrogateSpec::default(),
            detach_reset: true,
        }
    }
}

impl LifConfig {
    pub fn with_reset(mut self, reset: ResetMode) -> Self {
        self.reset = reset;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_threshold(mut self, v_th: f64) -> Self {
        self.v_th = v_th;
        self
    }

    pub fn with_surrogate(mut self, surrogate: SurrogateSpec) -> Self {
        self.surrogate = surrogate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.v_th > 0.0) {
            return Err(Error::Config(format!("v_th must be positive, got {}", self.v_th)));
        }
        self.surrogate.validate()
    }

    fn reset_value(&self, v: f64, spiked: bool) -> f64 {
        match (self.reset, spiked) {
            (_, false) | (ResetMode::None, true) => v,
            (ResetMode::Subtract, true) => v - self.v_th,
            (ResetMode::Zero, true) => 0.0,
        }
    }
}

/// Membrane potentials of a layer of neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState { v: Tensor::zeros(shape) }
    }
}

/// One LIF update. Returns the binary spikes and the post-reset state.
pub fn lif_step(state: &LifState, i_in: &Tensor, cfg: &LifConfig) -> Result<(Tensor, LifState)> {
    if state.v.shape() != i_in.shape() {
        return dim_err(format!("state {:?} vs input {:?}", state.v.shape(), i_in.shape()));
    }
    let n = i_in.numel();
    let mut spikes = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for (&v, &i) in state.v.data().iter().zip(i_in.data()) {
        let charged = cfg.beta * v + i;
        let fired = charged >= cfg.v_th;
        spikes.push(if fired { 1.0 } else { 0.0 });
        next.push(cfg.reset_value(charged, fired));
    }
    let shape = i_in.shape().to_vec();
    Ok((Tensor::new(shape.clone(), spikes)?, LifState { v: Tensor::new(shape, next)? }))
}

/// Spike trains and pre-reset membrane potentials of a sequence run.
#[derive(Clone, Debug)]
pub struct LifTrace {
    pub spikes: Tensor,
    /// Potential after charging, before reset, at every step.
    pub potentials: Tensor,
}

/// Runs a `T × ...` input through LIF neurons starting from rest.
pub fn lif_sequence(inputs: &Tensor, cfg: &LifConfig) -> Result<Tensor> {
    Ok(lif_trace(inputs, cfg)?.spikes)
}

pub fn lif_trace(inputs: &Tensor, cfg: &LifConfig) -> Result<LifTrace> {
    let steps = *inputs.shape().first().ok_or_else(|| Error::Contract("input has no time axis".into()))?;
    if steps == 0 {
        return Err(Error::Contract("sequence needs at least one timestep".into()));
    }
    let per_step = inputs.numel() / steps;
    let mut spikes = Vec::with_capacity(inputs.numel());
    let mut potentials = Vec::with_capacity(inputs.numel());
    let mut v = vec![0.0; per_step];
    for frame in inputs.data().chunks(per_step) {
        for (v, &i) in v.iter_mut().zip(frame) {
            let charged = cfg.beta * *v + i;
            let fired = charged >= cfg.v_th;
            potentials.push(charged);
            spikes.push(if fired { 1.0 } else { 0.0 });
            *v = cfg.reset_value(charged, fired);
        }
    }
    let shape = inputs.shape().to_vec();
    Ok(LifTrace { spikes: Tensor::new(shape.clone(), spikes)?, potentials: Tensor::new(shape, potentials)? })
}

/// Records one LIF step on a tape. `state = None` means the neurons are at
/// rest. Returns `(spikes, next_state)`.
pub fn lif_step_tape(tape: &mut Tape, state: Option<Var>, input: Var, cfg: &LifConfig) -> Result<(Var, Var)> {
    let charged = tape.lif_charge(state, input, cfg.beta)?;
    let spikes = tape.spike(charged, cfg.v_th, cfg.surrogate);
    let next = tape.reset(charged, spikes, cfg.v_th, cfg.reset, cfg.detach_reset)?;
    Ok((spikes, next))
}
