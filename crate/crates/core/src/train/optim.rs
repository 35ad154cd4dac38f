use crate::error::{dim_err, Result};
use crate::layers::ParamStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-3, weight_decay: 0.0, betas: [0.9, 0.999], eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::for_shapes(params.iter().map(|p| p.value.shape()))
    }

    pub fn for_shapes<'a>(shapes: impl Iterator<Item = &'a [usize]>) -> Self {
        let zeros: Vec<Tensor> = shapes.map(Tensor::zeros).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return dim_err(format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()));
    }
    state.step += 1;
    let [b1, b2] = cfg.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return dim_err(format!("param {:?} vs grad {:?}", p.shape(), g.shape()));
        }
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g + cfg.weight_decay * *p;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam over a parameter store, taking gradients from `Param::grad`
/// (missing gradients count as zero).
pub fn adam_step_store(store: &mut ParamStore, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let grads: Vec<Tensor> =
        store.iter().map(|p| p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape()))).collect();
    let mut values: Vec<Tensor> = store.iter_mut().map(|p| std::mem::replace(&mut p.value, Tensor::scalar(0.0))).collect();
    let res = adam_step(&mut values, &grads, state, lr, cfg);
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
    res
}

/// `base_lr * gamma^(number of milestones <= epoch)`.
pub fn milestone_lr(epoch: usize, base_lr: f64, milestones: &[usize], gamma: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * gamma.powi(passed as i32)
}
