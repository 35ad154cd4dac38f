//! Classification heads fed by time-averaged features.
//!
//! The L2 head normalises both the averaged embedding and every class weight
//! column, so each logit is a cosine similarity in [-1, 1]. The vanilla head
//! is an ordinary affine map. Either way the logits, times a gain, drive an
//! output LIF layer as a constant current for every timestep.

use super::{check_2d, Builder, ParamId, Runtime};
use crate::error::{dim_err, Error, Result};
use crate::neuron::{lif_sequence, LifConfig};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    L2norm,
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub features: usize,
    pub classes: usize,
    /// Gain between logits and the output LIF input current.
    pub scale: f64,
}

impl HeadSpec {
    pub fn describe(&self) -> String {
        match self.kind {
            HeadKind::L2norm => format!("l2norm head {}x{} gain={}", self.features, self.classes, self.scale),
            HeadKind::Vanilla => format!("linear head {}x{} +bias gain={}", self.features, self.classes, self.scale),
        }
    }
}

/// Built head: weight matrix `W` (features × classes) and optional bias.
#[derive(Clone, Debug)]
pub struct L2NormHead {
    pub spec: HeadSpec,
    pub w: ParamId,
    pub bias: Option<ParamId>,
}

/// Tape handles produced by a head forward.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// Time-averaged features, (B, d).
    pub z_av: Var,
    /// Unit-norm embeddings (L2 head only).
    pub embedding: Option<Var>,
    pub logits: Var,
    /// Rows whose averaged feature was a zero vector.
    pub degenerate: Vec<usize>,
}

impl L2NormHead {
    pub fn build(spec: &HeadSpec, b: &mut Builder<'_>) -> Result<Self> {
        if !(spec.scale > 0.0) {
            return Err(Error::Config(format!("head gain must be positive, got {}", spec.scale)));
        }
        Ok(L2NormHead {
            spec: spec.clone(),
            w: b.head_weight("head.w", spec.features, spec.classes),
            bias: (spec.kind == HeadKind::Vanilla).then(|| b.zeros("head.b", &[spec.classes])),
        })
    }

    /// Averages the per-step features and computes logits. With
    /// `allow_degenerate` zero embeddings yield zero logits instead of an error.
    pub fn forward(&self, rt: &mut Runtime<'_>, z: &[Var], allow_degenerate: bool) -> Result<HeadOutput> {
        if z.is_empty() {
            return Err(Error::Contract("head needs at least one timestep".into()));
        }
        let sum = rt.tape.add_n(z)?;
        let z_av = rt.tape.scale(sum, 1.0 / z.len() as f64);
        let (_, d) = check_2d(rt.tape, z_av, "head")?;
        if d != self.spec.features {
            return dim_err(format!("head expects {} features, got {d}", self.spec.features));
        }
        let w = rt.p(self.w);
        match self.spec.kind {
            HeadKind::L2norm => {
                let (emb, degenerate) = rt.tape.l2_normalize(z_av, 1, allow_degenerate)?;
                let (w_hat, _) = rt.tape.l2_normalize(w, 0, false)?;
                let cos = rt.tape.matmul(emb, w_hat)?;
                let logits = rt.tape.clamp_unit(cos);
                Ok(HeadOutput { z_av, embedding: Some(emb), logits, degenerate })
            }
            HeadKind::Vanilla => {
                let y = rt.tape.matmul(z_av, w)?;
                let logits = match self.bias {
                    Some(b) => rt.tape.add_bias(y, rt.p(b))?,
                    None => y,
                };
                Ok(HeadOutput { z_av, embedding: None, logits, degenerate: Vec::new() })
            }
        }
    }
}

/// Logits of an L2 head with weights `w` (d × C) for features `T × B × d`.
/// Fails on zero averaged features.
pub fn l2_head_forward(w: &Tensor, features: &Tensor) -> Result<Tensor> {
    let [t, b, d] = features.shape() else {
        return dim_err(format!("features must be T×B×d, got {:?}", features.shape()));
    };
    let (t, b, d) = (*t, *b, *d);
    if t == 0 {
        return Err(Error::Contract("need at least one timestep".into()));
    }
    if w.ndim() != 2 || w.shape()[0] != d {
        return dim_err(format!("weight {:?} does not match feature dim {d}", w.shape()));
    }
    let mut tape = Tape::no_grad();
    let steps: Vec<Var> = features
        .data()
        .chunks(b * d)
        .map(|c| tape.constant(Tensor::new(vec![b, d], c.to_vec()).expect("step shape")))
        .collect();
    let sum = tape.add_n(&steps)?;
    let z_av = tape.scale(sum, 1.0 / t as f64);
    let (emb, _) = tape.l2_normalize(z_av, 1, false)?;
    let wv = tape.constant(w.clone());
    let (w_hat, _) = tape.l2_normalize(wv, 0, false)?;
    let cos = tape.matmul(emb, w_hat)?;
    let logits = tape.clamp_unit(cos);
    Ok(tape.value(logits).clone())
}

/// Per-class spike counts over `steps` when each output neuron receives the
/// constant current `scale * logit`.
pub fn head_to_spikes(logits: &Tensor, lif: &LifConfig, steps: usize, scale: f64) -> Result<Tensor> {
    if !(scale > 0.0) {
        return Err(Error::Contract(format!("gain must be positive, got {scale}")));
    }
    let n = logits.numel();
    let current: Vec<f64> = logits.data().iter().map(|l| l * scale).collect();
    let seq = Tensor::new(
        std::iter::once(steps).chain(logits.shape().iter().copied()).collect(),
        current.iter().copied().cycle().take(steps * n).collect(),
    )?;
    let spikes = lif_sequence(&seq, lif)?;
    let mut counts = vec![0.0; n];
    for frame in spikes.data().chunks(n) {
        for (c, s) in counts.iter_mut().zip(frame) {
            *c += s;
        }
    }
    Tensor::new(logits.shape().to_vec(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_normalisation() {
        let w = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let f = Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap();
        let l = l2_head_forward(&w, &f).unwrap();
        assert!((l.item() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn aligned_is_one() {
        let w = Tensor::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let f = Tensor::new(vec![1, 1, 2], vec![0.5, 1.0]).unwrap();
        assert!((l2_head_forward(&w, &f).unwrap().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_feature_is_error() {
        let w = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let f = Tensor::zeros(&[2, 1, 2]);
        assert!(matches!(l2_head_forward(&w, &f), Err(Error::DegenerateEmbedding { .. })));
    }

    #[test]
    fn saturated_output_fires_every_step() {
        let lif = LifConfig::default();
        let c = head_to_spikes(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &lif, 8, lif.v_th).unwrap();
        assert_eq!(c.item(), 8.0);
    }

    #[test]
    fn non_positive_logit_never_fires() {
        let lif = LifConfig::default();
        let c = head_to_spikes(&Tensor::new(vec![1, 3], vec![0.0, -0.3, -1.0]).unwrap(), &lif, 16, 1.0).unwrap();
        assert_eq!(c.sum(), 0.0);
    }
}
