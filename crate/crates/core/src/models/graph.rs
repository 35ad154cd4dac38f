use crate::error::{Error, Result};
use crate::layers::{
    infer_shapes, Builder, HeadKind, HeadOutput, HeadSpec, L2NormHead, Layer, LayerSpec, Mode, ParamStore, Runtime,
};
use crate::neuron::LifConfig;
use crate::tensor::{BatchNormStats, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Serializable architecture: layers, head and output neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub name: String,
    /// Per-sample input shape (batch axis omitted). For graphs starting with
    /// a concat layer this is the concatenated width.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
    pub output_lif: LifConfig,
}

impl GraphSpec {
    /// Shape after every layer; the last one must be the feature vector.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        infer_shapes(&self.layers, &self.input_shape)
    }

    /// Width of the pre-head feature vector.
    pub fn feature_dim(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        match shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape) {
            [d] => Ok(*d),
            s => Err(Error::Config(format!("graph must end in a flat feature vector, got {s:?}"))),
        }
    }

    pub fn listing(&self) -> Vec<String> {
        let mut out = vec![format!("input {:?}", self.input_shape)];
        out.extend(self.layers.iter().map(LayerSpec::describe));
        out.push(self.head.describe());
        out.push(format!(
            "output lif beta={} vth={} reset={:?}",
            self.output_lif.beta, self.output_lif.v_th, self.output_lif.reset
        ));
        out
    }
}

/// A built network: bound layers, parameters and BN running statistics.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub spec: GraphSpec,
    layers: Vec<Layer>,
    head: L2NormHead,
    pub params: ParamStore,
    pub stats: Vec<BatchNormStats>,
}

/// Values of one multi-timestep forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Output spike counts, B × C, each in [0, T].
    pub counts: Tensor,
    pub logits: Tensor,
    /// Pre-head features for every timestep, T × B × d.
    pub embeddings: Tensor,
    /// Unit-norm embeddings (L2 head only), B × d.
    pub normalized: Option<Tensor>,
    pub degenerate: Vec<usize>,
}

/// Tape handles of one recorded forward pass.
pub struct Recorded {
    pub counts: Var,
    pub features: Vec<Var>,
    pub head: HeadOutput,
    /// Leaf for every parameter, in store order.
    pub params: Vec<Var>,
}

impl ModelGraph {
    /// Builds the graph with parameters initialised from `seed`.
    pub fn build(spec: GraphSpec, seed: u64) -> Result<Self> {
        let d = spec.feature_dim()?;
        if d != spec.head.features {
            return Err(Error::Config(format!("head expects {} features but the body emits {d}", spec.head.features)));
        }
        spec.output_lif.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut stats = Vec::new();
        let mut b = Builder { params: &mut params, stats: &mut stats, rng: &mut rng };
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Layer::build(l, &format!("layer{i}"), &mut b))
            .collect::<Result<Vec<_>>>()?;
        let head = L2NormHead::build(&spec.head, &mut b)?;
        Ok(ModelGraph { spec, layers, head, params, stats })
    }

    pub fn classes(&self) -> usize {
        self.spec.head.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.head.features
    }

    pub fn head_kind(&self) -> HeadKind {
        self.spec.head.kind
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn layer_listing(&self) -> Vec<String> {
        self.spec.listing()
    }

    /// Concatenates multi-modal inputs or checks a single input.
    fn input_var(&self, tape: &mut Tape, inputs: &[Tensor]) -> Result<(Var, usize)> {
        let concat = matches!(self.spec.layers.first(), Some(LayerSpec::Concat { .. }));
        if concat {
            let Some(LayerSpec::Concat { widths }) = self.spec.layers.first() else { unreachable!() };
            if inputs.len() != widths.len() {
                return Err(Error::Config(format!("expected {} inputs, got {}", widths.len(), inputs.len())));
            }
            let batch = inputs[0].shape().first().copied().unwrap_or(0);
            let mut parts = Vec::new();
            for (x, w) in inputs.iter().zip(widths) {
                if x.shape() != [batch, *w] {
                    return Err(Error::Config(format!("input {:?} does not match width {w}", x.shape())));
                }
                parts.push(tape.constant(x.clone()));
            }
            Ok((tape.concat(&parts)?, batch))
        } else {
            let [x] = inputs else {
                return Err(Error::Config(format!("expected a single input, got {}", inputs.len())));
            };
            if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
                return Err(Error::Config(format!(
                    "input {:?} does not match (B, {:?})",
                    x.shape(),
                    self.spec.input_shape
                )));
            }
            Ok((tape.constant(x.clone()), x.shape()[0]))
        }
    }

    /// Records a full forward pass: the static input is presented at every
    /// one of `steps` timesteps, starting from rest.
    pub fn record(
        &self,
        tape: &mut Tape,
        stats: &mut [BatchNormStats],
        inputs: &[Tensor],
        steps: usize,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Recorded> {
        if steps == 0 {
            return Err(Error::Contract("need at least one timestep".into()));
        }
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let (x, _) = self.input_var(tape, inputs)?;
        let x = repeat_over_time(tape, x, steps)?;
        let mut rt = Runtime { tape, params: &params, stats, mode, steps, rng };

        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&mut rt, h)?;
            if !rt.tape.value(h).all_finite() {
                return Err(Error::Numeric { layer: i, message: "non-finite activation".into() });
            }
        }
        let features = rt.tape.split_rows(h, steps)?;

        let head = self.head.forward(&mut rt, &features, true)?;
        let current = rt.tape.scale(head.logits, self.spec.head.scale);
        if !rt.tape.value(current).all_finite() {
            return Err(Error::Numeric { layer: self.layers.len(), message: "non-finite logits".into() });
        }
        let spikes = rt.lif_sequence(&vec![current; steps], &self.spec.output_lif)?;
        let counts = rt.tape.add_n(&spikes)?;
        Ok(Recorded { counts, features, head, params })
    }

    /// Evaluation-mode forward without gradient recording.
    pub fn forward(&self, inputs: &[Tensor], steps: usize) -> Result<ForwardOutput> {
        let mut tape = Tape::no_grad();
        let mut stats = self.stats.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = self.record(&mut tape, &mut stats, inputs, steps, Mode::Eval, &mut rng)?;
        Ok(collect_output(&tape, &rec))
    }
}

/// Presents a static input at every timestep.
fn repeat_over_time(tape: &mut Tape, x: Var, steps: usize) -> Result<Var> {
    tape.stack_rows(&vec![x; steps])
}

/// Reads the values behind a recorded pass.
pub fn collect_output(tape: &Tape, rec: &Recorded) -> ForwardOutput {
    let mut emb = Vec::new();
    let mut shape = vec![rec.features.len()];
    for (i, &f) in rec.features.iter().enumerate() {
        if i == 0 {
            shape.extend_from_slice(tape.shape(f));
        }
        emb.extend_from_slice(tape.value(f).data());
    }
    ForwardOutput {
        counts: tape.value(rec.counts).clone(),
        logits: tape.value(rec.head.logits).clone(),
        embeddings: Tensor::new(shape, emb).expect("embedding shape"),
        normalized: rec.head.embedding.map(|e| tape.value(e).clone()),
        degenerate: rec.head.degenerate.clone(),
    }
}

/// Runs `g` for `steps` timesteps on a static batch. Alias of
/// [`ModelGraph::forward`].
pub fn forward_multistep(g: &ModelGraph, batch: &[Tensor], steps: usize) -> Result<ForwardOutput> {
    g.forward(batch, steps)
}

impl fmt::Display for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, line) in self.layer_listing().iter().enumerate() {
            writeln!(f, "{i:>3}  {line}")?;
        }
        write!(f, "parameters: {}", self.parameter_count())
    }
}
