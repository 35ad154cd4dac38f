//! The visual, audio and fusion networks, a small MLP, and checkpoints.

mod audio_net;
mod checkpoint;
mod fusion;
mod graph;
mod mlp;
mod visual;

pub use audio_net::{build_audio, AudioModelConfig};
pub use checkpoint::Checkpoint;
pub use fusion::{build_smlp, FusionConfig};
pub use graph::{collect_output, forward_multistep, ForwardOutput, GraphSpec, ModelGraph, Recorded};
pub use mlp::{build_mlp, MlpConfig};
pub use visual::{build_visual, VisualModelConfig};

use crate::layers::{HeadKind, HeadSpec};
use crate::neuron::LifConfig;
use serde::{Deserialize, Serialize};

/// Settings shared by every architecture: hidden neurons and the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkCommon {
    pub neuron: LifConfig,
    pub head: HeadKind,
    /// Gain from logits to output current; defaults to the firing threshold,
    /// so a logit of 1 charges an output neuron to threshold in one step.
    pub head_scale: Option<f64>,
}

impl NetworkCommon {
    pub fn head_spec(&self, features: usize, classes: usize) -> HeadSpec {
        HeadSpec { kind: self.head, features, classes, scale: self.head_scale.unwrap_or(self.neuron.v_th) }
    }

    pub fn output_neuron(&self) -> LifConfig {
        self.neuron
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }
}
