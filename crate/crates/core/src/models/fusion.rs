use super::{GraphSpec, ModelGraph, NetworkCommon};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use serde::{Deserialize, Serialize};

/// Spiking MLP over concatenated visual and audio embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { visual_dim: 64, audio_dim: 192, hidden: vec![256, 64], classes: 4 }
    }
}

impl FusionConfig {
    pub fn full() -> Self {
        FusionConfig { visual_dim: 512, audio_dim: 27136, classes: 10, ..Self::default() }
    }

    pub fn concat_width(&self) -> usize {
        self.visual_dim + self.audio_dim
    }

    /// concat → BN → (linear → BN → LIF)*.
    pub fn to_spec(&self, common: &NetworkCommon) -> Result<GraphSpec> {
        if self.visual_dim == 0 || self.audio_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid fusion widths {self:?}")));
        }
        let width = self.concat_width();
        let mut layers = vec![
            LayerSpec::Concat { widths: vec![self.visual_dim, self.audio_dim] },
            LayerSpec::BatchNorm { channels: width },
        ];
        let mut cur = width;
        for &h in &self.hidden {
            layers.push(LayerSpec::Linear { in_features: cur, out_features: h, bias: false });
            layers.push(LayerSpec::BatchNorm { channels: h });
            layers.push(LayerSpec::Lif { neuron: common.neuron });
            cur = h;
        }
        Ok(GraphSpec {
            name: "smlp".into(),
            input_shape: vec![width],
            layers,
            head: common.head_spec(cur, self.classes),
            output_lif: common.output_neuron(),
        })
    }
}

pub fn build_smlp(cfg: &FusionConfig, common: &NetworkCommon, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(cfg.to_spec(common)?, seed)
}
