use super::{GraphSpec, ModelGraph, NetworkCommon};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use serde::{Deserialize, Serialize};

/// Fully connected spiking network: (linear → LIF)* then the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { inputs: 2, hidden: vec![32, 16], classes: 3 }
    }
}

impl MlpConfig {
    pub fn to_spec(&self, common: &NetworkCommon) -> Result<GraphSpec> {
        if self.inputs == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid mlp layout {self:?}")));
        }
        let mut layers = Vec::new();
        let mut cur = self.inputs;
        for &h in &self.hidden {
            layers.push(LayerSpec::Linear { in_features: cur, out_features: h, bias: true });
            layers.push(LayerSpec::Lif { neuron: common.neuron });
            cur = h;
        }
        Ok(GraphSpec {
            name: "mlp".into(),
            input_shape: vec![self.inputs],
            layers,
            head: common.head_spec(cur, self.classes),
            output_lif: common.output_neuron(),
        })
    }
}

pub fn build_mlp(cfg: &MlpConfig, common: &NetworkCommon, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(cfg.to_spec(common)?, seed)
}
