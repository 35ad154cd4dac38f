use super::{GraphSpec, ModelGraph, NetworkCommon};
use crate::error::{Error, Result};
use crate::layers::{BlockSpec, BlockVariant, LayerSpec};
use serde::{Deserialize, Serialize};

/// Spiking ResNet-18-style visual network: stem, four stages of residual
/// blocks with widths `base_width * [1, 2, 4, 8]`, global average pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualModelConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub base_width: usize,
    /// Residual blocks per stage.
    pub stage_blocks: Vec<usize>,
    pub block_variant: BlockVariant,
    pub classes: usize,
}

impl Default for VisualModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl VisualModelConfig {
    /// Full width: 64-128-256-512, 32×32 colour input, ten classes.
    pub fn full() -> Self {
        VisualModelConfig {
            in_channels: 3,
            image_size: 32,
            base_width: 64,
            stage_blocks: vec![2, 2, 2, 2],
            block_variant: BlockVariant::Baseline,
            classes: 10,
        }
    }

    /// One-eighth width on 8×8 inputs, one block per stage. The last stage
    /// already works on 1×1 maps here, and a second block per stage stalls
    /// training at this size.
    pub fn desk() -> Self {
        VisualModelConfig { image_size: 8, base_width: 8, stage_blocks: vec![1, 1, 1, 1], classes: 4, ..Self::full() }
    }

    pub fn to_spec(&self, common: &NetworkCommon) -> Result<GraphSpec> {
        if self.stage_blocks.is_empty() || self.stage_blocks.contains(&0) || self.base_width == 0 {
            return Err(Error::Config(format!("invalid stage layout {:?} / width {}", self.stage_blocks, self.base_width)));
        }
        let neuron = common.neuron;
        let w0 = self.base_width;
        let mut layers = vec![
            LayerSpec::Conv { in_channels: self.in_channels, out_channels: w0, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Lif { neuron },
            LayerSpec::BatchNorm { channels: w0 },
        ];
        let mut ch = w0;
        for (stage, &blocks) in self.stage_blocks.iter().enumerate() {
            let width = w0 << stage;
            for i in 0..blocks {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                layers.push(LayerSpec::Residual {
                    block: BlockSpec {
                        in_channels: ch,
                        out_channels: width,
                        stride,
                        variant: self.block_variant,
                        lif_inner: neuron,
                        lif_out: neuron,
                    },
                });
                ch = width;
            }
        }
        layers.push(LayerSpec::AvgPool);
        Ok(GraphSpec {
            name: "visual".into(),
            input_shape: vec![self.in_channels, self.image_size, self.image_size],
            layers,
            head: common.head_spec(ch, self.classes),
            output_lif: common.output_neuron(),
        })
    }
}

pub fn build_visual(cfg: &VisualModelConfig, common: &NetworkCommon, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(cfg.to_spec(common)?, seed)
}
