use super::{GraphSpec, ModelGraph, NetworkCommon};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use serde::{Deserialize, Serialize};

/// Spiking CNN over log-mel spectrograms: up to three
/// conv → BN → LIF → maxpool blocks, dropout, flatten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioModelConfig {
    pub n_mels: usize,
    pub frames: usize,
    /// Output channels of the three conv blocks.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dropout_p: f64,
    pub with_dropout: bool,
    pub with_third_block: bool,
    pub with_pooling: bool,
    pub classes: usize,
}

impl Default for AudioModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AudioModelConfig {
    /// 64 mel bins × 427 frames (5 s at 22.05 kHz, n_fft 1024, hop 256);
    /// 16-32-64 channels flatten to 64 × 8 × 53 = 27136 features.
    pub fn full() -> Self {
        AudioModelConfig {
            n_mels: 64,
            frames: 427,
            channels: vec![16, 32, 64],
            kernel: 3,
            pool: 2,
            dropout_p: 0.5,
            with_dropout: true,
            with_third_block: true,
            with_pooling: true,
            classes: 10,
        }
    }

    /// 64 mel bins × 28 frames (0.5 s at 16 kHz), 4-8-8 channels.
    pub fn desk() -> Self {
        AudioModelConfig { frames: 28, channels: vec![4, 8, 8], classes: 4, ..Self::full() }
    }

    pub fn to_spec(&self, common: &NetworkCommon) -> Result<GraphSpec> {
        if self.channels.len() != 3 || self.channels.contains(&0) {
            return Err(Error::Config(format!("audio network needs three positive channel counts, got {:?}", self.channels)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("audio kernel must be odd to preserve extent".into()));
        }
        let blocks = if self.with_third_block { 3 } else { 2 };
        let mut layers = Vec::new();
        let mut ch = 1;
        for &out in &self.channels[..blocks] {
            layers.push(LayerSpec::Conv {
                in_channels: ch,
                out_channels: out,
                kernel: self.kernel,
                stride: 1,
                padding: self.kernel / 2,
            });
            layers.push(LayerSpec::BatchNorm { channels: out });
            layers.push(LayerSpec::Lif { neuron: common.neuron });
            if self.with_pooling {
                layers.push(LayerSpec::MaxPool { size: self.pool });
            }
            ch = out;
        }
        if self.with_dropout {
            layers.push(LayerSpec::Dropout { p: self.dropout_p });
        }
        layers.push(LayerSpec::Flatten);
        let input_shape = vec![1, self.n_mels, self.frames];
        let shapes = crate::layers::infer_shapes(&layers, &input_shape)?;
        let d = shapes.last().map_or(0, |s| s[0]);
        if d == 0 {
            return Err(Error::Config("audio configuration produces an empty feature vector".into()));
        }
        Ok(GraphSpec {
            name: "audio".into(),
            input_shape,
            layers,
            head: common.head_spec(d, self.classes),
            output_lif: common.output_neuron(),
        })
    }
}

pub fn build_audio(cfg: &AudioModelConfig, common: &NetworkCommon, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(cfg.to_spec(common)?, seed)
}
