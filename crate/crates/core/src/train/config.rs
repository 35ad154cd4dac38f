use super::optim::AdamConfig;
use crate::audio::LogMelConfig;
use crate::error::{Error, Result};
use crate::layers::BlockVariant;
use crate::loss::RateTargets;
use crate::models::{AudioModelConfig, FusionConfig, ModelGraph, NetworkCommon, VisualModelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Visual,
    Audio,
    Fusion,
}

/// Architecture variants reachable from a single switch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Baseline,
    /// Visual blocks: LIF directly after the inner batch norm.
    LifAfterBn,
    /// Visual blocks: LIF on the residual branch before the addition.
    LifBeforeAdd,
    /// Audio network without the final dropout.
    NoDropout,
    /// Audio network with two conv blocks.
    NoThirdBlock,
    /// Audio network without max pooling.
    NoPooling,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Baseline,
        Ablation::LifAfterBn,
        Ablation::LifBeforeAdd,
        Ablation::NoDropout,
        Ablation::NoThirdBlock,
        Ablation::NoPooling,
    ];

    pub fn apply(self, visual: &mut VisualModelConfig, audio: &mut AudioModelConfig) {
        match self {
            Ablation::Baseline => {}
            Ablation::LifAfterBn => visual.block_variant = BlockVariant::LifAfterBn,
            Ablation::LifBeforeAdd => visual.block_variant = BlockVariant::LifBeforeAdd,
            Ablation::NoDropout => audio.with_dropout = false,
            Ablation::NoThirdBlock => audio.with_third_block = false,
            Ablation::NoPooling => audio.with_pooling = false,
        }
    }

    /// The modality whose network the switch changes.
    pub fn modality(self) -> Option<Modality> {
        match self {
            Ablation::Baseline => None,
            Ablation::LifAfterBn | Ablation::LifBeforeAdd => Some(Modality::Visual),
            _ => Some(Modality::Audio),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Epochs at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { milestones: Vec::new(), gamma: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub r_correct: f64,
    pub r_incorrect: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { r_correct: 0.9, r_incorrect: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    #[serde(flatten)]
    pub model: FusionConfig,
    /// Permute audio embeddings within each split, breaking the pairing.
    pub shuffle_pairing: bool,
}

/// Everything that defines a run. Loaded from TOML; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub modality: Modality,
    pub seed: u64,
    /// Timesteps per sample.
    pub steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Continue from `output_dir/last.ckpt` when it exists.
    pub resume: bool,
    pub ablation: Ablation,
    pub network: NetworkCommon,
    pub visual: VisualModelConfig,
    pub audio: AudioModelConfig,
    pub fusion: FusionSection,
    pub frontend: LogMelConfig,
    pub optimizer: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub targets: TargetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            modality: Modality::Visual,
            seed: 0,
            steps: 8,
            batch_size: 32,
            epochs: 10,
            data_dir: PathBuf::from("data/avtoy"),
            output_dir: PathBuf::from("runs/visual"),
            resume: false,
            ablation: Ablation::Baseline,
            network: NetworkCommon::default(),
            visual: VisualModelConfig::desk(),
            audio: AudioModelConfig::desk(),
            fusion: FusionSection::default(),
            frontend: LogMelConfig::default(),
            optimizer: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            targets: TargetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        let m = &self.scheduler.milestones;
        if m.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("milestones must be strictly increasing, got {m:?}")));
        }
        if let Some(&last) = m.last() {
            if last >= self.epochs {
                return Err(Error::Config(format!("milestone {last} is not below epochs {}", self.epochs)));
            }
        }
        if !(self.optimizer.lr > 0.0) || self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {:?}", self.optimizer)));
        }
        self.rate_targets()?;
        self.network.neuron.validate()
    }

    pub fn rate_targets(&self) -> Result<RateTargets> {
        RateTargets::new(self.targets.r_correct, self.targets.r_incorrect, self.steps)
    }

    /// Model configs with the ablation switch applied.
    pub fn model_configs(&self) -> (VisualModelConfig, AudioModelConfig) {
        let (mut v, mut a) = (self.visual.clone(), self.audio.clone());
        self.ablation.apply(&mut v, &mut a);
        (v, a)
    }

    /// Builds the unimodal network selected by `modality`.
    pub fn build_model(&self) -> Result<ModelGraph> {
        let (v, a) = self.model_configs();
        match self.modality {
            Modality::Visual => crate::models::build_visual(&v, &self.network, self.seed),
            Modality::Audio => crate::models::build_audio(&a, &self.network, self.seed),
            Modality::Fusion => crate::models::build_smlp(&self.fusion.model, &self.network, self.seed),
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring `epochs`,
    /// `output_dir` and `resume` so a run may be extended in place.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["epochs", "output_dir", "resume"] {
                obj.remove(key);
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str("modality = \"audio\"\nsteps = 4\n[optimizer]\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.modality, Modality::Audio);
        assert_eq!(cfg.optimizer.betas, [0.9, 0.999]);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_milestones_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("stepz = 3"), Err(Error::Config(_))));
        let bad = "epochs = 10\n[scheduler]\nmilestones = [5, 5]\n";
        assert!(matches!(ExperimentConfig::from_toml_str(bad), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_run_length() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { epochs: 99, resume: true, ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
