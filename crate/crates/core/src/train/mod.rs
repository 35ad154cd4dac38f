//! Experiment harness: configuration, synthetic data, optimisation and runs.

mod config;
mod data;
mod optim;
mod runner;

pub use config::{Ablation, ExperimentConfig, FusionSection, Modality, SchedulerConfig, TargetConfig};
pub use data::{gather, gaussian_blobs, generate_avtoy, nearest_centroid_accuracy, AvDataset, AvToySpec, Manifest, SampleEntry};
pub use optim::{adam_step, adam_step_store, milestone_lr, AdamConfig, AdamState};
pub use runner::{
    dominance_inputs, epoch_rng, evaluate, evaluate_samples, extract_embeddings, fit_epochs, metrics_csv,
    parse_metrics_csv, run_fusion, train, train_epoch, unimodal_samples, EpochMetrics, EvalReport, Evaluation,
    FitOptions, RunSummary, Samples, METRICS_HEADER,
};
