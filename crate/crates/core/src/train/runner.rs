//! Minibatch surrogate-gradient training, evaluation and fusion runs.

use super::config::{ExperimentConfig, Modality, SchedulerConfig, TargetConfig};
use super::data::{gather, AvDataset};
use super::optim::{adam_step_store, milestone_lr, AdamConfig, AdamState};
use crate::discrimination::{BankMeta, FeatureBank};
use crate::error::{dim_err, Error, Result};
use crate::layers::{HeadKind, Mode};
use crate::loss::{accuracy_and_confusion, mse_count_loss, spike_targets, write_confusion_csv, RateTargets};
use crate::models::{Checkpoint, ModelGraph};
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Model inputs (one tensor per input stream, samples on the first axis)
/// and their labels.
#[derive(Clone, Debug)]
pub struct Samples {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() || inputs.iter().any(|t| t.shape().first() != Some(&labels.len())) {
            return dim_err(format!("{} labels for inputs {:?}", labels.len(), inputs.iter().map(Tensor::shape).collect::<Vec<_>>()));
        }
        Ok(Samples { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Vec<Tensor> {
        self.inputs.iter().map(|t| gather(t, idx)).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples { inputs: self.batch(idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Hyperparameters consumed by the training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub targets: TargetConfig,
}

impl From<&ExperimentConfig> for FitOptions {
    fn from(c: &ExperimentConfig) -> Self {
        FitOptions {
            steps: c.steps,
            batch_size: c.batch_size,
            seed: c.seed,
            optimizer: c.optimizer,
            scheduler: c.scheduler.clone(),
            targets: c.targets,
        }
    }
}

impl FitOptions {
    fn rate_targets(&self) -> Result<RateTargets> {
        RateTargets::new(self.targets.r_correct, self.targets.r_incorrect, self.steps)
    }
}

/// Shuffling and dropout randomness for one epoch; independent of how many
/// epochs ran before, so resumed runs replay exactly.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// One pass over `data` in shuffled minibatches. Returns the sample-weighted
/// mean training loss and the learning rate used.
pub fn train_epoch(
    model: &mut ModelGraph,
    opt: &mut AdamState,
    data: &Samples,
    o: &FitOptions,
    epoch: usize,
) -> Result<(f64, f64)> {
    let lr = milestone_lr(epoch, o.optimizer.lr, &o.scheduler.milestones, o.scheduler.gamma);
    let rt = o.rate_targets()?;
    let mut rng = epoch_rng(o.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    for (b, chunk) in order.chunks(o.batch_size).enumerate() {
        let inputs = data.batch(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let mut tape = Tape::new();
        let mut stats = std::mem::take(&mut model.stats);
        let rec = model.record(&mut tape, &mut stats, &inputs, o.steps, Mode::Train, &mut rng);
        model.stats = stats;
        let rec = rec?;
        let target = spike_targets(&labels, &rt, model.classes())?;
        let loss = tape.mse(rec.counts, &target)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        let grads = tape.backward(loss)?;
        for (p, &v) in model.params.iter_mut().zip(&rec.params) {
            p.grad = Some(grads.get_or_zeros(v, p.value.shape()));
        }
        adam_step_store(&mut model.params, opt, lr, &o.optimizer)?;
        total += value * chunk.len() as f64;
    }
    Ok((total / data.len().max(1) as f64, lr))
}

/// Evaluation-mode outputs over a whole split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// n × C output spike counts.
    pub counts: Tensor,
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: Tensor,
    /// Sum of pre-head features over all timesteps, n × d.
    pub accumulated: Tensor,
    /// Pre-head features of the first timestep, n × d.
    pub first_step: Tensor,
    /// Head input embedding per sample: unit-norm for the L2 head, the
    /// time-averaged feature otherwise. n × d.
    pub embedding: Tensor,
    pub degenerate: Vec<usize>,
}

pub fn evaluate_samples(model: &ModelGraph, data: &Samples, steps: usize, batch: usize, targets: &TargetConfig) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let outs = idx
        .par_chunks(batch.max(1))
        .map(|chunk| model.forward(&data.batch(chunk), steps))
        .collect::<Result<Vec<_>>>()?;
    let (c, d) = (model.classes(), model.feature_dim());
    let (mut counts, mut acc, mut first, mut emb, mut degenerate) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut offset = 0;
    for out in &outs {
        let b = out.counts.shape()[0];
        counts.extend_from_slice(out.counts.data());
        let e = out.embeddings.data();
        for i in 0..b {
            let mut sum = vec![0.0; d];
            for t in 0..steps {
                let row = &e[(t * b + i) * d..(t * b + i + 1) * d];
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            first.extend_from_slice(&e[i * d..(i + 1) * d]);
            match &out.normalized {
                Some(n) => emb.extend_from_slice(n.row(i)),
                None => emb.extend(sum.iter().map(|s| s / steps as f64)),
            }
            acc.extend(sum);
        }
        degenerate.extend(out.degenerate.iter().map(|r| r + offset));
        offset += b;
    }
    let n = data.len();
    let counts = Tensor::new(vec![n, c], counts)?;
    let rt = RateTargets::new(targets.r_correct, targets.r_incorrect, steps)?;
    let loss = mse_count_loss(&counts, &spike_targets(&data.labels, &rt, c)?)?;
    let (accuracy, confusion) = accuracy_and_confusion(&counts, &data.labels)?;
    Ok(Evaluation {
        counts,
        accuracy,
        loss,
        confusion,
        accumulated: Tensor::new(vec![n, d], acc)?,
        first_step: Tensor::new(vec![n, d], first)?,
        embedding: Tensor::new(vec![n, d], emb)?,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Number of completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,test_loss,test_acc";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", m.epoch, m.lr, m.train_loss, m.train_acc, m.test_loss, m.test_acc);
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics file has an unexpected header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format(format!("bad metrics row {l:?}")))
            };
            Ok(EpochMetrics {
                epoch: num(0)? as usize,
                lr: num(1)?,
                train_loss: num(2)?,
                train_acc: num(3)?,
                test_loss: num(4)?,
                test_acc: num(5)?,
            })
        })
        .collect()
}

/// Trains epochs `start..end`, evaluating both splits after each one and
/// handing the result to `on_epoch`.
pub fn fit_epochs(
    model: &mut ModelGraph,
    opt: &mut AdamState,
    train: &Samples,
    test: &Samples,
    o: &FitOptions,
    epochs: std::ops::Range<usize>,
    mut on_epoch: impl FnMut(&ModelGraph, &AdamState, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let mut rows = Vec::new();
    for epoch in epochs {
        let (train_loss, lr) = train_epoch(model, opt, train, o, epoch)?;
        let tr = evaluate_samples(model, train, o.steps, o.batch_size, &o.targets)?;
        let te = evaluate_samples(model, test, o.steps, o.batch_size, &o.targets)?;
        let m = EpochMetrics { epoch: epoch + 1, lr, train_loss, train_acc: tr.accuracy, test_loss: te.loss, test_acc: te.accuracy };
        log::info!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.3}  test {:.3}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.test_acc
        );
        on_epoch(model, opt, &m)?;
        rows.push(m);
    }
    Ok(rows)
}

/// Train and test samples of one modality.
pub fn unimodal_samples(data: &AvDataset, modality: Modality) -> Result<(Samples, Samples)> {
    let source = match modality {
        Modality::Visual => &data.images,
        Modality::Audio => &data.audio,
        Modality::Fusion => return Err(Error::Config("fusion inputs come from frozen extractors".into())),
    };
    let split = |idx: &[usize]| Samples::new(vec![gather(source, idx)], idx.iter().map(|&i| data.labels[i]).collect());
    Ok((split(&data.train)?, split(&data.test)?))
}

/// Head input embedding of every sample (see [`Evaluation::embedding`]).
pub fn extract_embeddings(model: &ModelGraph, x: &Tensor, steps: usize, batch: usize) -> Result<Tensor> {
    let n = x.shape()[0];
    let data = Samples::new(vec![x.clone()], vec![0; n])?;
    let out = evaluate_samples(model, &data, steps, batch, &TargetConfig::default())?;
    Ok(out.embedding)
}

/// Output weights and first-step feature vectors in the form used by the
/// dominance check: the L2 head uses unit-norm weight columns; the affine
/// head appends its bias as an extra weight row and a constant 1 feature.
pub fn dominance_inputs(model: &ModelGraph, first_step: &Tensor) -> Result<(Tensor, Tensor)> {
    let find = |name: &str| model.params.iter().find(|p| p.name == name).map(|p| p.value.clone());
    let w = find("head.w").ok_or_else(|| Error::Contract("model has no head weights".into()))?;
    let (d, c) = (w.shape()[0], w.shape()[1]);
    match model.head_kind() {
        HeadKind::L2norm => {
            let mut wn = w.clone();
            for j in 0..c {
                let norm = (0..d).map(|i| w.data()[i * c + j].powi(2)).sum::<f64>().sqrt();
                for i in 0..d {
                    wn.data_mut()[i * c + j] /= norm;
                }
            }
            Ok((wn, first_step.clone()))
        }
        HeadKind::Vanilla => {
            let b = find("head.b").unwrap_or_else(|| Tensor::zeros(&[c]));
            let mut wa = w.into_data();
            wa.extend_from_slice(b.data());
            let n = first_step.shape()[0];
            let mut fa = Vec::with_capacity(n * (d + 1));
            for i in 0..n {
                fa.extend_from_slice(first_step.row(i));
                fa.push(1.0);
            }
            Ok((Tensor::new(vec![d + 1, c], wa)?, Tensor::new(vec![n, d + 1], fa)?))
        }
    }
}

/// Paths and history of a finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metrics: Vec<EpochMetrics>,
    pub best: PathBuf,
    pub last: PathBuf,
    pub metrics_path: PathBuf,
}

fn labels_digest(labels: &[usize]) -> String {
    let text: String = labels.iter().map(|l| format!("{l},")).collect();
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shared driver for unimodal and fusion runs: resume, epochs, metrics CSV,
/// best/last checkpoints.
fn run_training(
    cfg: &ExperimentConfig,
    mut model: ModelGraph,
    train: &Samples,
    test: &Samples,
    mut meta: serde_json::Value,
) -> Result<RunSummary> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let best_path = out.join("best.ckpt");
    let last_path = out.join("last.ckpt");
    let metrics_path = out.join("metrics.csv");
    let hash = cfg.hash();
    meta["config"] = serde_json::to_value(cfg)?;

    let mut opt = AdamState::new(&model.params);
    let mut rows = Vec::new();
    let mut start = 0;
    if cfg.resume && last_path.exists() {
        let ck = Checkpoint::load(&last_path)?;
        if ck.config_hash != hash {
            return Err(Error::Config(format!(
                "{} was written by a different configuration (hash {} != {hash})",
                last_path.display(),
                ck.config_hash
            )));
        }
        start = ck.epoch;
        opt = ck.optimizer.unwrap_or(opt);
        model = ck.model;
        if metrics_path.exists() {
            rows = parse_metrics_csv(&std::fs::read_to_string(&metrics_path)?)?;
            rows.retain(|r| r.epoch <= start);
        }
        log::info!("resuming from epoch {start}");
    }
    let save = |model: &ModelGraph, opt: &AdamState, epoch: usize, path: &Path| -> Result<()> {
        let ck = Checkpoint {
            model: model.clone(),
            optimizer: Some(opt.clone()),
            epoch,
            config_hash: hash.clone(),
            meta: meta.clone(),
        };
        ck.save(path)
    };
    if start == 0 {
        save(&model, &opt, 0, &last_path)?;
        save(&model, &opt, 0, &best_path)?;
    }
    std::fs::write(&metrics_path, metrics_csv(&rows))?;
    let mut best_acc = rows.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
    let o = FitOptions::from(cfg);
    let end = cfg.epochs.max(start);
    fit_epochs(&mut model, &mut opt, train, test, &o, start..end, |model, opt, m| {
        rows.push(m.clone());
        std::fs::write(&metrics_path, metrics_csv(&rows))?;
        save(model, opt, m.epoch, &last_path)?;
        if m.test_acc > best_acc {
            best_acc = m.test_acc;
            save(model, opt, m.epoch, &best_path)?;
        }
        Ok(())
    })?;
    Ok(RunSummary { metrics: rows, best: best_path, last: last_path, metrics_path })
}

/// Trains a unimodal network as configured.
pub fn train(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.modality == Modality::Fusion {
        return Err(Error::Config("fusion runs need the unimodal checkpoints; use run_fusion".into()));
    }
    let data = AvDataset::load(&cfg.data_dir, &cfg.frontend)?;
    let model = cfg.build_model()?;
    if model.classes() != data.classes() {
        return Err(Error::Config(format!("model has {} classes, dataset {}", model.classes(), data.classes())));
    }
    let (train, test) = unimodal_samples(&data, cfg.modality)?;
    let meta = serde_json::json!({ "labels_digest": labels_digest(&data.labels) });
    run_training(cfg, model, &train, &test, meta)
}

fn checkpoint_config(ck: &Checkpoint) -> Result<ExperimentConfig> {
    let v = ck.meta.get("config").cloned().ok_or_else(|| Error::Format("checkpoint lacks its configuration".into()))?;
    Ok(serde_json::from_value(v)?)
}

/// Frozen unimodal networks feeding the fusion network.
struct Extractors {
    visual: (ModelGraph, ExperimentConfig),
    audio: (ModelGraph, ExperimentConfig),
}

impl Extractors {
    fn load(visual: &Path, audio: &Path) -> Result<Self> {
        let v = Checkpoint::load(visual)?;
        let a = Checkpoint::load(audio)?;
        let (vc, ac) = (checkpoint_config(&v)?, checkpoint_config(&a)?);
        if vc.modality != Modality::Visual || ac.modality != Modality::Audio {
            return Err(Error::Config("expected a visual and an audio checkpoint".into()));
        }
        if v.meta.get("labels_digest") != a.meta.get("labels_digest") {
            return Err(Error::Config("the two checkpoints were trained on differently labelled data".into()));
        }
        Ok(Extractors { visual: (v.model, vc), audio: (a.model, ac) })
    }

    /// (train, test) samples of concatenation inputs, optionally with the
    /// audio rows permuted within each split.
    fn samples(&self, data: &AvDataset, shuffle_seed: Option<u64>) -> Result<(Samples, Samples)> {
        let (vm, vc) = &self.visual;
        let (am, ac) = &self.audio;
        let split = |idx: &[usize], salt: u64| -> Result<Samples> {
            let v = extract_embeddings(vm, &gather(&data.images, idx), vc.steps, vc.batch_size)?;
            let mut a = extract_embeddings(am, &gather(&data.audio, idx), ac.steps, ac.batch_size)?;
            if let Some(seed) = shuffle_seed {
                let mut perm: Vec<usize> = (0..idx.len()).collect();
                perm.shuffle(&mut epoch_rng(seed, usize::MAX - salt as usize));
                a = gather(&a, &perm);
            }
            Samples::new(vec![v, a], idx.iter().map(|&i| data.labels[i]).collect())
        };
        Ok((split(&data.train, 0)?, split(&data.test, 1)?))
    }
}

/// Trains the fusion network on embeddings of two frozen unimodal models.
pub fn run_fusion(visual_ckpt: &Path, audio_ckpt: &Path, cfg: &ExperimentConfig) -> Result<RunSummary> {
    let cfg = ExperimentConfig { modality: Modality::Fusion, ..cfg.clone() };
    cfg.validate()?;
    let ex = Extractors::load(visual_ckpt, audio_ckpt)?;
    let data = AvDataset::load(&cfg.data_dir, &ex.audio.1.frontend)?;
    let digest = labels_digest(&data.labels);
    for (m, ck) in [(&ex.visual.0, visual_ckpt), (&ex.audio.0, audio_ckpt)] {
        if m.classes() != data.classes() {
            return Err(Error::Config(format!("{} predicts {} classes, dataset has {}", ck.display(), m.classes(), data.classes())));
        }
    }
    let stored = Checkpoint::load(visual_ckpt)?.meta.get("labels_digest").cloned();
    if stored.as_ref().and_then(|v| v.as_str()) != Some(digest.as_str()) {
        return Err(Error::Config("dataset labels differ from those the extractors were trained on".into()));
    }
    let f = &cfg.fusion.model;
    if f.visual_dim != ex.visual.0.feature_dim() || f.audio_dim != ex.audio.0.feature_dim() {
        return Err(Error::Config(format!(
            "fusion expects {}+{} features, extractors emit {}+{}",
            f.visual_dim,
            f.audio_dim,
            ex.visual.0.feature_dim(),
            ex.audio.0.feature_dim()
        )));
    }
    let (train, test) = ex.samples(&data, cfg.fusion.shuffle_pairing.then_some(cfg.seed))?;
    let model = cfg.build_model()?;
    let meta = serde_json::json!({
        "labels_digest": digest,
        "visual_checkpoint": visual_ckpt,
        "audio_checkpoint": audio_ckpt,
    });
    run_training(&cfg, model, &train, &test, meta)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
    /// Path of the exported confusion CSV.
    pub confusion_csv: PathBuf,
    pub feature_bank: Option<PathBuf>,
}

/// Evaluates a checkpoint on both splits of `data_dir`, writing
/// `confusion-<split>.csv` into `out_dir` and, with `export`, one feature
/// bank per split named `<stem>-<split>.sdt` next to `export`.
pub fn evaluate(ckpt_path: &Path, data_dir: &Path, out_dir: &Path, export: Option<&Path>) -> Result<Vec<EvalReport>> {
    let ck = Checkpoint::load(ckpt_path)?;
    let cfg = checkpoint_config(&ck)?;
    let (train, test) = match cfg.modality {
        Modality::Fusion => {
            let path = |k: &str| -> Result<PathBuf> {
                ck.meta
                    .get(k)
                    .and_then(|v| v.as_str())
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Format(format!("fusion checkpoint lacks {k}")))
            };
            let ex = Extractors::load(&path("visual_checkpoint")?, &path("audio_checkpoint")?)?;
            let data = AvDataset::load(data_dir, &ex.audio.1.frontend)?;
            ex.samples(&data, cfg.fusion.shuffle_pairing.then_some(cfg.seed))?
        }
        m => unimodal_samples(&AvDataset::load(data_dir, &cfg.frontend)?, m)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    for (name, samples) in [("train", &train), ("test", &test)] {
        let ev = evaluate_samples(&ck.model, samples, cfg.steps, cfg.batch_size, &cfg.targets)?;
        let confusion_csv = out_dir.join(format!("confusion-{name}.csv"));
        write_confusion_csv(&confusion_csv, &ev.confusion)?;
        let feature_bank = match export {
            Some(p) => {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
                let path = p.with_file_name(format!("{stem}-{name}.sdt"));
                let meta = BankMeta {
                    modality: format!("{:?}", cfg.modality).to_lowercase(),
                    set: name.into(),
                    head: ck.model.head_kind(),
                    allow_degenerate: true,
                };
                FeatureBank::new(ev.accumulated.clone(), samples.labels.clone(), meta)?.save(&path)?;
                Some(path)
            }
            None => None,
        };
        reports.push(EvalReport {
            split: name.into(),
            accuracy: ev.accuracy,
            loss: ev.loss,
            samples: samples.len(),
            confusion_csv,
            feature_bank,
        });
    }
    Ok(reports)
}
