//! Synthetic paired audio-visual data, a 2-D Gaussian toy set, and loaders.

use crate::audio::{LogMel, LogMelConfig};
use crate::error::{Error, Result};
use crate::io::{read_tensor, read_wave, write_tensor, write_wave};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Recipe for the paired toy dataset. Every sample pairs an image texture
/// and an audio tone family of the same class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvToySpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    pub sample_rate: u32,
    pub clip_samples: usize,
    pub test_fraction: f64,
    /// Std of additive Gaussian pixel noise.
    pub image_noise: f64,
    /// Std of additive white noise in the waveform.
    pub audio_noise: f64,
    /// Signal amplitudes are drawn from U[1 - jitter, 1 + jitter].
    pub amplitude_jitter: f64,
}

impl Default for AvToySpec {
    fn default() -> Self {
        AvToySpec {
            n_classes: 4,
            per_class: 100,
            image_size: 8,
            channels: 3,
            sample_rate: 16000,
            clip_samples: 8000,
            test_fraction: 0.2,
            image_noise: 0.15,
            audio_noise: 2.0,
            amplitude_jitter: 0.8,
        }
    }
}

impl AvToySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_classes >= 2
            && self.per_class >= 2
            && self.image_size >= 2
            && self.channels >= 1
            && self.clip_samples > 0
            && self.sample_rate > 0
            && (0.0..1.0).contains(&self.test_fraction)
            && self.image_noise >= 0.0
            && self.audio_noise >= 0.0
            && (0.0..1.0).contains(&self.amplitude_jitter);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dataset spec {self:?}")))
        }
    }

    pub fn test_per_class(&self) -> usize {
        ((self.per_class as f64 * self.test_fraction).round() as usize).min(self.per_class - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub label: usize,
    /// "train" or "test".
    pub split: String,
    /// Waveform path relative to the dataset root.
    pub audio: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: AvToySpec,
    pub seed: u64,
    pub classes: usize,
    /// All images as one N × C × H × W tensor file, indexed by sample id.
    pub images: String,
    pub train_count: usize,
    pub test_count: usize,
    pub samples: Vec<SampleEntry>,
}

/// Oriented sinusoidal grating on a class-tinted background, in [0, 1].
fn texture(spec: &AvToySpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.image_size;
    let angle = PI * class as f64 / spec.n_classes as f64;
    let (dx, dy) = (angle.cos(), angle.sin());
    let freq = 2.0 * PI * 2.0 / n as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = rng.random_range(1.0 - spec.amplitude_jitter..1.0 + spec.amplitude_jitter);
    let noise = Normal::new(0.0, spec.image_noise).expect("noise std");
    let mut out = Vec::with_capacity(spec.channels * n * n);
    for ch in 0..spec.channels {
        let tint = if ch == class % spec.channels { 0.15 } else { -0.05 };
        for y in 0..n {
            for x in 0..n {
                let g = (freq * (dx * x as f64 + dy * y as f64) + phase).sin();
                let v = 0.5 + tint * amp + 0.25 * amp * g + noise.sample(rng);
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Harmonic tone with a class-dependent fundamental and overtone balance.
fn tone(spec: &AvToySpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f0 = 220.0 * 2f64.powf(0.75 * class as f64) * rng.random_range(0.97..1.03);
    let amp = rng.random_range(1.0 - spec.amplitude_jitter..1.0 + spec.amplitude_jitter);
    let partials = [1.0, 0.5 + 0.5 * (class % 2) as f64, 0.25 + 0.25 * (class % 3) as f64];
    let phases: Vec<f64> = partials.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let noise = Normal::new(0.0, spec.audio_noise).expect("noise std");
    let sr = spec.sample_rate as f64;
    (0..spec.clip_samples)
        .map(|i| {
            let t = i as f64 / sr;
            let s: f64 = partials
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * PI * f0 * (h + 1) as f64 * t + p).sin())
                .sum();
            (0.5 * amp * s + noise.sample(rng)) as f32
        })
        .collect()
}

/// Writes `images.sdt`, `audio/<id>.f32` (+ sidecars) and `manifest.json`.
pub fn generate_avtoy(spec: &AvToySpec, seed: u64, out: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out.join("audio"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test_per_class = spec.test_per_class();
    let n = spec.n_classes * spec.per_class;
    let mut pixels = Vec::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..spec.per_class {
        for class in 0..spec.n_classes {
            let id = samples.len();
            pixels.extend(texture(spec, class, &mut rng));
            let wave = tone(spec, class, &mut rng);
            let audio = format!("audio/{id:05}.f32");
            write_wave(out.join(&audio), &wave, spec.sample_rate)?;
            let split = if i < spec.per_class - test_per_class { "train" } else { "test" };
            samples.push(SampleEntry { id, label: class, split: split.into(), audio });
        }
    }
    let s = spec.image_size;
    write_tensor(out.join("images.sdt"), &Tensor::new(vec![n, spec.channels, s, s], pixels)?)?;
    let test_count = test_per_class * spec.n_classes;
    let manifest = Manifest {
        spec: spec.clone(),
        seed,
        classes: spec.n_classes,
        images: "images.sdt".into(),
        train_count: n - test_count,
        test_count,
        samples,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A loaded paired dataset with log-mel audio features.
#[derive(Clone, Debug)]
pub struct AvDataset {
    pub manifest: Manifest,
    /// N × C × H × W.
    pub images: Tensor,
    /// N × 1 × n_mels × frames, scaled to [0, 1].
    pub audio: Tensor,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl AvDataset {
    pub fn load(dir: impl AsRef<Path>, frontend: &LogMelConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let images = read_tensor(dir.join(&manifest.images))?;
        let n = manifest.samples.len();
        if images.shape().first() != Some(&n) {
            return Err(Error::Format(format!("{n} samples but images {:?}", images.shape())));
        }
        let lm = LogMel::new(*frontend)?;
        let mels = manifest
            .samples
            .par_iter()
            .map(|s| {
                let (wave, sr) = read_wave(dir.join(&s.audio))?;
                if sr != frontend.stft.sample_rate {
                    return Err(Error::Config(format!(
                        "{}: sample rate {sr} Hz, frontend expects {} Hz",
                        s.audio, frontend.stft.sample_rate
                    )));
                }
                let wave: Vec<f64> = wave.into_iter().map(f64::from).collect();
                lm.normalized(&wave)
            })
            .collect::<Result<Vec<_>>>()?;
        let (m, f) = (mels[0].shape()[0], mels[0].shape()[1]);
        let audio = Tensor::new(vec![n, 1, m, f], mels.into_iter().flat_map(Tensor::into_data).collect())?;
        let mut labels = vec![0; n];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for s in &manifest.samples {
            if s.id >= n || s.label >= manifest.classes {
                return Err(Error::Format(format!("bad manifest entry {s:?}")));
            }
            labels[s.id] = s.label;
            match s.split.as_str() {
                "train" => train.push(s.id),
                "test" => test.push(s.id),
                other => return Err(Error::Format(format!("unknown split {other:?}"))),
            }
        }
        Ok(AvDataset { manifest, images, audio, labels, train, test })
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!("unknown split {name:?}"))),
        }
    }
}

/// Rows `idx` of a tensor whose first axis indexes samples.
pub fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per = t.numel() / t.shape()[0].max(1);
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gather shape")
}

/// `classes` isotropic Gaussian clusters with means on the unit circle.
pub fn gaussian_blobs(classes: usize, per_class: usize, std: f64, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).expect("blob std");
    let mut data = Vec::with_capacity(classes * per_class * 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    for i in 0..classes * per_class {
        let c = i % classes;
        let a = 2.0 * PI * c as f64 / classes as f64;
        data.push(a.cos() + noise.sample(&mut rng));
        data.push(a.sin() + noise.sample(&mut rng));
        labels.push(c);
    }
    (Tensor::new(vec![labels.len(), 2], data).expect("blob shape"), labels)
}

/// Test accuracy of the nearest class mean (Euclidean) on flattened samples.
pub fn nearest_centroid_accuracy(
    x: &Tensor,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    classes: usize,
) -> f64 {
    let d = x.numel() / x.shape()[0];
    let row = |i: usize| &x.data()[i * d..(i + 1) * d];
    let mut centroids = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for &i in train {
        counts[labels[i]] += 1;
        for (c, v) in centroids[labels[i]].iter_mut().zip(row(i)) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let dist = |c: &Vec<f64>| c.iter().zip(row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..classes).fold(0, |b, k| if dist(&centroids[k]) < dist(&centroids[b]) { k } else { b });
            best == labels[i]
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let spec = AvToySpec { per_class: 10, ..AvToySpec::default() };
        assert_eq!(spec.test_per_class(), 2);
    }

    #[test]
    fn blobs_are_labelled_round_robin() {
        let (x, y) = gaussian_blobs(3, 4, 0.1, 1);
        assert_eq!(x.shape(), &[12, 2]);
        assert_eq!(&y[..4], &[0, 1, 2, 0]);
    }

    #[test]
    fn gather_rows() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(gather(&t, &[2, 0]).data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
