//! Waveform to log-mel spectrogram: framed STFT power, a triangular mel
//! filterbank, and power-to-dB conversion.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Floor applied to power values before taking logarithms.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { sample_rate: 16000, n_fft: 1024, hop: 256, window: Window::Hann }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.hop == 0 || self.hop > self.n_fft || self.sample_rate == 0 {
            return Err(Error::Config(format!("invalid STFT settings {self:?}")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced from `len` samples (no centring or padding).
    pub fn frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    /// Samples needed for exactly `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        self.n_fft + frames.saturating_sub(1) * self.hop
    }
}

/// One-sided power spectrogram, frames × (n_fft/2 + 1).
pub fn stft(wave: &[f64], cfg: &StftConfig) -> Result<Tensor> {
    cfg.validate()?;
    if wave.len() < cfg.n_fft {
        return Err(Error::Contract(format!("wave of {} samples is shorter than n_fft {}", wave.len(), cfg.n_fft)));
    }
    let frames = cfg.frames(wave.len());
    let bins = cfg.bins();
    let window = cfg.window.coefficients(cfg.n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * cfg.hop;
        for (b, (x, w)) in buf.iter_mut().zip(wave[start..start + cfg.n_fft].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Tensor::new(vec![frames, bins], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { n_mels: 64, f_min: 0.0, f_max: 8000.0 }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, n_mels × (n_fft/2 + 1), with corner frequencies
/// uniformly spaced on the mel scale between `f_min` and `f_max`.
pub fn mel_filterbank(cfg: &MelConfig, n_fft: usize, sample_rate: u32) -> Result<Tensor> {
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.f_max > nyquist {
        return Err(Error::Config(format!("f_max {} Hz exceeds the Nyquist frequency {nyquist} Hz", cfg.f_max)));
    }
    if cfg.n_mels == 0 || !(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max) {
        return Err(Error::Config(format!("invalid mel settings {cfg:?}")));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let corners: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut data = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (corners[m], corners[m + 1], corners[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rising = (f - left) / (centre - left);
            let falling = (right - f) / (right - centre);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("mel filter {m} covers no FFT bin; raise n_fft or lower n_mels")));
        }
    }
    Tensor::new(vec![cfg.n_mels, bins], data)
}

/// `10 log10(max(p, 1e-10) / reference)`, optionally clamped to at most
/// `top_db` below the maximum output.
pub fn power_to_db(power: &Tensor, reference: f64, top_db: Option<f64>) -> Result<Tensor> {
    if !(reference > 0.0) {
        return Err(Error::Contract(format!("reference power must be positive, got {reference}")));
    }
    let mut db = power.map(|p| 10.0 * (p.max(POWER_FLOOR) / reference).log10());
    if let Some(range) = top_db {
        if !(range >= 0.0) {
            return Err(Error::Contract(format!("top_db must be non-negative, got {range}")));
        }
        let peak = db.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        db.data_mut().iter_mut().for_each(|v| *v = v.max(peak - range));
    }
    Ok(db)
}

/// Full frontend configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogMelConfig {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub top_db: f64,
    /// Waves are zero-padded or trimmed to yield exactly this many frames.
    pub frames: Option<usize>,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig { stft: StftConfig::default(), mel: MelConfig::default(), top_db: 80.0, frames: Some(28) }
    }
}

/// Reusable frontend holding the precomputed filterbank.
#[derive(Clone, Debug)]
pub struct LogMel {
    pub cfg: LogMelConfig,
    filterbank: Tensor,
}

impl LogMel {
    pub fn new(cfg: LogMelConfig) -> Result<Self> {
        cfg.stft.validate()?;
        let filterbank = mel_filterbank(&cfg.mel, cfg.stft.n_fft, cfg.stft.sample_rate)?;
        Ok(LogMel { cfg, filterbank })
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filterbank
    }

    /// Log-mel matrix, n_mels × frames, in dB relative to the clip maximum
    /// and clamped to `top_db` below it.
    pub fn db(&self, wave: &[f64]) -> Result<Tensor> {
        let fitted;
        let wave = match self.cfg.frames {
            Some(frames) => {
                let need = self.cfg.stft.samples_for(frames);
                let mut w = wave[..wave.len().min(need)].to_vec();
                w.resize(need, 0.0);
                fitted = w;
                &fitted[..]
            }
            None => wave,
        };
        let power = stft(wave, &self.cfg.stft)?;
        let mel = matmul(&self.filterbank, &power.transpose2()?)?;
        let peak = mel.data().iter().copied().fold(POWER_FLOOR, f64::max);
        power_to_db(&mel, peak, Some(self.cfg.top_db))
    }

    /// Log-mel scaled to [0, 1]: `(db + top_db) / top_db`.
    pub fn normalized(&self, wave: &[f64]) -> Result<Tensor> {
        let range = self.cfg.top_db;
        Ok(self.db(wave)?.map(|d| (d + range) / range))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn frame_count() {
        let cfg = StftConfig::default();
        for len in [1024, 1025, 1280, 1279, 5000] {
            let s = stft(&vec![0.0; len], &cfg).unwrap();
            assert_eq!(s.shape()[0], 1 + (len - 1024) / 256);
            assert!(s.data().iter().all(|&p| p == 0.0));
        }
        assert!(matches!(stft(&[0.0; 100], &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn db_identities() {
        let p = Tensor::new(vec![3], vec![2.0, 200.0, 0.0]).unwrap();
        let db = power_to_db(&p, 2.0, None).unwrap();
        assert_eq!(db.data()[0], 0.0);
        assert_eq!(db.data()[1], 20.0);
        assert_eq!(db.data()[2], 10.0 * (POWER_FLOOR / 2.0).log10());
        let clamped = power_to_db(&p, 2.0, Some(80.0)).unwrap();
        assert_eq!(clamped.data()[2], -60.0);
    }

    #[test]
    fn nyquist_guard() {
        let cfg = MelConfig { f_max: 9000.0, ..MelConfig::default() };
        assert!(matches!(mel_filterbank(&cfg, 1024, 16000), Err(Error::Config(_))));
    }

    #[test]
    fn pipeline_shape() {
        let fe = LogMel::new(LogMelConfig::default()).unwrap();
        let wave: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.3).sin()).collect();
        let m = fe.normalized(&wave).unwrap();
        assert_eq!(m.shape(), &[64, 28]);
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
