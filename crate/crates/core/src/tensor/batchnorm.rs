use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel statistics used in evaluation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Layout of a (batch, channel, spatial...) buffer for per-channel statistics.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BnLayout {
    pub n: usize,
    pub c: usize,
    pub s: usize,
}

impl BnLayout {
    pub fn from_shape(shape: &[usize]) -> Option<Self> {
        if shape.len() < 2 {
            return None;
        }
        Some(BnLayout { n: shape[0], c: shape[1], s: shape[2..].iter().product() })
    }

    #[inline]
    fn for_each_in_channel(&self, ch: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.n {
            let base = (b * self.c + ch) * self.s;
            for i in base..base + self.s {
                f(i);
            }
        }
    }

    fn count(&self) -> usize {
        self.n * self.s
    }
}

/// Cached quantities needed by the backward rule.
#[derive(Clone, Debug)]
pub(crate) struct BnCache {
    pub layout: BnLayout,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch statistics were used (train mode), so they carry gradient.
    pub batch_stats: bool,
}

/// Normalises `x` per channel. In train mode the batch statistics are used and
/// `stats` is updated with momentum; otherwise `stats` is read as-is.
pub(crate) fn forward(
    layout: BnLayout,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    stats: &mut BatchNormStats,
    train: bool,
) -> (Vec<f64>, BnCache) {
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; layout.c];
    let cnt = layout.count() as f64;
    for ch in 0..layout.c {
        let (mean, var) = if train {
            let mut sum = 0.0;
            layout.for_each_in_channel(ch, |i| sum += x[i]);
            let mean = sum / cnt;
            let mut sq = 0.0;
            layout.for_each_in_channel(ch, |i| sq += (x[i] - mean) * (x[i] - mean));
            let var = sq / cnt;
            let unbiased = if layout.count() > 1 { sq / (cnt - 1.0) } else { var };
            stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
            stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            (mean, var)
        } else {
            (stats.mean[ch], stats.var[ch])
        };
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = is;
        layout.for_each_in_channel(ch, |i| xhat[i] = (x[i] - mean) * is);
    }
    let mut y = vec![0.0; x.len()];
    for ch in 0..layout.c {
        layout.for_each_in_channel(ch, |i| y[i] = gamma[ch] * xhat[i] + beta[ch]);
    }
    (y, BnCache { layout, xhat, inv_std, batch_stats: train })
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn backward(cache: &BnCache, gamma: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let l = cache.layout;
    let cnt = l.count() as f64;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; l.c];
    let mut dbeta = vec![0.0; l.c];
    for ch in 0..l.c {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        l.for_each_in_channel(ch, |i| {
            sdy += dy[i];
            sdyx += dy[i] * cache.xhat[i];
        });
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let k = gamma[ch] * cache.inv_std[ch];
        if cache.batch_stats {
            l.for_each_in_channel(ch, |i| {
                dx[i] = k / cnt * (cnt * dy[i] - sdy - cache.xhat[i] * sdyx);
            });
        } else {
            l.for_each_in_channel(ch, |i| dx[i] = k * dy[i]);
        }
    }
    (dx, dgamma, dbeta)
}
