//! Spike-count targets, the MSE count loss, accuracy and confusion matrices.

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Target firing ratios for the true class and for every other class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTargets {
    pub r_correct: f64,
    pub r_incorrect: f64,
    pub steps: usize,
}

impl RateTargets {
    pub fn new(r_correct: f64, r_incorrect: f64, steps: usize) -> Result<Self> {
        let rt = RateTargets { r_correct, r_incorrect, steps };
        rt.validate()?;
        Ok(rt)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_correct > 0.0
            && self.r_correct <= 1.0
            && (0.0..1.0).contains(&self.r_incorrect)
            && self.r_correct > self.r_incorrect
            && self.steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid rate targets {self:?}")))
        }
    }
}

/// Per-class spike-count targets, B × C: `T * r_correct` at the label and
/// `T * r_incorrect` elsewhere.
pub fn spike_targets(labels: &[usize], rt: &RateTargets, classes: usize) -> Result<Tensor> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
    }
    let t = rt.steps as f64;
    let (hi, lo) = (t * rt.r_correct, t * rt.r_incorrect);
    let mut data = vec![lo; labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        data[row * classes + l] = hi;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Mean over samples of the per-sample mean squared count error.
pub fn mse_count_loss(counts: &Tensor, targets: &Tensor) -> Result<f64> {
    if counts.shape() != targets.shape() || counts.ndim() != 2 {
        return dim_err(format!("counts {:?} vs targets {:?}", counts.shape(), targets.shape()));
    }
    let c = counts.shape()[1];
    let b = counts.shape()[0];
    if b == 0 || c == 0 {
        return dim_err("empty counts");
    }
    let mut total = 0.0;
    for i in 0..b {
        let row: f64 = counts.row(i).iter().zip(targets.row(i)).map(|(s, t)| (s - t) * (s - t)).sum();
        total += row / c as f64;
    }
    Ok(total / b as f64)
}

/// Argmax per row; ties go to the lowest class index.
pub fn predict(counts: &Tensor) -> Vec<usize> {
    let c = counts.shape().get(1).copied().unwrap_or(0);
    (0..counts.shape()[0])
        .map(|i| {
            let row = counts.row(i);
            (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// Accuracy and row-normalised confusion matrix (true class × predicted).
/// Rows of classes absent from `labels` are all zero.
pub fn accuracy_and_confusion(counts: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if counts.ndim() != 2 || counts.shape()[0] != labels.len() {
        return dim_err(format!("counts {:?} vs {} labels", counts.shape(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let c = counts.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Contract(format!("label {bad} out of range for {c} classes")));
    }
    let preds = predict(counts);
    let mut tally = vec![0.0; c * c];
    let mut correct = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        tally[l * c + p] += 1.0;
        correct += usize::from(p == l);
    }
    for row in tally.chunks_mut(c) {
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok((correct as f64 / labels.len() as f64, Tensor::new(vec![c, c], tally)?))
}

/// CSV rendering: a header, then per true class its label and C rates.
pub fn confusion_csv(matrix: &Tensor) -> String {
    let c = matrix.shape()[0];
    let mut out = String::from("class");
    for j in 0..c {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for i in 0..c {
        let _ = write!(out, "{i}");
        for v in matrix.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_confusion_csv(path: impl AsRef<Path>, matrix: &Tensor) -> Result<()> {
    std::fs::write(path, confusion_csv(matrix))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_visual_and_audio() {
        let t = spike_targets(&[2], &RateTargets::new(0.9, 0.1, 8).unwrap(), 4).unwrap();
        let want = [0.8, 0.8, 7.2, 0.8];
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = spike_targets(&[0], &RateTargets::new(0.85, 0.15, 4).unwrap(), 2).unwrap();
        assert!((t.data()[0] - 3.4).abs() < 1e-12);
        let t = spike_targets(&[1], &RateTargets::new(1.0, 0.0, 5).unwrap(), 3).unwrap();
        assert_eq!(t.data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn inverted_rates_rejected() {
        assert!(RateTargets::new(0.1, 0.9, 4).is_err());
    }

    #[test]
    fn hand_loss() {
        let s = Tensor::new(vec![1, 2], vec![4.0, 0.0]).unwrap();
        let t = Tensor::new(vec![1, 2], vec![3.6, 0.4]).unwrap();
        assert!((mse_count_loss(&s, &t).unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(mse_count_loss(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn confusion_cases() {
        let counts = Tensor::from_rows(&[vec![3.0, 1.0, 0.0], vec![0.0, 2.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let (acc, m) = accuracy_and_confusion(&counts, &[0, 1, 1]).unwrap();
        assert_eq!(acc, 2.0 / 3.0);
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.5, 0.5, 0.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0]);
        assert!(confusion_csv(&m).starts_with("class,0,1,2\n0,1,0,0\n1,0.5,0.5,0\n"));
    }
}
