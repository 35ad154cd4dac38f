//! Feature-discrimination analysis: accumulated feature banks, cosine
//! distance matrices, intra/inter-class statistics and the membrane
//! accumulation probes.

use crate::error::{dim_err, Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::layers::HeadKind;
use crate::neuron::{lif_trace, LifConfig, ResetMode};
use crate::tensor::{matmul, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Rows with an L2 norm at or below this are treated as having no direction.
pub const ZERO_NORM: f64 = 1e-12;

/// Default tolerance when comparing two class scores.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub modality: String,
    /// "train" or "test".
    pub set: String,
    pub head: HeadKind,
    /// Permit zero vectors in the bank.
    #[serde(default)]
    pub allow_degenerate: bool,
}

/// Per-sample accumulated features (sum of pre-head features over time).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    /// n × d.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub meta: BankMeta,
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    labels: Vec<usize>,
    #[serde(flatten)]
    meta: BankMeta,
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl FeatureBank {
    pub fn new(features: Tensor, labels: Vec<usize>, meta: BankMeta) -> Result<Self> {
        if features.ndim() != 2 || features.shape()[0] != labels.len() {
            return dim_err(format!("{} labels for features {:?}", labels.len(), features.shape()));
        }
        let bank = FeatureBank { features, labels, meta };
        if !bank.meta.allow_degenerate {
            let ids = bank.degenerate_ids();
            if !ids.is_empty() {
                return Err(Error::DegenerateFeature { ids });
            }
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn degenerate_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| row_norm(self.features.row(i)) <= ZERO_NORM).collect()
    }

    /// Copy without zero vectors; also returns the dropped sample ids.
    pub fn without_degenerate(&self) -> (FeatureBank, Vec<usize>) {
        let dropped = self.degenerate_ids();
        let keep: Vec<usize> = (0..self.len()).filter(|i| !dropped.contains(i)).collect();
        let d = self.dim();
        let data = keep.iter().flat_map(|&i| self.features.row(i).to_vec()).collect();
        let bank = FeatureBank {
            features: Tensor::new(vec![keep.len(), d], data).expect("bank shape"),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            meta: BankMeta { allow_degenerate: false, ..self.meta.clone() },
        };
        (bank, dropped)
    }

    fn manifest_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the feature tensor to `path` and a JSON manifest beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensor(path, &self.features)?;
        let manifest = BankManifest { labels: self.labels.clone(), meta: self.meta.clone() };
        std::fs::write(Self::manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let features = read_tensor(path)?;
        let m: BankManifest = serde_json::from_slice(&std::fs::read(Self::manifest_path(path))?)?;
        FeatureBank::new(features, m.labels, m.meta)
    }
}

/// Pairwise cosine distances with samples ordered by class.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    /// Row-major n × n.
    pub data: Vec<f64>,
    /// Labels in matrix order.
    pub labels: Vec<usize>,
    /// Original bank index of every matrix row.
    pub order: Vec<usize>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Distinct classes in order and the cumulative row count after each.
    pub fn class_boundaries(&self) -> (Vec<usize>, Vec<usize>) {
        let mut classes: Vec<usize> = Vec::new();
        let mut bounds = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if classes.last() != Some(&l) {
                if i > 0 {
                    bounds.push(i);
                }
                classes.push(l);
            }
        }
        if self.n > 0 {
            bounds.push(self.n);
        }
        (classes, bounds)
    }
}

/// `1 - cos(f_i, f_j)` for every pair, rows sorted by (label, index).
pub fn cosine_distance_matrix(bank: &FeatureBank) -> Result<DistanceMatrix> {
    let ids = bank.degenerate_ids();
    if !ids.is_empty() {
        return Err(Error::DegenerateFeature { ids });
    }
    let n = bank.len();
    let d = bank.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (bank.labels[i], i));
    let unit: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let row = bank.features.row(i);
            let norm = row_norm(row);
            row.iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        for j in 0..n {
            if i == j {
                continue;
            }
            // Same operand order for (i, j) and (j, i) keeps the matrix exactly symmetric.
            let (a, b) = if i < j { (&unit[i], &unit[j]) } else { (&unit[j], &unit[i]) };
            if a == b {
                continue;
            }
            let dot: f64 = (0..d).map(|k| a[k] * b[k]).sum();
            out[j] = (1.0 - dot).clamp(0.0, 2.0);
        }
    });
    let labels = order.iter().map(|&i| bank.labels[i]).collect();
    Ok(DistanceMatrix { n, data, labels, order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityStats {
    pub mean_intra: f64,
    pub mean_inter: f64,
    /// `mean_inter / mean_intra`; +inf when intra is zero and inter is not,
    /// NaN when both are zero.
    pub separability_ratio: f64,
    /// Classes with a single sample, left out of the intra mean.
    pub singleton_classes: Vec<usize>,
}

/// Mean same-class (off-diagonal) and cross-class distances.
pub fn intra_inter_stats(m: &DistanceMatrix) -> Result<SeparabilityStats> {
    let mut sizes = std::collections::BTreeMap::new();
    for &l in &m.labels {
        *sizes.entry(l).or_insert(0usize) += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::Contract(format!("need at least two classes, got {}", sizes.len())));
    }
    let singleton_classes: Vec<usize> = sizes.iter().filter(|(_, &n)| n == 1).map(|(&c, _)| c).collect();
    if !singleton_classes.is_empty() {
        log::warn!("classes {singleton_classes:?} have one sample and are excluded from the intra-class mean");
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..m.n {
        for j in 0..m.n {
            if i == j {
                continue;
            }
            if m.labels[i] == m.labels[j] {
                intra += m.get(i, j);
                n_intra += 1;
            } else {
                inter += m.get(i, j);
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(Error::Contract("no class has two samples".into()));
    }
    let mean_intra = intra / n_intra as f64;
    let mean_inter = inter / n_inter as f64;
    let separability_ratio = if mean_intra > 0.0 {
        mean_inter / mean_intra
    } else if mean_inter > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    };
    Ok(SeparabilityStats { mean_intra, mean_inter, separability_ratio, singleton_classes })
}

/// Writes the matrix as CSV and `<stem>.boundaries.json` listing the class of
/// each block and the cumulative class sizes.
pub fn export_heatmap_data(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let mut csv = String::with_capacity(m.n * m.n * 20);
    for i in 0..m.n {
        for j in 0..m.n {
            if j > 0 {
                csv.push(',');
            }
            let _ = write!(csv, "{}", m.get(i, j));
        }
        csv.push('\n');
    }
    std::fs::write(path, csv)?;
    let (classes, boundaries) = m.class_boundaries();
    let sidecar = path.with_extension("boundaries.json");
    let body = serde_json::json!({ "classes": classes, "boundaries": boundaries, "labels": m.labels });
    std::fs::write(&sidecar, serde_json::to_vec_pretty(&body)?)?;
    Ok(sidecar)
}

/// Parses a matrix written by [`export_heatmap_data`].
pub fn read_heatmap_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    std::fs::read_to_string(path)?
        .lines()
        .map(|line| {
            line.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("bad value {v:?}: {e}"))))
                .collect()
        })
        .collect()
}

/// Inputs to the output-layer accumulation checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaProbe {
    /// Per-class weight columns, d × C.
    pub weights: Tensor,
    /// Feature vector presented at every timestep, T × d.
    pub features: Tensor,
    pub beta: f64,
}

impl LemmaProbe {
    pub fn new(weights: Tensor, features: Tensor, beta: f64) -> Result<Self> {
        if weights.ndim() != 2 || features.ndim() != 2 || weights.shape()[0] != features.shape()[1] {
            return dim_err(format!("weights {:?} vs features {:?}", weights.shape(), features.shape()));
        }
        if features.shape()[0] == 0 {
            return Err(Error::Contract("probe needs at least one timestep".into()));
        }
        Ok(LemmaProbe { weights, features, beta })
    }

    pub fn steps(&self) -> usize {
        self.features.shape()[0]
    }

    /// Per-step class scores `a[k] · w_j`, T × C.
    pub fn scores(&self) -> Tensor {
        matmul(&self.features, &self.weights).expect("probe shapes checked")
    }

    /// Closed-form membrane potentials after each step t = 1..T:
    /// `V[t] = sum_{k<t} beta^(t-1-k) (a[k] · w)`.
    pub fn series(&self) -> Tensor {
        let s = self.scores();
        let (steps, c) = (s.shape()[0], s.shape()[1]);
        let mut out = vec![0.0; steps * c];
        for t in 1..=steps {
            for j in 0..c {
                out[(t - 1) * c + j] =
                    (0..t).map(|k| self.beta.powi((t - 1 - k) as i32) * s.data()[k * c + j]).sum();
            }
        }
        Tensor::new(vec![steps, c], out).expect("series shape")
    }
}

/// Largest absolute gap between the closed-form series and a step-by-step
/// LIF simulation without reset, over all classes and timesteps.
pub fn lemma2_series_check(probe: &LemmaProbe) -> Result<f64> {
    let cfg = LifConfig { beta: probe.beta, reset: ResetMode::None, ..LifConfig::default() };
    cfg.validate()?;
    let simulated = lif_trace(&probe.scores(), &cfg)?.potentials;
    Ok(probe
        .series()
        .data()
        .iter()
        .zip(simulated.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub checked: usize,
    /// Samples whose true-class score is below another class's.
    pub violations: usize,
    /// Samples whose best competitor is within the tie tolerance.
    pub ties: usize,
    /// `(violations + ties) / checked`.
    pub violation_rate: f64,
    /// True-class score minus the best competing score, per checked sample.
    pub margins: Vec<f64>,
}

/// First-step dominance: for every sample in `samples`, is
/// `a · w_true > a · w_other` for all other classes? `features` holds one
/// first-timestep vector per sample (n × d), `weights` is d × C.
pub fn lemma1_check(
    weights: &Tensor,
    features: &Tensor,
    labels: &[usize],
    samples: &[usize],
    tolerance: f64,
) -> Result<DominanceReport> {
    if features.ndim() != 2 || weights.ndim() != 2 || features.shape()[0] != labels.len() {
        return dim_err(format!("features {:?}, weights {:?}, {} labels", features.shape(), weights.shape(), labels.len()));
    }
    let scores = matmul(features, weights)?;
    let c = weights.shape()[1];
    let (mut violations, mut ties) = (0, 0);
    let mut margins = Vec::with_capacity(samples.len());
    for &i in samples {
        let row = scores.row(i);
        let truth = labels[i];
        let rival = (0..c).filter(|&j| j != truth).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let margin = row[truth] - rival;
        if margin.abs() <= tolerance {
            ties += 1;
        } else if margin < 0.0 {
            violations += 1;
        }
        margins.push(margin);
    }
    let checked = samples.len();
    let violation_rate = if checked == 0 { 0.0 } else { (violations + ties) as f64 / checked as f64 };
    Ok(DominanceReport { checked, violations, ties, violation_rate, margins })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> BankMeta {
        BankMeta { modality: "toy".into(), set: "train".into(), head: HeadKind::L2norm, allow_degenerate: false }
    }

    #[test]
    fn distance_geometry() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0], vec![-1.0, 0.0]]).unwrap();
        let bank = FeatureBank::new(f, vec![0, 0, 1, 2], meta()).unwrap();
        let m = cosine_distance_matrix(&bank).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert!((m.get(0, 2) - 1.0).abs() < 1e-15);
        assert!((m.get(0, 3) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_reported() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(FeatureBank::new(f.clone(), vec![0, 1], meta()), Err(Error::DegenerateFeature { ids }) if ids == vec![1]));
        let bank = FeatureBank::new(f, vec![0, 1], BankMeta { allow_degenerate: true, ..meta() }).unwrap();
        assert!(cosine_distance_matrix(&bank).is_err());
        assert_eq!(bank.without_degenerate().1, vec![1]);
    }

    #[test]
    fn separated_classes_have_infinite_ratio() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let bank = FeatureBank::new(f, vec![0, 1, 0, 1], meta()).unwrap();
        let s = intra_inter_stats(&cosine_distance_matrix(&bank).unwrap()).unwrap();
        assert_eq!((s.mean_intra, s.mean_inter), (0.0, 1.0));
        assert_eq!(s.separability_ratio, f64::INFINITY);
    }

    #[test]
    fn identical_features() {
        let f = Tensor::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
        let bank = FeatureBank::new(f, vec![0, 0, 1, 1], meta()).unwrap();
        let s = intra_inter_stats(&cosine_distance_matrix(&bank).unwrap()).unwrap();
        assert_eq!((s.mean_intra, s.mean_inter), (0.0, 0.0));
    }

    #[test]
    fn boundaries_are_cumulative() {
        let f = Tensor::from_rows(&[vec![1.0, 0.1], vec![0.3, 1.0], vec![1.0, 0.2], vec![0.1, 1.0], vec![1.0, 1.0]]).unwrap();
        let bank = FeatureBank::new(f, vec![1, 0, 1, 2, 1], meta()).unwrap();
        let m = cosine_distance_matrix(&bank).unwrap();
        assert_eq!(m.labels, vec![0, 1, 1, 1, 2]);
        assert_eq!(m.class_boundaries(), (vec![0, 1, 2], vec![1, 4, 5]));
    }

    #[test]
    fn dominance_by_hand() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let r = lemma1_check(&w, &a, &[0, 0], &[0], TIE_TOLERANCE).unwrap();
        assert_eq!((r.violations, r.ties), (0, 0));
        let r = lemma1_check(&w, &a, &[0, 0], &[1], TIE_TOLERANCE).unwrap();
        assert_eq!(r.ties, 1);
    }

    #[test]
    fn series_limits() {
        let w = Tensor::from_rows(&[vec![2.0], vec![0.0]]).unwrap();
        let a = Tensor::from_rows(&vec![vec![0.5, 1.0]; 5]).unwrap();
        let p = LemmaProbe::new(w.clone(), a.clone(), 1.0).unwrap();
        assert_eq!(p.series().data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(lemma2_series_check(&p).unwrap(), 0.0);
        let p = LemmaProbe::new(w, a, 0.0).unwrap();
        assert_eq!(p.series().data(), &[1.0; 5]);
    }
}
