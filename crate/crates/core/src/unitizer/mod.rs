//! Frame features to discrete units: feature encoder, k-means codebook,
//! nearest-centroid quantization and unit error rate.

mod encoder;

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Mat;

pub use encoder::{EncoderConfig, FeatureEncoder};

/// Desk-scale unit vocabulary size.
pub const DEFAULT_NUM_UNITS: usize = 64;

/// One utterance's units, as stored in unit corpora.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub utt_id: String,
    pub units: Vec<usize>,
}

/// Raw mel frames when `enc` is `None`, otherwise the encoder's output.
pub fn encode_features(mel: &MelSpectrogram, enc: Option<&FeatureEncoder>) -> Result<Mat> {
    if mel.num_frames() == 0 {
        return Err(Error::EmptyInput("mel spectrogram has no frames".into()));
    }
    match enc {
        None => Ok(mel.frames.clone()),
        Some(e) => e.encode(&mel.frames),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Mat,
}

#[derive(Serialize, Deserialize)]
struct CodebookJson {
    #[serde(rename = "K")]
    k: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
}

fn row_key(r: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same point.
    r.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl Codebook {
    pub fn new(centroids: Mat) -> Result<Self> {
        if centroids.rows() < 2 {
            return Err(Error::Clustering(format!("codebook needs K >= 2, got {}", centroids.rows())));
        }
        if !centroids.is_finite() {
            return Err(Error::Clustering("codebook has non-finite centroids".into()));
        }
        let distinct: HashSet<Vec<u64>> = centroids.iter_rows().map(row_key).collect();
        if distinct.len() != centroids.rows() {
            return Err(Error::Clustering("codebook has duplicate centroids".into()));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Mat {
        &self.centroids
    }

    /// Nearest centroid by squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter_rows().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CodebookJson {
            k: self.k(),
            dim: self.dim(),
            centroids: self.centroids.iter_rows().map(<[f64]>::to_vec).collect(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: CodebookJson = serde_json::from_str(s)?;
        if j.centroids.len() != j.k || j.centroids.iter().any(|r| r.len() != j.dim) {
            return Err(Error::Shape(format!("codebook json does not match K={} dim={}", j.k, j.dim)));
        }
        Self::new(Mat::from_rows(&j.centroids))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub codebook: Codebook,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

/// Index of the point farthest from its assigned centroid, lowest index on ties.
fn farthest(dists: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in dists.iter().enumerate() {
        if d > dists[best] {
            best = i;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. An empty cluster is
/// re-seeded at the point farthest from its centroid.
pub fn kmeans_train(features: &Mat, k: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    if k < 2 {
        return Err(Error::Clustering(format!("K must be at least 2, got {k}")));
    }
    if !features.is_finite() {
        return Err(Error::Clustering("features contain non-finite values".into()));
    }
    let distinct: HashSet<Vec<u64>> = features.iter_rows().map(row_key).collect();
    if distinct.len() < k {
        return Err(Error::Clustering(format!(
            "{} distinct frames is fewer than K = {k}",
            distinct.len()
        )));
    }
    let n = features.rows();
    let dim = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cent = Mat::zeros(k, dim);
    let first = rng.random_range(0..n);
    cent.row_mut(0).copy_from_slice(features.row(first));
    let mut d2: Vec<f64> = features.iter_rows().map(|r| sq_dist(r, cent.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            if d2[idx] == 0.0 {
                farthest(&d2)
            } else {
                idx
            }
        } else {
            farthest(&d2)
        };
        cent.row_mut(c).copy_from_slice(features.row(pick));
        for (i, r) in features.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, cent.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut inertia = Vec::new();
    for _ in 0..iters.max(1) {
        let cb = Codebook { centroids: cent.clone() };
        let mut changed = false;
        for (i, r) in features.iter_rows().enumerate() {
            let (a, d) = cb.nearest(r);
            changed |= a != assign[i];
            assign[i] = a;
            dist[i] = d;
        }
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        // Re-seed empty clusters at the currently worst-served points.
        for c in 0..k {
            if counts[c] == 0 {
                let i = farthest(&dist);
                counts[assign[i]] -= 1;
                assign[i] = c;
                dist[i] = 0.0;
                counts[c] = 1;
                changed = true;
            }
        }
        inertia.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, dim);
        for (i, r) in features.iter_rows().enumerate() {
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in cent.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    Ok(KMeansResult {
        codebook: Codebook::new(cent)?,
        inertia,
    })
}

pub fn quantize(features: &Mat, cb: &Codebook) -> Result<Vec<usize>> {
    if features.cols() != cb.dim() {
        return Err(Error::Shape(format!(
            "features have {} dims, codebook has {}",
            features.cols(),
            cb.dim()
        )));
    }
    Ok(features.iter_rows().map(|r| cb.nearest(r).0).collect())
}

/// Merges runs of equal consecutive ids.
pub fn collapse_units(u: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(u.len());
    for &x in u {
        if out.last() != Some(&x) {
            out.push(x);
        }
    }
    out
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Percent edit distance between the collapsed sequences, normalized by
/// the collapsed reference length.
pub fn unit_error_rate(reference: &[usize], hyp: &[usize]) -> Result<f64> {
    let r = collapse_units(reference);
    if r.is_empty() {
        return Err(Error::Metric("unit error rate needs a non-empty reference".into()));
    }
    let h = collapse_units(hyp);
    Ok(100.0 * levenshtein(&r, &h) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests;
