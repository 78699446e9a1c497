//! Degradation profiling: per-class HOG signatures, separation statistics,
//! and nearest-centroid confusion.

use super::{soft_cell_histogram, DEFAULT_CELL, DEFAULT_N_BIN};
use crate::error::{Error, Result};
use crate::tensor::{reflect_pad, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mean normalized histogram and spread of one degradation class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegradationSignature {
    pub label: String,
    /// Mean of per-image L2-normalized descriptors (length n_bin).
    pub centroid: Vec<f64>,
    /// Mean intra-class L2 distance to the centroid.
    pub dispersion: f64,
    pub samples: usize,
}

/// Per-image descriptor: the cell-mean of the soft cell histogram (cell 8,
/// n_bin 9, channel-mean grayscale), L2-normalized. Images whose extent is
/// not a cell multiple are reflect-padded up before the histogram.
pub fn image_descriptor(data: &[f32], c: usize, h: usize, w: usize) -> Vec<f64> {
    let t = Tensor::<f32>::new(vec![c, h, w], data.to_vec(), false);
    let cell = DEFAULT_CELL;
    let (ph, pw) = (h.div_ceil(cell) * cell, w.div_ceil(cell) * cell);
    let t = if (ph, pw) != (h, w) {
        reflect_pad(&t, 0, ph - h, 0, pw - w)
    } else {
        t
    };
    let hist = soft_cell_histogram(&t, cell, DEFAULT_N_BIN).expect("padded to cell multiple");
    let hd = hist.data();
    let cells = hd.len() / DEFAULT_N_BIN;
    let mut desc = vec![0.0f64; DEFAULT_N_BIN];
    for cl in 0..cells {
        for b in 0..DEFAULT_N_BIN {
            desc[b] += hd[cl * DEFAULT_N_BIN + b] as f64;
        }
    }
    for v in desc.iter_mut() {
        *v /= cells as f64;
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in desc.iter_mut() {
            *v /= norm;
        }
    }
    desc
}

/// Descriptors for a whole corpus, one image per entry, in parallel.
pub fn corpus_descriptors(images: &[Tensor<f32>]) -> Vec<Vec<f64>> {
    let raw: Vec<(Vec<f32>, usize, usize, usize)> = images
        .iter()
        .map(|t| {
            let s = t.shape();
            (t.to_vec(), s[0], s[1], s[2])
        })
        .collect();
    raw.par_iter()
        .map(|(d, c, h, w)| image_descriptor(d, *c, *h, *w))
        .collect()
}

/// Signature of one labeled corpus (at least two images).
pub fn degradation_signature(images: &[Tensor<f32>], label: &str) -> Result<DegradationSignature> {
    if images.len() < 2 {
        return Err(Error::Input(format!(
            "degradation_signature: class '{label}' needs at least 2 images, got {}",
            images.len()
        )));
    }
    let descs = corpus_descriptors(images);
    Ok(signature_from_descriptors(label, &descs))
}

pub fn signature_from_descriptors(label: &str, descs: &[Vec<f64>]) -> DegradationSignature {
    let n = descs.len();
    let dim = descs[0].len();
    let mut centroid = vec![0.0f64; dim];
    for d in descs {
        for (c, v) in centroid.iter_mut().zip(d) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= n as f64;
    }
    let dispersion = descs.iter().map(|d| l2_dist(d, &centroid)).sum::<f64>() / n as f64;
    DegradationSignature { label: label.to_string(), centroid, dispersion, samples: n }
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Full profiling report over several labeled classes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileReport {
    pub signatures: Vec<DegradationSignature>,
    /// Inter-class centroid distances, row-major square matrix.
    pub distance_matrix: Vec<Vec<f64>>,
    /// confusion[i][j]: images of class i whose nearest centroid is class j.
    pub confusion: Vec<Vec<usize>>,
    /// Class pairs with centroid distance greater than the larger of the two
    /// dispersions, out of all pairs.
    pub separated_pairs: usize,
    pub total_pairs: usize,
    /// Leave-one-out nearest-centroid classification accuracy.
    pub loo_accuracy: f64,
}

/// Profile labeled corpora of per-image descriptors.
pub fn profile_corpora(classes: &[(String, Vec<Vec<f64>>)]) -> Result<ProfileReport> {
    if classes.is_empty() {
        return Err(Error::Input("profile_corpora: no classes".into()));
    }
    for (label, descs) in classes {
        if descs.len() < 2 {
            return Err(Error::Input(format!(
                "profile_corpora: class '{label}' needs at least 2 images"
            )));
        }
    }
    let k = classes.len();
    let signatures: Vec<DegradationSignature> = classes
        .iter()
        .map(|(label, descs)| signature_from_descriptors(label, descs))
        .collect();

    let mut distance_matrix = vec![vec![0.0f64; k]; k];
    let mut separated = 0;
    let mut total_pairs = 0;
    for i in 0..k {
        for j in 0..k {
            distance_matrix[i][j] = l2_dist(&signatures[i].centroid, &signatures[j].centroid);
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            total_pairs += 1;
            if distance_matrix[i][j] > signatures[i].dispersion.max(signatures[j].dispersion) {
                separated += 1;
            }
        }
    }

    // Nearest-centroid confusion with full centroids.
    let mut confusion = vec![vec![0usize; k]; k];
    for (i, (_, descs)) in classes.iter().enumerate() {
        for d in descs {
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    l2_dist(d, &signatures[a].centroid)
                        .partial_cmp(&l2_dist(d, &signatures[b].centroid))
                        .unwrap()
                })
                .unwrap();
            confusion[i][nearest] += 1;
        }
    }

    // Leave-one-out: the held-out image is removed from its own class
    // centroid before classification.
    let mut correct = 0usize;
    let mut n_total = 0usize;
    for (i, (_, descs)) in classes.iter().enumerate() {
        let n = descs.len() as f64;
        for d in descs {
            n_total += 1;
            let own_loo: Vec<f64> = signatures[i]
                .centroid
                .iter()
                .zip(d)
                .map(|(c, v)| (c * n - v) / (n - 1.0))
                .collect();
            let mut best = i;
            let mut best_d = l2_dist(d, &own_loo);
            for (j, sig) in signatures.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist = l2_dist(d, &sig.centroid);
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            if best == i {
                correct += 1;
            }
        }
    }

    Ok(ProfileReport {
        signatures,
        distance_matrix,
        confusion,
        separated_pairs: separated,
        total_pairs,
        loo_accuracy: correct as f64 / n_total as f64,
    })
}

impl ProfileReport {
    /// Distance matrix as CSV with a label header row/column.
    pub fn distance_csv(&self) -> String {
        let mut s = String::from("class");
        for sig in &self.signatures {
            s.push(',');
            s.push_str(&sig.label);
        }
        s.push('\n');
        for (i, sig) in self.signatures.iter().enumerate() {
            s.push_str(&sig.label);
            for j in 0..self.signatures.len() {
                s.push_str(&format!(",{:.6}", self.distance_matrix[i][j]));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_image(h: usize, w: usize, mut seed: u64) -> Tensor<f32> {
        let data: Vec<f32> = (0..3 * h * w)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 33) as f32 / (1u64 << 31) as f32) * 0.8
            })
            .collect();
        Tensor::new(vec![3, h, w], data, false)
    }

    #[test]
    fn identical_corpus_has_zero_dispersion() {
        let img = lcg_image(16, 16, 9);
        let sig = degradation_signature(&[img.clone(), img.clone(), img], "same").unwrap();
        assert!(sig.dispersion < 1e-12);
    }

    #[test]
    fn single_image_class_is_input_error() {
        let img = lcg_image(16, 16, 9);
        assert!(degradation_signature(&[img], "one").is_err());
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let img = lcg_image(24, 24, 4);
        let d = corpus_descriptors(&[img]);
        let norm: f64 = d[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_cell_multiple_images_are_padded() {
        let img = lcg_image(17, 19, 12);
        let d = corpus_descriptors(&[img]);
        assert_eq!(d[0].len(), 9);
    }
}
