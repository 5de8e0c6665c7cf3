use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-coordinate standard deviation around each class centre.
pub const SYNTHETIC_NOISE: f64 = 0.15;

const MAX_DIRECTION_ATTEMPTS: usize = 10_000;

/// Gaussian blobs around unit-norm class centres that are pairwise at least
/// 60° apart (cosine ≤ 0.5). Samples are stored class by class.
pub fn gen_synthetic(seed: u64, classes: usize, dim: usize, per_class: usize) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Workload(format!(
            "synthetic dataset needs positive classes, dim and per_class (got {classes}, {dim}, {per_class})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut attempts = 0;
        let centre = loop {
            attempts += 1;
            if attempts > MAX_DIRECTION_ATTEMPTS {
                return Err(Error::Workload(format!(
                    "could not place class {c} at 60° from the others in {dim} dimensions"
                )));
            }
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let v: Vec<f64> = v.into_iter().map(|x| x / norm).collect();
            let ok = centres
                .iter()
                .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= 0.5);
            if ok {
                break v;
            }
        };
        centres.push(centre);
    }

    let noise = Normal::new(0.0, SYNTHETIC_NOISE).expect("positive std dev");
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(centre.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim)
}
