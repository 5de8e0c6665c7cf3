//! Datasets and the per-node request streams that drive an experiment.

pub mod idx;
mod stream;
mod synthetic;

pub use idx::load_idx;
pub use stream::{BatchStream, Pattern, WorkloadSpec};
pub use synthetic::gen_synthetic;

use crate::error::{Error, Result};

/// Feature rows `[N × d]` with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    /// Class count is `max(label) + 1`; every class below it must have a sample.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Workload(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Workload("non-finite feature value".into()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes == 0 {
            return Err(Error::Workload("dataset is empty".into()));
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Workload(format!("class {c} has no samples")));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn indices_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Keeps only the samples of classes `0..k`.
    pub fn first_classes(&self, k: usize) -> Result<Dataset> {
        if k == 0 || k > self.classes {
            return Err(Error::Workload(format!("cannot keep {k} of {} classes", self.classes)));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if self.labels[i] < k {
                features.extend_from_slice(self.row(i));
                labels.push(self.labels[i]);
            }
        }
        Dataset::new(features, labels, self.dim)
    }
}
