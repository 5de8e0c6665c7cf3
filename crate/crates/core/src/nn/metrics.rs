use super::{argmax_rows, Tensor};

/// Misclassifications and sample count for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassTally {
    pub errors: u32,
    pub support: u32,
}

impl ClassTally {
    pub fn error_rate(&self) -> Option<f64> {
        (self.support > 0).then(|| self.errors as f64 / self.support as f64)
    }

    pub fn add(&mut self, other: ClassTally) {
        self.errors += other.errors;
        self.support += other.support;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub error_rate: f64,
    pub mean_loss: f64,
    /// Indexed by class.
    pub per_class: Vec<ClassTally>,
}

impl BatchMetrics {
    /// Scores a batch from class probabilities `[n × C]`.
    pub fn from_probabilities(probs: &Tensor, labels: &[usize], classes: usize) -> Self {
        let preds = argmax_rows(probs);
        let mut per_class = vec![ClassTally::default(); classes];
        let mut errors = 0usize;
        let mut loss = 0.0;
        for (k, (&p, &y)) in preds.iter().zip(labels).enumerate() {
            per_class[y].support += 1;
            if p != y {
                per_class[y].errors += 1;
                errors += 1;
            }
            loss -= probs.row(k)[y].max(f64::MIN_POSITIVE).ln();
        }
        let n = labels.len().max(1) as f64;
        BatchMetrics {
            error_rate: errors as f64 / n,
            mean_loss: loss / n,
            per_class,
        }
    }

    pub fn support(&self) -> u32 {
        self.per_class.iter().map(|t| t.support).sum()
    }
}
