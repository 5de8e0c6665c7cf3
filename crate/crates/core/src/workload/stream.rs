use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Batch, Tensor};

/// How the request mix of the target node changes over time.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// No change.
    Stationary,
    /// `classes` join the target's mix at `at_batch` and stay.
    Introduction { classes: Vec<usize>, at_batch: u64 },
    /// `classes` are present on `[on, off)` and again from `on_again`.
    Fluctuation {
        classes: Vec<usize>,
        on: u64,
        off: u64,
        on_again: u64,
    },
}

impl Pattern {
    pub fn classes(&self) -> &[usize] {
        match self {
            Pattern::Stationary => &[],
            Pattern::Introduction { classes, .. } | Pattern::Fluctuation { classes, .. } => classes,
        }
    }

    /// First batch at which the pattern classes appear.
    pub fn onset(&self) -> Option<u64> {
        match self {
            Pattern::Stationary => None,
            Pattern::Introduction { at_batch, .. } => Some(*at_batch),
            Pattern::Fluctuation { on, .. } => Some(*on),
        }
    }

    pub fn active_at(&self, batch: u64) -> bool {
        match *self {
            Pattern::Stationary => false,
            Pattern::Introduction { at_batch, .. } => batch >= at_batch,
            Pattern::Fluctuation { on, off, on_again, .. } => (on..off).contains(&batch) || batch >= on_again,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    /// Base class set of every node, indexed by node id.
    pub assignment: Vec<Vec<usize>>,
    pub target_node: u16,
    /// Sampling weight of the pattern classes on non-target nodes, relative to 1.0
    /// for every other class. Values below 1 model peers that saw less of those classes.
    pub peer_pattern_weight: f64,
    pub batches: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Every node draws the same sample sequence (node 0's).
    pub shared_stream: bool,
}

impl WorkloadSpec {
    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    /// Active classes with their sampling weights at `batch` on `node`.
    pub fn active_classes(&self, node: u16, batch: u64) -> Vec<(usize, f64)> {
        let Some(base) = self.assignment.get(node as usize) else {
            return Vec::new();
        };
        let pattern = self.pattern.classes();
        if node == self.target_node {
            let mut out: Vec<(usize, f64)> = base.iter().map(|&c| (c, 1.0)).collect();
            if self.pattern.active_at(batch) {
                out.extend(pattern.iter().map(|&c| (c, 1.0)));
            }
            out.sort_by_key(|&(c, _)| c);
            out
        } else {
            base.iter()
                .map(|&c| {
                    let w = if pattern.contains(&c) { self.peer_pattern_weight } else { 1.0 };
                    (c, w)
                })
                .collect()
        }
    }

    /// Lists every problem with the spec against `dataset`.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut problems = Vec::new();
        let c = dataset.class_count();
        if self.assignment.is_empty() {
            problems.push("no nodes assigned".to_string());
        }
        if self.target_node as usize >= self.assignment.len() {
            problems.push(format!("target node {} does not exist", self.target_node));
        }
        if self.batches == 0 || self.batch_size == 0 {
            problems.push("batches and batch_size must be positive".into());
        }
        if !(self.peer_pattern_weight > 0.0 && self.peer_pattern_weight.is_finite()) {
            problems.push("peer pattern weight must be positive".into());
        }
        for (node, classes) in self.assignment.iter().enumerate() {
            if let Some(bad) = classes.iter().find(|&&k| k >= c) {
                problems.push(format!("node {node} is assigned class {bad}, dataset has {c}"));
            }
        }
        if let Some(bad) = self.pattern.classes().iter().find(|&&k| k >= c) {
            problems.push(format!("pattern class {bad} outside dataset's {c} classes"));
        }
        match self.pattern {
            Pattern::Stationary => {}
            Pattern::Introduction { ref classes, at_batch } => {
                if classes.is_empty() {
                    problems.push("introduction needs at least one class".into());
                }
                if at_batch >= self.batches {
                    problems.push(format!("introduction at {at_batch} is not before {}", self.batches));
                }
            }
            Pattern::Fluctuation {
                ref classes,
                on,
                off,
                on_again,
            } => {
                if classes.is_empty() {
                    problems.push("fluctuation needs at least one class".into());
                }
                if !(on < off && off < on_again && on_again < self.batches) {
                    problems.push(format!(
                        "fluctuation schedule {on} < {off} < {on_again} < {} does not hold",
                        self.batches
                    ));
                }
            }
        }
        if let Some(base) = self.assignment.get(self.target_node as usize) {
            if let Some(dup) = self.pattern.classes().iter().find(|k| base.contains(k)) {
                problems.push(format!("target node already sees pattern class {dup}"));
            }
        }
        if problems.is_empty() {
            for node in 0..self.assignment.len() as u16 {
                if let Some(b) = (0..self.batches).find(|&b| self.active_classes(node, b).is_empty()) {
                    problems.push(format!("node {node} has no active class at batch {b}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Workload(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
struct ClassPool {
    order: Vec<usize>,
    cursor: usize,
}

/// Deterministic batch sequence of one node.
#[derive(Debug, Clone)]
pub struct BatchStream {
    node: u16,
    spec: Arc<WorkloadSpec>,
    dataset: Arc<Dataset>,
    rng: ChaCha8Rng,
    pools: Vec<ClassPool>,
    next: u64,
}

impl BatchStream {
    pub fn new(spec: Arc<WorkloadSpec>, dataset: Arc<Dataset>, node: u16) -> Result<Self> {
        spec.validate(&dataset)?;
        if node as usize >= spec.node_count() {
            return Err(Error::Workload(format!("node {node} not in workload")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(if spec.shared_stream { 0 } else { node as u64 });
        let pools = (0..dataset.class_count())
            .map(|c| ClassPool {
                order: dataset.indices_of(c).to_vec(),
                cursor: usize::MAX,
            })
            .collect();
        Ok(BatchStream {
            node,
            spec,
            dataset,
            rng,
            pools,
            next: 0,
        })
    }

    pub fn node(&self) -> u16 {
        self.node
    }

    /// Index of the batch the next call to [`Iterator::next`] yields.
    pub fn position(&self) -> u64 {
        self.next
    }

    fn draw_from(&mut self, class: usize) -> usize {
        let pool = &mut self.pools[class];
        if pool.cursor >= pool.order.len() {
            pool.order.shuffle(&mut self.rng);
            pool.cursor = 0;
        }
        let idx = pool.order[pool.cursor];
        pool.cursor += 1;
        idx
    }

    fn make_batch(&mut self, batch: u64) -> Batch {
        let node = if self.spec.shared_stream { 0 } else { self.node };
        let active = self.spec.active_classes(node, batch);
        let weights = WeightedIndex::new(active.iter().map(|&(_, w)| w)).expect("validated weights");
        let n = self.spec.batch_size;
        let d = self.dataset.dim();
        let mut values = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = active[weights.sample(&mut self.rng)].0;
            let idx = self.draw_from(class);
            values.extend_from_slice(self.dataset.row(idx));
            labels.push(class);
        }
        Batch::new(Tensor::from_raw(n, d, values), labels).expect("non-empty batch")
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.spec.batches {
            return None;
        }
        let b = self.make_batch(self.next);
        self.next += 1;
        Some(b)
    }
}
