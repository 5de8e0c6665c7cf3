//! Helper models built from transferred parameters, the chain of live helpers
//! on a target node, and the policies that retire them.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::{BatchMetrics, ClassTally, Model, Tensor};
use crate::sensitivity::SignificantParamPayload;

/// How the non-selected slots of a helper are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HelperMode {
    /// Non-selected parameters are zero.
    Zero,
    /// Non-selected parameters are copied from the target model.
    Boost,
}

/// A frozen model assembled from a payload. Its parameters never change.
#[derive(Debug, Clone, PartialEq)]
pub struct HelperModel {
    model: Model,
    source_node: u16,
    covered_classes: Vec<usize>,
    created_at_batch: u64,
    mode: HelperMode,
    param_hash: [u8; 32],
}

impl HelperModel {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn source_node(&self) -> u16 {
        self.source_node
    }

    pub fn covered_classes(&self) -> &[usize] {
        &self.covered_classes
    }

    pub fn created_at_batch(&self) -> u64 {
        self.created_at_batch
    }

    pub fn mode(&self) -> HelperMode {
        self.mode
    }

    /// Parameter hash taken at construction.
    pub fn param_hash(&self) -> [u8; 32] {
        self.param_hash
    }
}

/// Builds a helper for `target` from a filled payload. `target` is not modified.
pub fn build_helper(
    target: &Model,
    payload: &SignificantParamPayload,
    mode: HelperMode,
    source_node: u16,
    created_at_batch: u64,
) -> Result<HelperModel> {
    if payload.fingerprint() != target.fingerprint() || payload.param_count() != target.param_count() {
        return Err(Error::IncompatibleArchitecture {
            expected: target.fingerprint(),
            found: payload.fingerprint(),
        });
    }
    if !payload.is_filled() {
        return Err(Error::InvalidArgument("payload carries no values".into()));
    }
    let mut params = match mode {
        HelperMode::Zero => vec![0.0; target.param_count()],
        HelperMode::Boost => target.flat_params(),
    };
    for (j, &v) in payload.selected().zip(payload.values()) {
        params[j] = v as f64;
    }
    let mut model = target.clone();
    model.set_flat_params(&params)?;
    let param_hash = model.state_hash();
    Ok(HelperModel {
        model,
        source_node,
        covered_classes: payload.requested_classes().collect(),
        created_at_batch,
        mode,
        param_hash,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct ChainEntry {
    helper: HelperModel,
    /// Target-only metrics of the batches seen since this helper went live, newest last.
    history: VecDeque<BatchMetrics>,
}

/// Live helpers in creation order, each with a bounded history of target-only metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct HelperChain {
    entries: Vec<ChainEntry>,
    history_len: usize,
}

impl HelperChain {
    pub fn new(history_len: usize) -> Self {
        HelperChain {
            entries: Vec::new(),
            history_len: history_len.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, helper: HelperModel) {
        self.entries.push(ChainEntry {
            helper,
            history: VecDeque::with_capacity(self.history_len),
        });
    }

    pub fn helpers(&self) -> impl Iterator<Item = &HelperModel> {
        self.entries.iter().map(|e| &e.helper)
    }

    /// Union of the classes covered by every live helper.
    pub fn covers(&self, class: usize) -> bool {
        self.entries.iter().any(|e| e.helper.covered_classes.contains(&class))
    }

    fn record(&mut self, metrics: &BatchMetrics) {
        for e in &mut self.entries {
            if e.history.len() == self.history_len {
                e.history.pop_front();
            }
            e.history.push_back(metrics.clone());
        }
    }
}

/// Mean of the row-wise softmax of the target and every live helper.
pub fn combined_predict(target: &Model, chain: &HelperChain, inputs: &Tensor) -> Result<Tensor> {
    let mut probs = target.probabilities(inputs)?;
    if chain.is_empty() {
        return Ok(probs);
    }
    let (rows, cols) = (probs.rows(), probs.cols());
    let mut acc = probs.values().to_vec();
    for h in chain.helpers() {
        let p = h.model.probabilities(inputs)?;
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    let k = (chain.len() + 1) as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    probs = Tensor::matrix(rows, cols, acc)?;
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicDiscard {
    /// Target error level before the drift that created the chain.
    pub pre_drift_error: f64,
    /// Per-class pre-drift error; `None` for classes without pre-drift support.
    pub pre_drift_class_error: Vec<Option<f64>>,
    pub tolerance: f64,
    /// Number of recent batches (L) a helper is judged over.
    pub window: usize,
    pub min_class_support: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscardPolicy {
    /// Retire each helper a fixed number of batches after it was created.
    Static { n_batches: u64 },
    /// Retire helpers once the target alone is back at its pre-drift level.
    Dynamic(DynamicDiscard),
}

impl DynamicDiscard {
    fn class_reference(&self, class: usize) -> f64 {
        self.pre_drift_class_error
            .get(class)
            .copied()
            .flatten()
            .unwrap_or(self.pre_drift_error)
    }

    fn overall_recovered(&self, history: &VecDeque<BatchMetrics>) -> bool {
        if history.len() < self.window {
            return false;
        }
        let mean = history.iter().map(|m| m.error_rate).sum::<f64>() / history.len() as f64;
        mean <= self.pre_drift_error + self.tolerance
    }

    fn classes_recovered(&self, helper: &HelperModel, history: &VecDeque<BatchMetrics>) -> bool {
        if history.len() < self.window {
            return false;
        }
        helper.covered_classes.iter().all(|&c| {
            let mut tally = ClassTally::default();
            for m in history {
                if let Some(t) = m.per_class.get(c) {
                    tally.add(*t);
                }
            }
            tally.support >= self.min_class_support
                && tally
                    .error_rate()
                    .is_some_and(|e| e <= self.class_reference(c) + self.tolerance)
        })
    }
}

/// Feeds the target-only metrics of batch `batch_id` to the chain and removes the
/// helpers the policy retires, oldest first. Returns the removed helpers.
pub fn update_discard(
    chain: &mut HelperChain,
    policy: &DiscardPolicy,
    target_metrics: &BatchMetrics,
    batch_id: u64,
) -> Vec<HelperModel> {
    if chain.is_empty() {
        return Vec::new();
    }
    chain.record(target_metrics);
    let single = chain.entries.len() == 1;
    let mut discarded = Vec::new();
    let mut kept = Vec::with_capacity(chain.entries.len());
    for entry in chain.entries.drain(..) {
        let retire = match policy {
            DiscardPolicy::Static { n_batches } => batch_id >= entry.helper.created_at_batch + n_batches,
            DiscardPolicy::Dynamic(d) if single => d.overall_recovered(&entry.history),
            DiscardPolicy::Dynamic(d) => d.classes_recovered(&entry.helper, &entry.history),
        };
        if retire {
            discarded.push(entry.helper);
        } else {
            kept.push(entry);
        }
    }
    chain.entries = kept;
    discarded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use crate::sensitivity::{select_top_z, ParamMask, ZPercent};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(widths: &[usize], seed: u64) -> Model {
        Model::init(widths, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn inputs(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn full_payload(source: &Model) -> SignificantParamPayload {
        let w = source.param_count();
        let mut p = select_top_z(&[vec![1.0; w]], &[1], ZPercent::from_percent(100.0).unwrap(), source.fingerprint()).unwrap();
        p.fill_values(source).unwrap();
        p
    }

    fn metrics(error: f64, per_class: &[(u32, u32)]) -> BatchMetrics {
        BatchMetrics {
            error_rate: error,
            mean_loss: 0.0,
            per_class: per_class
                .iter()
                .map(|&(errors, support)| ClassTally { errors, support })
                .collect(),
        }
    }

    fn dynamic(pre: f64, window: usize) -> DiscardPolicy {
        DiscardPolicy::Dynamic(DynamicDiscard {
            pre_drift_error: pre,
            pre_drift_class_error: vec![Some(0.05), Some(0.05), None],
            tolerance: 0.02,
            window,
            min_class_support: 10,
        })
    }

    fn helper_for(classes: &[usize], created: u64) -> HelperModel {
        let target = model(&[3, 4, 3], 0);
        let w = target.param_count();
        let mut p = select_top_z(&vec![vec![1.0; w]; classes.len()], classes, ZPercent::from_percent(10.0).unwrap(), target.fingerprint()).unwrap();
        p.fill_values(&target).unwrap();
        build_helper(&target, &p, HelperMode::Boost, 1, created).unwrap()
    }

    #[test]
    fn boost_with_own_value_reproduces_target() {
        let target = model(&[3, 4, 2], 1);
        // a model whose parameters are exactly representable in f32
        let rounded: Vec<f64> = target.flat_params().iter().map(|&v| v as f32 as f64).collect();
        let mut target = target;
        target.set_flat_params(&rounded).unwrap();
        let mut mask = ParamMask::repeat(false, target.param_count());
        mask.set(3, true);
        let mut p = SignificantParamPayload::from_mask(&[0], ZPercent::from_tenths(1).unwrap(), target.fingerprint(), mask).unwrap();
        p.fill_values(&target).unwrap();
        let h = build_helper(&target, &p, HelperMode::Boost, 2, 0).unwrap();
        assert_eq!(h.model(), &target);
    }

    #[test]
    fn full_boost_takes_the_source_model() {
        let target = model(&[3, 4, 2], 1);
        let source = model(&[3, 4, 2], 2);
        let h = build_helper(&target, &full_payload(&source), HelperMode::Boost, 2, 0).unwrap();
        let narrowed: Vec<f64> = source.flat_params().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(h.model().flat_params(), narrowed);
        assert_eq!(h.covered_classes(), &[1]);
    }

    #[test]
    fn zero_mode_missing_a_layer_is_input_blind() {
        let target = model(&[4, 5, 3], 3);
        let source = model(&[4, 5, 3], 4);
        let w = source.param_count();
        // sensitivities that only favour the second layer; first layer never selected
        let first = source.layers()[0].param_count();
        let scores: Vec<f64> = (0..w).map(|j| if j < first { 0.0 } else { 1.0 }).collect();
        let z = ZPercent::from_tenths(((w - first) * 1000 / w) as u16).unwrap();
        let mut p = select_top_z(&[scores], &[0], z, source.fingerprint()).unwrap();
        assert!(p.selected().all(|j| j >= first));
        p.fill_values(&source).unwrap();
        let h = build_helper(&target, &p, HelperMode::Zero, 1, 0).unwrap();
        let out = h.model().forward(&inputs(6, 4, 9)).unwrap();
        for k in 1..6 {
            assert_eq!(out.row(k), out.row(0));
        }
    }

    #[test]
    fn build_rejects_other_architecture() {
        let target = model(&[3, 4, 2], 1);
        let other = model(&[3, 5, 2], 1);
        assert!(matches!(
            build_helper(&target, &full_payload(&other), HelperMode::Boost, 1, 0),
            Err(Error::IncompatibleArchitecture { .. })
        ));
    }

    #[test]
    fn two_model_average() {
        // logits chosen so the softmax rows are [0.8, 0.2] and [0.2, 0.8]
        let l = (4.0f64).ln();
        let mk = |b: [f64; 2]| {
            Model::new(vec![DenseLayer::new(1, 2, vec![0.0, 0.0], b.to_vec(), Activation::Identity).unwrap()]).unwrap()
        };
        let target = mk([l, 0.0]);
        let helper_model = mk([0.0, l]);
        let p = select_top_z(&[vec![1.0; 4]], &[1], ZPercent::from_percent(100.0).unwrap(), target.fingerprint()).unwrap();
        let mut p = p;
        p.fill_values(&helper_model).unwrap();
        let mut chain = HelperChain::new(5);
        chain.push(build_helper(&target, &p, HelperMode::Boost, 1, 0).unwrap());
        let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let out = combined_predict(&target, &chain, &x).unwrap();
        for v in out.values() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn empty_chain_is_target_softmax() {
        let target = model(&[3, 4, 3], 5);
        let x = inputs(7, 3, 1);
        let chain = HelperChain::new(5);
        assert_eq!(combined_predict(&target, &chain, &x).unwrap(), target.probabilities(&x).unwrap());
    }

    #[test]
    fn three_model_mean_matches_direct_average() {
        let target = model(&[3, 4, 3], 5);
        let mut chain = HelperChain::new(5);
        for seed in [6, 7] {
            chain.push(build_helper(&target, &full_payload(&model(&[3, 4, 3], seed)), HelperMode::Boost, 1, 0).unwrap());
        }
        let x = inputs(9, 3, 2);
        let got = combined_predict(&target, &chain, &x).unwrap();
        let parts: Vec<Tensor> = std::iter::once(target.probabilities(&x).unwrap())
            .chain(chain.helpers().map(|h| h.model().probabilities(&x).unwrap()))
            .collect();
        for k in 0..9 {
            let row = got.row(k);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..3 {
                let oracle = parts.iter().map(|p| p.row(k)[c]).sum::<f64>() / 3.0;
                assert!((row[c] - oracle).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn static_policy_counts_batches() {
        let mut chain = HelperChain::new(5);
        chain.push(helper_for(&[2], 35));
        let policy = DiscardPolicy::Static { n_batches: 10 };
        let m = metrics(0.5, &[(0, 0); 3]);
        for b in 35..45 {
            assert!(update_discard(&mut chain, &policy, &m, b).is_empty());
        }
        assert_eq!(update_discard(&mut chain, &policy, &m, 45).len(), 1);
        assert!(chain.is_empty());
        assert!(update_discard(&mut chain, &policy, &m, 46).is_empty());
    }

    #[test]
    fn dynamic_policy_fires_at_threshold() {
        let mut chain = HelperChain::new(5);
        chain.push(helper_for(&[2], 35));
        let policy = dynamic(0.10, 5);
        let m = metrics(0.11, &[(0, 20), (0, 20), (2, 20)]);
        for b in 35..39 {
            assert!(update_discard(&mut chain, &policy, &m, b).is_empty(), "window not yet full");
        }
        assert_eq!(update_discard(&mut chain, &policy, &m, 39).len(), 1);

        let mut chain = HelperChain::new(5);
        chain.push(helper_for(&[2], 35));
        let high = metrics(0.13, &[(0, 20), (0, 20), (2, 20)]);
        for b in 35..45 {
            assert!(update_discard(&mut chain, &policy, &high, b).is_empty());
        }
    }

    #[test]
    fn chain_discards_only_recovered_class_helper() {
        // scripted trace: class 0 (helper A) recovers, class 2 (helper B) does not
        let mut chain = HelperChain::new(3);
        chain.push(helper_for(&[0], 10));
        chain.push(helper_for(&[2], 11));
        let policy = dynamic(0.05, 3);
        let trace = [
            metrics(0.3, &[(5, 10), (0, 10), (8, 10)]),
            metrics(0.2, &[(0, 10), (0, 10), (7, 10)]),
            metrics(0.2, &[(0, 10), (0, 10), (6, 10)]),
            metrics(0.2, &[(0, 10), (0, 10), (6, 10)]),
        ];
        // window covers batches 11..=13 at the last step: class 0 errors 0/30 ≤ 0.07,
        // class 2 errors 19/30 > 0.07
        let mut gone = Vec::new();
        for (b, m) in (11..).zip(&trace) {
            gone.extend(update_discard(&mut chain, &policy, m, b));
        }
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].covered_classes(), &[0]);
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.helpers().next().unwrap().covered_classes(), &[2]);
    }

    #[test]
    fn chain_rule_requires_class_support() {
        let mut chain = HelperChain::new(2);
        chain.push(helper_for(&[0], 0));
        chain.push(helper_for(&[2], 0));
        let policy = dynamic(0.05, 2);
        let thin = metrics(0.0, &[(0, 4), (0, 4), (0, 4)]);
        for b in 0..5 {
            assert!(update_discard(&mut chain, &policy, &thin, b).is_empty());
        }
    }
}
