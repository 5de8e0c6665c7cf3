//! Parameter sensitivity, top-Z significant-parameter selection and the
//! transfer payload.
//!
//! The sensitivity of parameter `j` towards class `i` is the signed gradient of
//! the class-`i` logit with respect to `j`, summed over every observed sample.
//! It can be maintained continuously (one [`SensitivityMap`] row per class,
//! updated after every batch) or computed on demand from a small [`Reservoir`]
//! of recent batches. Selection ranks parameters by the mean absolute
//! sensitivity over the requested classes.
//!
//! # Wire format
//!
//! All integers little-endian.
//!
//! ```text
//! "CNOE"            4 bytes magic
//! version           u8 (= 1)
//! class_count       u16, then class_count × u16 class ids, strictly increasing
//! z                 u16, tenths of a percent in 1..=1000
//! fingerprint       u64 architecture hash
//! param_count       u32 (W)
//! mask              ceil(W / 8) bytes, bit j at byte j/8, LSB first; padding bits zero
//! values            popcount(mask) × f32, ascending flat index
//! ```

use std::collections::VecDeque;

use bitvec::prelude::*;

use crate::error::{DecodeError, DecodeErrorKind, Error, Result};
use crate::nn::{Batch, Model};
use crate::wire::Reader;

pub const PAYLOAD_MAGIC: [u8; 4] = *b"CNOE";
pub const PAYLOAD_VERSION: u8 = 1;

/// Percentage of parameters to transfer, stored in tenths of a percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZPercent(u16);

impl ZPercent {
    pub fn from_tenths(tenths: u16) -> Result<Self> {
        if (1..=1000).contains(&tenths) {
            Ok(ZPercent(tenths))
        } else {
            Err(Error::InvalidArgument(format!(
                "Z must lie in (0, 100]; got {}%",
                tenths as f64 / 10.0
            )))
        }
    }

    /// Rounds to the nearest tenth of a percent.
    pub fn from_percent(percent: f64) -> Result<Self> {
        if !percent.is_finite() || percent <= 0.0 || percent > 100.0 {
            return Err(Error::InvalidArgument(format!("Z must lie in (0, 100]; got {percent}")));
        }
        let tenths = (percent * 10.0).round().max(1.0) as u16;
        ZPercent::from_tenths(tenths)
    }

    pub fn tenths(self) -> u16 {
        self.0
    }

    pub fn percent(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// `ceil(Z/100 · W)`, exact in integer arithmetic.
    pub fn selected_count(self, param_count: usize) -> usize {
        (self.0 as usize * param_count).div_ceil(1000)
    }
}

/// Signed per-class sensitivity sums maintained after every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    param_count: usize,
    sums: Vec<Vec<f64>>,
    batches: u64,
}

impl SensitivityMap {
    pub fn for_model(model: &Model) -> Self {
        SensitivityMap {
            param_count: model.param_count(),
            sums: vec![vec![0.0; model.param_count()]; model.class_count()],
            batches: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.sums.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn batches_accumulated(&self) -> u64 {
        self.batches
    }

    pub fn class(&self, class: usize) -> Option<&[f64]> {
        self.sums.get(class).map(Vec::as_slice)
    }

    pub fn reset(&mut self) {
        for row in &mut self.sums {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        self.batches = 0;
    }

    /// Adds the per-class logit gradients of `batch` under `model`.
    pub fn accumulate_batch(&mut self, model: &Model, batch: &Batch) -> Result<()> {
        if model.param_count() != self.param_count || model.class_count() != self.sums.len() {
            return Err(Error::Shape(format!(
                "sensitivity map is [{} × {}], model is [{} × {}]",
                self.sums.len(),
                self.param_count,
                model.class_count(),
                model.param_count()
            )));
        }
        let classes: Vec<usize> = (0..self.sums.len()).collect();
        let grads = model.class_logit_gradients(batch.inputs(), &classes)?;
        for (row, g) in self.sums.iter_mut().zip(grads) {
            for (s, v) in row.iter_mut().zip(g) {
                *s += v;
            }
        }
        self.batches += 1;
        Ok(())
    }

    pub fn per_class(&self, classes: &[usize]) -> Result<Vec<Vec<f64>>> {
        classes
            .iter()
            .map(|&c| {
                self.class(c)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::InvalidArgument(format!("class {c} not in map")))
            })
            .collect()
    }
}

/// Ring of the most recent request batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    capacity: usize,
    batches: VecDeque<Batch>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("reservoir capacity must be positive".into()));
        }
        Ok(Reservoir {
            capacity,
            batches: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn push(&mut self, batch: Batch) {
        if self.batches.len() == self.capacity {
            self.batches.pop_front();
        }
        self.batches.push_back(batch);
    }

    pub fn batches(&self) -> impl Iterator<Item = &Batch> {
        self.batches.iter()
    }

    pub fn clear(&mut self) {
        self.batches.clear();
    }
}

/// Per-class sensitivity of the current `model` over every batch held in `reservoir`.
pub fn compute_on_demand(reservoir: &Reservoir, model: &Model, classes: &[usize]) -> Result<Vec<Vec<f64>>> {
    if reservoir.is_empty() {
        return Err(Error::NoData);
    }
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no classes requested".into()));
    }
    let mut out = vec![vec![0.0; model.param_count()]; classes.len()];
    for batch in reservoir.batches() {
        let grads = model.class_logit_gradients(batch.inputs(), classes)?;
        for (acc, g) in out.iter_mut().zip(grads) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    Ok(out)
}

/// Where a node takes its sensitivities from when asked for help.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitivitySource {
    Continuous(SensitivityMap),
    OnDemand(Reservoir),
}

impl SensitivitySource {
    /// Records a processed batch. `model` is the node's model after training on it.
    pub fn observe(&mut self, model: &Model, batch: &Batch) -> Result<()> {
        match self {
            SensitivitySource::Continuous(map) => map.accumulate_batch(model, batch),
            SensitivitySource::OnDemand(res) => {
                res.push(batch.clone());
                Ok(())
            }
        }
    }

    pub fn sensitivities(&self, model: &Model, classes: &[usize]) -> Result<Vec<Vec<f64>>> {
        match self {
            SensitivitySource::Continuous(map) => {
                if map.batches_accumulated() == 0 {
                    return Err(Error::NoData);
                }
                map.per_class(classes)
            }
            SensitivitySource::OnDemand(res) => compute_on_demand(res, model, classes),
        }
    }

    /// Forgets everything observed so far, e.g. after the model was replaced.
    pub fn reset(&mut self) {
        match self {
            SensitivitySource::Continuous(map) => map.reset(),
            SensitivitySource::OnDemand(res) => res.clear(),
        }
    }
}

pub type ParamMask = BitVec<u8, Lsb0>;

/// The top-Z significant parameters for a class set, ready for transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificantParamPayload {
    requested_classes: Vec<u16>,
    z: ZPercent,
    fingerprint: u64,
    mask: ParamMask,
    values: Vec<f32>,
}

impl SignificantParamPayload {
    /// Builds an unfilled payload from an explicit mask. The mask must select exactly
    /// `ceil(Z/100 · W)` parameters.
    pub fn from_mask(classes: &[usize], z: ZPercent, fingerprint: u64, mask: ParamMask) -> Result<Self> {
        let requested_classes = normalize_classes(classes)?;
        let expected = z.selected_count(mask.len());
        if mask.count_ones() != expected {
            return Err(Error::InvalidArgument(format!(
                "mask selects {} parameters, Z={}% of {} requires {expected}",
                mask.count_ones(),
                z.percent(),
                mask.len()
            )));
        }
        Ok(SignificantParamPayload {
            requested_classes,
            z,
            fingerprint,
            mask,
            values: Vec::new(),
        })
    }

    pub fn requested_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.requested_classes.iter().map(|&c| c as usize)
    }

    pub fn z(&self) -> ZPercent {
        self.z
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn param_count(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &ParamMask {
        &self.mask
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter_ones()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_filled(&self) -> bool {
        self.values.len() == self.mask.count_ones()
    }

    /// Copies the selected parameters of `model`, narrowed to `f32`.
    pub fn fill_values(&mut self, model: &Model) -> Result<()> {
        if model.fingerprint() != self.fingerprint || model.param_count() != self.mask.len() {
            return Err(Error::IncompatibleArchitecture {
                expected: self.fingerprint,
                found: model.fingerprint(),
            });
        }
        let params = model.flat_params();
        self.values = self.mask.iter_ones().map(|j| params[j] as f32).collect();
        Ok(())
    }

    /// Size of the encoding in bytes.
    pub fn encoded_len(&self) -> usize {
        payload_size(self.requested_classes.len(), self.mask.len(), self.mask.count_ones())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.requested_classes.is_empty() {
            return Err(Error::InvalidArgument("payload has no requested classes".into()));
        }
        if !self.is_filled() {
            return Err(Error::InvalidArgument("payload values not filled".into()));
        }
        let w = u32::try_from(self.mask.len())
            .map_err(|_| Error::InvalidArgument("parameter count exceeds u32".into()))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&PAYLOAD_MAGIC);
        out.push(PAYLOAD_VERSION);
        out.extend_from_slice(&(self.requested_classes.len() as u16).to_le_bytes());
        for c in &self.requested_classes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.z.0.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(self.mask.as_raw_slice());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != PAYLOAD_MAGIC {
            let found = u32::from_be_bytes(magic.try_into().expect("4 bytes"));
            return Err(r.error(0, DecodeErrorKind::BadMagic { found }));
        }
        let version = r.u8()?;
        if version != PAYLOAD_VERSION {
            return Err(r.error(4, DecodeErrorKind::UnsupportedVersion(version)));
        }
        let at = r.offset();
        let class_count = r.u16_le()? as usize;
        if class_count == 0 {
            return Err(r.error(at, DecodeErrorKind::Invalid("empty class set")));
        }
        let mut requested_classes = Vec::with_capacity(class_count.min(r.remaining() / 2));
        for _ in 0..class_count {
            let at = r.offset();
            let c = r.u16_le()?;
            if requested_classes.last().is_some_and(|&prev| prev >= c) {
                return Err(r.error(at, DecodeErrorKind::Invalid("class ids not strictly increasing")));
            }
            requested_classes.push(c);
        }
        let at = r.offset();
        let z = ZPercent::from_tenths(r.u16_le()?)
            .map_err(|_| DecodeError::new(at, DecodeErrorKind::Invalid("Z outside 0.1..=100%")))?;
        let fingerprint = r.u64_le()?;
        let at = r.offset();
        let w = r.u32_le()? as usize;
        if w == 0 {
            return Err(r.error(at, DecodeErrorKind::Invalid("zero parameter count")));
        }
        let mask_at = r.offset();
        let mask_bytes = r.take(w.div_ceil(8))?;
        let mut mask = ParamMask::from_slice(mask_bytes);
        if mask[w..].any() {
            return Err(r.error(mask_at + w / 8, DecodeErrorKind::Invalid("mask padding bits set")));
        }
        mask.truncate(w);
        let selected = mask.count_ones();
        if selected != z.selected_count(w) {
            return Err(r.error(mask_at, DecodeErrorKind::Invalid("mask popcount does not match Z")));
        }
        let mut values = Vec::with_capacity(selected.min(r.remaining() / 4));
        for _ in 0..selected {
            values.push(r.finite_f32_le()?);
        }
        r.finish()?;
        Ok(SignificantParamPayload {
            requested_classes,
            z,
            fingerprint,
            mask,
            values,
        })
    }
}

/// Encoded payload size: header + ceil(W/8) + 4 per selected parameter.
pub fn payload_size(class_count: usize, param_count: usize, selected: usize) -> usize {
    payload_header_size(class_count) + param_count.div_ceil(8) + 4 * selected
}

pub fn payload_header_size(class_count: usize) -> usize {
    4 + 1 + 2 + 2 * class_count + 2 + 8 + 4
}

fn normalize_classes(classes: &[usize]) -> Result<Vec<u16>> {
    if classes.is_empty() {
        return Err(Error::InvalidArgument("class set must not be empty".into()));
    }
    let mut out = classes
        .iter()
        .map(|&c| u16::try_from(c).map_err(|_| Error::InvalidArgument(format!("class id {c} too large"))))
        .collect::<Result<Vec<_>>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Mean absolute sensitivity per parameter across the given per-class vectors.
pub fn significance_scores(per_class: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = per_class.first() else {
        return Err(Error::InvalidArgument("no class sensitivities given".into()));
    };
    let w = first.len();
    if per_class.iter().any(|v| v.len() != w) {
        return Err(Error::Shape("per-class sensitivity vectors differ in length".into()));
    }
    let k = per_class.len() as f64;
    let mut scores = vec![0.0; w];
    for v in per_class {
        for (s, x) in scores.iter_mut().zip(v) {
            *s += x.abs();
        }
    }
    for s in &mut scores {
        *s /= k;
        if !s.is_finite() {
            return Err(Error::NumericalFailure("non-finite sensitivity".into()));
        }
    }
    Ok(scores)
}

/// Marks the `ceil(Z/100 · W)` highest scores; equal scores favour the lower index.
pub fn top_z_mask(scores: &[f64], z: ZPercent) -> ParamMask {
    let k = z.selected_count(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
    }
    let mut mask = ParamMask::repeat(false, scores.len());
    for &j in &order[..k] {
        mask.set(j, true);
    }
    mask
}

/// Selects the significant parameters for `classes` from their per-class
/// sensitivity vectors (`per_class[k]` belongs to `classes[k]`).
pub fn select_top_z(
    per_class: &[Vec<f64>],
    classes: &[usize],
    z: ZPercent,
    fingerprint: u64,
) -> Result<SignificantParamPayload> {
    if per_class.len() != classes.len() {
        return Err(Error::Shape("one sensitivity vector per requested class expected".into()));
    }
    let scores = significance_scores(per_class)?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("model has no parameters".into()));
    }
    SignificantParamPayload::from_mask(classes, z, fingerprint, top_z_mask(&scores, z))
}

/// Sensitivity, selection and value copy in one step, as a helper node serves a request.
pub fn build_payload(
    source: &SensitivitySource,
    model: &Model,
    classes: &[usize],
    z: ZPercent,
) -> Result<SignificantParamPayload> {
    let sens = source.sensitivities(model, classes)?;
    let mut payload = select_top_z(&sens, classes, z, model.fingerprint())?;
    payload.fill_values(model)?;
    Ok(payload)
}
