use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::{BatchMetrics, ClassTally};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    /// Batches in the sliding window; also the cooldown after a fire.
    pub window: usize,
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
    pub min_support: u32,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            window: 5,
            alpha: 0.1,
            delta: 0.15,
            tau: 0.5,
            min_support: 10,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.window == 0 {
            errs.push("drift window must be at least 1".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            errs.push(format!("drift alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            errs.push(format!("drift delta {} must be finite and non-negative", self.delta));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            errs.push(format!("drift tau {} outside [0, 1]", self.tau));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// EMA baseline plus a sliding window of recent batches.
///
/// The baseline absorbs a batch only when it leaves the window, so it lags
/// the window by `w` batches and still describes the pre-drift regime when a
/// fire happens. It is first set to the mean of the first full window.
#[derive(Debug, Clone)]
pub struct DriftState {
    params: DriftParams,
    baseline: Option<f64>,
    class_baseline: Vec<Option<f64>>,
    window: VecDeque<BatchMetrics>,
    cooldown: usize,
}

impl DriftState {
    pub fn new(params: DriftParams, classes: usize) -> Self {
        DriftState {
            params,
            baseline: None,
            class_baseline: vec![None; classes],
            window: VecDeque::with_capacity(params.window + 1),
            cooldown: 0,
        }
    }

    /// State with a known baseline, as if a quiet history had been observed.
    pub fn with_baseline(params: DriftParams, classes: usize, baseline: f64) -> Self {
        let mut s = DriftState::new(params, classes);
        s.baseline = Some(baseline);
        s
    }

    pub fn params(&self) -> &DriftParams {
        &self.params
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn class_baselines(&self) -> &[Option<f64>] {
        &self.class_baseline
    }

    pub fn window_mean(&self) -> Option<f64> {
        if self.window.is_empty() {
            return None;
        }
        Some(self.window.iter().map(|m| m.error_rate).sum::<f64>() / self.window.len() as f64)
    }

    pub fn window_class_stats(&self) -> Vec<ClassTally> {
        let mut acc = vec![ClassTally::default(); self.class_baseline.len()];
        for m in &self.window {
            for (a, t) in acc.iter_mut().zip(&m.per_class) {
                a.add(*t);
            }
        }
        acc
    }

    fn absorb(&mut self, old: &BatchMetrics) {
        let a = self.params.alpha;
        let ema = |prev: Option<f64>, v: f64| Some(prev.map_or(v, |p| a * v + (1.0 - a) * p));
        self.baseline = ema(self.baseline, old.error_rate);
        for (b, t) in self.class_baseline.iter_mut().zip(&old.per_class) {
            if let Some(e) = t.error_rate() {
                *b = ema(*b, e);
            }
        }
    }

    /// Feeds one batch of combined-model metrics. Returns the classes to ask
    /// help for when the detector fires. Classes in `covered` are never
    /// requested; the baseline is frozen while `helpers_live` or cooling down.
    pub fn observe(&mut self, metrics: &BatchMetrics, helpers_live: bool, covered: &[usize]) -> Option<Vec<usize>> {
        let frozen = helpers_live || self.cooldown > 0;
        self.window.push_back(metrics.clone());
        if self.window.len() > self.params.window {
            let old = self.window.pop_front().expect("window is non-empty");
            if !frozen {
                self.absorb(&old);
            }
        }
        if self.window.len() < self.params.window {
            return None;
        }
        let mean = self.window_mean().expect("window is full");
        let Some(baseline) = self.baseline else {
            self.baseline = Some(mean);
            for (c, t) in self.window_class_stats().into_iter().enumerate() {
                self.class_baseline[c] = t.error_rate();
            }
            return None;
        };
        if self.cooldown > 0 {
            self.cooldown -= 1;
            return None;
        }
        if mean <= baseline + self.params.delta {
            return None;
        }
        let requested: Vec<usize> = self
            .window_class_stats()
            .into_iter()
            .enumerate()
            .filter(|(c, t)| {
                t.support >= self.params.min_support
                    && t.error_rate().is_some_and(|e| e > self.params.tau)
                    && !covered.contains(c)
            })
            .map(|(c, _)| c)
            .collect();
        if requested.is_empty() {
            return None;
        }
        self.cooldown = self.params.window;
        Some(requested)
    }
}

/// Functional form of [`DriftState::observe`] for callers without helpers.
pub fn detect_drift(state: &mut DriftState, metrics: &BatchMetrics) -> Option<Vec<usize>> {
    state.observe(metrics, false, &[])
}
