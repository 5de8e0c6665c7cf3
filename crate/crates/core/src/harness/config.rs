//! Experiment configuration and its `key = value` text form.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored. Lists
//! are comma separated; an explicit class assignment separates nodes with `;`.
//! Unknown keys and bad values are collected and reported together.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::collab::DriftParams;
use crate::error::{Error, Result};
use crate::helper::{DiscardPolicy, DynamicDiscard, HelperMode};
use crate::nn::OptimizerKind;
use crate::sensitivity::{Reservoir, SensitivityMap, SensitivitySource, ZPercent};
use crate::workload::{gen_synthetic, load_idx, Dataset, Pattern, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sensitivity-based knowledge transfer between peers (`canoe` on the command line).
    Collaborative,
    Isolated,
    Federated,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Collaborative => "canoe",
            Mode::Isolated => "isolated",
            Mode::Federated => "federated",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "canoe" => Ok(Mode::Collaborative),
            "isolated" => Ok(Mode::Isolated),
            "federated" => Ok(Mode::Federated),
            _ => Err(format!("unknown mode {s:?} (expected canoe, isolated or federated)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic { classes: usize, dim: usize, per_class: usize },
    Idx { images: PathBuf, labels: PathBuf, classes: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMode {
    Continuous,
    OnDemand { batches: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// Target sees `target_classes`; every other node sees all classes.
    Overlapping,
    /// Target sees `target_classes`; every other node sees the rest.
    Disjoint,
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscardConfig {
    Static { n_batches: u64 },
    Dynamic { tolerance: f64, window: usize, min_class_support: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub node_count: usize,
    pub layers: Vec<usize>,
    pub dataset: DatasetSource,
    pub pattern: Pattern,
    pub assignment: Assignment,
    pub target_node: u16,
    pub target_classes: Vec<usize>,
    pub peer_pattern_weight: f64,
    pub batches: u64,
    pub batch_size: usize,
    pub shared_stream: bool,
    pub z: ZPercent,
    pub sensitivity: SensitivityMode,
    pub helper_mode: HelperMode,
    pub discard: DiscardConfig,
    pub drift: DriftParams,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    pub fl_every: u64,
    pub workers: usize,
    /// Batches summarized in each metadata update.
    pub metadata_window: usize,
    /// Batches of all-class data the shared initial model is trained on
    /// before it is copied to every node.
    pub pretrain_batches: u64,
    pub pre_drift_window: usize,
    pub recovery_tolerance: f64,
}

const KEYS: &[&str] = &[
    "mode",
    "nodes",
    "layers",
    "dataset",
    "classes",
    "dim",
    "per_class",
    "idx_images",
    "idx_labels",
    "pattern",
    "pattern_classes",
    "drift_at",
    "fluctuation",
    "assignment",
    "target_node",
    "target_classes",
    "peer_pattern_weight",
    "batches",
    "batch_size",
    "shared_stream",
    "z",
    "sensitivity",
    "reservoir",
    "helper",
    "discard",
    "discard_after",
    "discard_tolerance",
    "discard_window",
    "discard_min_support",
    "drift_window",
    "drift_alpha",
    "drift_delta",
    "drift_tau",
    "drift_min_support",
    "optimizer",
    "learning_rate",
    "seed",
    "fl_every",
    "workers",
    "metadata_window",
    "pretrain_batches",
    "pre_drift_window",
    "recovery_tolerance",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::scenario_s(1)
    }
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("bad list element {t:?}")))
        .collect()
}

fn scalar<T: FromStr>(key: &str, s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("{key}: cannot parse {s:?}"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Five nodes, six synthetic classes in 32 dimensions, a 32-64-32-6 network,
    /// and one class joining node 0's stream at batch 35.
    pub fn scenario_s(seed: u64) -> Self {
        ExperimentConfig {
            mode: Mode::Collaborative,
            node_count: 5,
            layers: vec![32, 64, 32, 6],
            dataset: DatasetSource::Synthetic {
                classes: 6,
                dim: 32,
                per_class: 1000,
            },
            pattern: Pattern::Introduction {
                classes: vec![5],
                at_batch: 35,
            },
            assignment: Assignment::Overlapping,
            target_node: 0,
            target_classes: vec![0, 1],
            peer_pattern_weight: 1.0,
            batches: 100,
            batch_size: 64,
            shared_stream: false,
            z: ZPercent::from_tenths(500).expect("50% is in range"),
            sensitivity: SensitivityMode::OnDemand { batches: 1 },
            helper_mode: HelperMode::Boost,
            discard: DiscardConfig::Dynamic {
                tolerance: 0.02,
                window: 5,
                min_class_support: 10,
            },
            drift: DriftParams::default(),
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            seed,
            fl_every: 1,
            workers: 1,
            metadata_window: 10,
            pretrain_batches: 3,
            pre_drift_window: 10,
            recovery_tolerance: 0.02,
        }
    }

    /// Parses a config file on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        ExperimentConfig::parse_with(text, &[])
    }

    /// Like [`ExperimentConfig::parse`], applying `overrides` after the file
    /// and before validation.
    pub fn parse_with(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut errs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errs.push(format!("line {}: expected `key = value`", n + 1));
                continue;
            };
            if let Err(e) = cfg.set(k.trim(), v.trim()) {
                errs.push(format!("line {}: {e}", n + 1));
            }
        }
        for (k, v) in overrides {
            if let Err(e) = cfg.set(k, v) {
                errs.push(format!("--{}: {e}", k.replace('_', "-")));
            }
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Applies one setting. Used for both file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = value.parse()?,
            "nodes" => self.node_count = scalar(key, value)?,
            "layers" => self.layers = list(value)?,
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => match &self.dataset {
                        d @ DatasetSource::Synthetic { .. } => d.clone(),
                        DatasetSource::Idx { .. } => DatasetSource::Synthetic {
                            classes: 6,
                            dim: 32,
                            per_class: 1000,
                        },
                    },
                    "idx" => match &self.dataset {
                        d @ DatasetSource::Idx { .. } => d.clone(),
                        DatasetSource::Synthetic { classes, .. } => DatasetSource::Idx {
                            images: PathBuf::new(),
                            labels: PathBuf::new(),
                            classes: Some(*classes),
                        },
                    },
                    _ => return Err(format!("unknown dataset {value:?} (expected synthetic or idx)")),
                }
            }
            "classes" => match &mut self.dataset {
                DatasetSource::Synthetic { classes, .. } => *classes = scalar(key, value)?,
                DatasetSource::Idx { classes, .. } if value == "all" => *classes = None,
                DatasetSource::Idx { classes, .. } => *classes = Some(scalar(key, value)?),
            },
            "dim" | "per_class" => match &mut self.dataset {
                DatasetSource::Synthetic { dim, per_class, .. } => {
                    let v = scalar(key, value)?;
                    if key == "dim" {
                        *dim = v;
                    } else {
                        *per_class = v;
                    }
                }
                DatasetSource::Idx { .. } => return Err(format!("{key} applies to synthetic datasets only")),
            },
            "idx_images" | "idx_labels" => match &mut self.dataset {
                DatasetSource::Idx { images, labels, .. } => {
                    if key == "idx_images" {
                        *images = value.into();
                    } else {
                        *labels = value.into();
                    }
                }
                DatasetSource::Synthetic { .. } => return Err(format!("{key} needs `dataset = idx` first")),
            },
            "pattern" => {
                let classes = self.pattern.classes().to_vec();
                let onset = self.pattern.onset().unwrap_or(self.batches / 3);
                self.pattern = match value {
                    "stationary" => Pattern::Stationary,
                    "introduction" => Pattern::Introduction {
                        classes,
                        at_batch: onset,
                    },
                    "fluctuation" => Pattern::Fluctuation {
                        classes,
                        on: onset,
                        off: onset + 20,
                        on_again: onset + 40,
                    },
                    _ => return Err(format!("unknown pattern {value:?}")),
                }
            }
            "pattern_classes" => match &mut self.pattern {
                Pattern::Introduction { classes, .. } | Pattern::Fluctuation { classes, .. } => *classes = list(value)?,
                Pattern::Stationary => return Err("pattern_classes needs a non-stationary pattern first".into()),
            },
            "drift_at" => match &mut self.pattern {
                Pattern::Introduction { at_batch, .. } => *at_batch = scalar(key, value)?,
                _ => return Err("drift_at applies to the introduction pattern".into()),
            },
            "fluctuation" => match &mut self.pattern {
                Pattern::Fluctuation { on, off, on_again, .. } => {
                    let v: Vec<u64> = list(value)?;
                    let [a, b, c] = v[..] else {
                        return Err("fluctuation expects `on,off,on_again`".into());
                    };
                    (*on, *off, *on_again) = (a, b, c);
                }
                _ => return Err("fluctuation needs `pattern = fluctuation` first".into()),
            },
            "assignment" => {
                self.assignment = match value {
                    "overlapping" => Assignment::Overlapping,
                    "disjoint" => Assignment::Disjoint,
                    _ => Assignment::Explicit(value.split(';').map(list).collect::<std::result::Result<_, _>>()?),
                }
            }
            "target_node" => self.target_node = scalar(key, value)?,
            "target_classes" => self.target_classes = list(value)?,
            "peer_pattern_weight" => self.peer_pattern_weight = scalar(key, value)?,
            "batches" => self.batches = scalar(key, value)?,
            "batch_size" => self.batch_size = scalar(key, value)?,
            "shared_stream" => self.shared_stream = scalar(key, value)?,
            "z" => {
                let p: f64 = scalar(key, value)?;
                self.z = ZPercent::from_percent(p).map_err(|e| e.to_string())?;
            }
            "sensitivity" => {
                self.sensitivity = match value {
                    "continuous" => SensitivityMode::Continuous,
                    "on_demand" => SensitivityMode::OnDemand { batches: 1 },
                    _ => return Err(format!("unknown sensitivity mode {value:?}")),
                }
            }
            "reservoir" => match &mut self.sensitivity {
                SensitivityMode::OnDemand { batches } => *batches = scalar(key, value)?,
                SensitivityMode::Continuous => return Err("reservoir needs `sensitivity = on_demand`".into()),
            },
            "helper" => {
                self.helper_mode = match value {
                    "boost" => HelperMode::Boost,
                    "zero" => HelperMode::Zero,
                    _ => return Err(format!("unknown helper mode {value:?}")),
                }
            }
            "discard" => {
                self.discard = match value {
                    "static" => DiscardConfig::Static { n_batches: 20 },
                    "dynamic" => DiscardConfig::Dynamic {
                        tolerance: 0.02,
                        window: 5,
                        min_class_support: 10,
                    },
                    _ => return Err(format!("unknown discard policy {value:?}")),
                }
            }
            "discard_after" => match &mut self.discard {
                DiscardConfig::Static { n_batches } => *n_batches = scalar(key, value)?,
                _ => return Err("discard_after needs `discard = static`".into()),
            },
            "discard_tolerance" | "discard_window" | "discard_min_support" => match &mut self.discard {
                DiscardConfig::Dynamic {
                    tolerance,
                    window,
                    min_class_support,
                } => match key {
                    "discard_tolerance" => *tolerance = scalar(key, value)?,
                    "discard_window" => *window = scalar(key, value)?,
                    _ => *min_class_support = scalar(key, value)?,
                },
                _ => return Err(format!("{key} needs `discard = dynamic`")),
            },
            "drift_window" => self.drift.window = scalar(key, value)?,
            "drift_alpha" => self.drift.alpha = scalar(key, value)?,
            "drift_delta" => self.drift.delta = scalar(key, value)?,
            "drift_tau" => self.drift.tau = scalar(key, value)?,
            "drift_min_support" => self.drift.min_support = scalar(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(format!("unknown optimizer {value:?}")),
                }
            }
            "learning_rate" => self.learning_rate = scalar(key, value)?,
            "seed" => self.seed = scalar(key, value)?,
            "fl_every" => self.fl_every = scalar(key, value)?,
            "workers" => self.workers = scalar(key, value)?,
            "metadata_window" => self.metadata_window = scalar(key, value)?,
            "pretrain_batches" => self.pretrain_batches = scalar(key, value)?,
            "pre_drift_window" => self.pre_drift_window = scalar(key, value)?,
            "recovery_tolerance" => self.recovery_tolerance = scalar(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSource::Synthetic { classes, .. } => Some(*classes),
            DatasetSource::Idx { classes, .. } => *classes,
        }
    }

    /// Per-node class sets after expanding `overlapping` / `disjoint`.
    pub fn node_assignment(&self, classes: usize) -> Vec<Vec<usize>> {
        let target = self.target_node as usize;
        match &self.assignment {
            Assignment::Explicit(v) => v.clone(),
            Assignment::Overlapping | Assignment::Disjoint => (0..self.node_count)
                .map(|n| {
                    if n == target {
                        self.target_classes.clone()
                    } else if self.assignment == Assignment::Overlapping {
                        (0..classes).collect()
                    } else {
                        (0..classes).filter(|c| !self.target_classes.contains(c)).collect()
                    }
                })
                .collect(),
        }
    }

    /// Checks everything that can be checked without loading data and lists
    /// every problem found.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.node_count == 0 {
            errs.push("nodes must be at least 1".to_string());
        }
        if self.node_count > u16::MAX as usize {
            errs.push(format!("at most {} nodes are supported", u16::MAX));
        }
        if self.layers.len() < 2 || self.layers.contains(&0) {
            errs.push(format!("layers {:?} need at least two positive widths", self.layers));
        }
        if let Some(c) = self.class_count() {
            if self.layers.last() != Some(&c) {
                errs.push(format!("output width {:?} differs from class count {c}", self.layers.last()));
            }
            if let Some(bad) = self.target_classes.iter().find(|&&k| k >= c) {
                errs.push(format!("target class {bad} outside {c} classes"));
            }
            if let Some(bad) = self.pattern.classes().iter().find(|&&k| k >= c) {
                errs.push(format!("pattern class {bad} outside {c} classes"));
            }
            if c > u16::MAX as usize {
                errs.push("too many classes".into());
            }
        }
        match &self.dataset {
            DatasetSource::Synthetic { classes, dim, per_class } => {
                if *classes == 0 || *dim == 0 || *per_class == 0 {
                    errs.push("synthetic classes, dim and per_class must be positive".into());
                }
                if self.layers.first() != Some(dim) {
                    errs.push(format!("input width {:?} differs from dim {dim}", self.layers.first()));
                }
            }
            DatasetSource::Idx { images, labels, .. } => {
                if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                    errs.push("idx dataset needs idx_images and idx_labels".into());
                }
            }
        }
        if self.target_node as usize >= self.node_count {
            errs.push(format!("target node {} outside {} nodes", self.target_node, self.node_count));
        }
        if let Assignment::Explicit(v) = &self.assignment {
            if v.len() != self.node_count {
                errs.push(format!("assignment lists {} nodes, config has {}", v.len(), self.node_count));
            }
        } else if self.target_classes.is_empty() {
            errs.push("target_classes must not be empty".into());
        }
        if self.batches == 0 || self.batch_size == 0 {
            errs.push("batches and batch_size must be positive".into());
        }
        if let Some(t) = self.pattern.onset() {
            if t >= self.batches {
                errs.push(format!("pattern onset {t} is not before batch count {}", self.batches));
            }
        }
        if let SensitivityMode::OnDemand { batches: 0 } = self.sensitivity {
            errs.push("reservoir must hold at least one batch".into());
        }
        match self.discard {
            DiscardConfig::Static { n_batches: 0 } => errs.push("discard_after must be positive".into()),
            DiscardConfig::Dynamic { tolerance, window, .. } => {
                if !(tolerance.is_finite() && tolerance >= 0.0) {
                    errs.push(format!("discard tolerance {tolerance} must be non-negative"));
                }
                if window == 0 {
                    errs.push("discard window must be positive".into());
                }
            }
            _ => {}
        }
        if let Err(Error::Config(e)) = self.drift.validate() {
            errs.extend(e);
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            errs.push(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.fl_every == 0 {
            errs.push("fl_every must be at least 1".into());
        }
        if self.workers == 0 {
            errs.push("workers must be at least 1".into());
        }
        if self.metadata_window == 0 || self.pre_drift_window == 0 {
            errs.push("metadata_window and pre_drift_window must be positive".into());
        }
        if !(self.recovery_tolerance.is_finite() && self.recovery_tolerance >= 0.0) {
            errs.push("recovery_tolerance must be non-negative".into());
        }
        if !(self.peer_pattern_weight.is_finite() && self.peer_pattern_weight > 0.0) {
            errs.push("peer_pattern_weight must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Synthetic { classes, dim, per_class } => {
                gen_synthetic(self.seed, *classes, *dim, *per_class)
            }
            DatasetSource::Idx { images, labels, classes } => {
                let ds = load_idx(images, labels)?;
                match classes {
                    Some(k) => ds.first_classes(*k),
                    None => Ok(ds),
                }
            }
        }
    }

    /// Builds the workload against a loaded dataset, validating the pair.
    pub fn workload(&self, dataset: &Dataset) -> Result<Arc<WorkloadSpec>> {
        let mut errs = Vec::new();
        let c = dataset.class_count();
        if self.layers.first() != Some(&dataset.dim()) {
            errs.push(format!("input width {:?} differs from data dim {}", self.layers.first(), dataset.dim()));
        }
        if self.layers.last() != Some(&c) {
            errs.push(format!("output width {:?} differs from data classes {c}", self.layers.last()));
        }
        let spec = WorkloadSpec {
            pattern: self.pattern.clone(),
            assignment: self.node_assignment(c),
            target_node: self.target_node,
            peer_pattern_weight: self.peer_pattern_weight,
            batches: self.batches,
            batch_size: self.batch_size,
            seed: self.seed ^ 0x9E37_79B9_7F4A_7C15,
            shared_stream: self.shared_stream,
        };
        if let Err(e) = spec.validate(dataset) {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(Arc::new(spec))
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn sensitivity_source(&self, model: &crate::nn::Model) -> Result<SensitivitySource> {
        Ok(match self.sensitivity {
            SensitivityMode::Continuous => SensitivitySource::Continuous(SensitivityMap::for_model(model)),
            SensitivityMode::OnDemand { batches } => SensitivitySource::OnDemand(Reservoir::new(batches)?),
        })
    }

    /// Discard policy with placeholder pre-drift references, filled in when a drift fires.
    pub fn discard_policy(&self, classes: usize) -> DiscardPolicy {
        match self.discard {
            DiscardConfig::Static { n_batches } => DiscardPolicy::Static { n_batches },
            DiscardConfig::Dynamic {
                tolerance,
                window,
                min_class_support,
            } => DiscardPolicy::Dynamic(DynamicDiscard {
                pre_drift_error: 0.0,
                pre_drift_class_error: vec![None; classes],
                tolerance,
                window,
                min_class_support,
            }),
        }
    }

    pub fn chain_history(&self) -> usize {
        match self.discard {
            DiscardConfig::Dynamic { window, .. } => window,
            DiscardConfig::Static { .. } => 1,
        }
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.mode.name().into());
        kv("nodes", self.node_count.to_string());
        kv("layers", join(&self.layers));
        match &self.dataset {
            DatasetSource::Synthetic { classes, dim, per_class } => {
                kv("dataset", "synthetic".into());
                kv("classes", classes.to_string());
                kv("dim", dim.to_string());
                kv("per_class", per_class.to_string());
            }
            DatasetSource::Idx { images, labels, classes } => {
                kv("dataset", "idx".into());
                kv("idx_images", images.display().to_string());
                kv("idx_labels", labels.display().to_string());
                kv("classes", classes.map_or("all".into(), |c| c.to_string()));
            }
        }
        kv("batches", self.batches.to_string());
        match &self.pattern {
            Pattern::Stationary => kv("pattern", "stationary".into()),
            Pattern::Introduction { classes, at_batch } => {
                kv("pattern", "introduction".into());
                kv("pattern_classes", join(classes));
                kv("drift_at", at_batch.to_string());
            }
            Pattern::Fluctuation {
                classes,
                on,
                off,
                on_again,
            } => {
                kv("pattern", "fluctuation".into());
                kv("pattern_classes", join(classes));
                kv("fluctuation", format!("{on},{off},{on_again}"));
            }
        }
        kv(
            "assignment",
            match &self.assignment {
                Assignment::Overlapping => "overlapping".into(),
                Assignment::Disjoint => "disjoint".into(),
                Assignment::Explicit(v) => v.iter().map(|c| join(c)).collect::<Vec<_>>().join(";"),
            },
        );
        kv("target_node", self.target_node.to_string());
        kv("target_classes", join(&self.target_classes));
        kv("peer_pattern_weight", self.peer_pattern_weight.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("shared_stream", self.shared_stream.to_string());
        kv("z", self.z.percent().to_string());
        match self.sensitivity {
            SensitivityMode::Continuous => kv("sensitivity", "continuous".into()),
            SensitivityMode::OnDemand { batches } => {
                kv("sensitivity", "on_demand".into());
                kv("reservoir", batches.to_string());
            }
        }
        kv(
            "helper",
            match self.helper_mode {
                HelperMode::Boost => "boost",
                HelperMode::Zero => "zero",
            }
            .into(),
        );
        match self.discard {
            DiscardConfig::Static { n_batches } => {
                kv("discard", "static".into());
                kv("discard_after", n_batches.to_string());
            }
            DiscardConfig::Dynamic {
                tolerance,
                window,
                min_class_support,
            } => {
                kv("discard", "dynamic".into());
                kv("discard_tolerance", tolerance.to_string());
                kv("discard_window", window.to_string());
                kv("discard_min_support", min_class_support.to_string());
            }
        }
        kv("drift_window", self.drift.window.to_string());
        kv("drift_alpha", self.drift.alpha.to_string());
        kv("drift_delta", self.drift.delta.to_string());
        kv("drift_tau", self.drift.tau.to_string());
        kv("drift_min_support", self.drift.min_support.to_string());
        kv(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
        );
        kv("learning_rate", self.learning_rate.to_string());
        kv("seed", self.seed.to_string());
        kv("fl_every", self.fl_every.to_string());
        kv("workers", self.workers.to_string());
        kv("metadata_window", self.metadata_window.to_string());
        kv("pretrain_batches", self.pretrain_batches.to_string());
        kv("pre_drift_window", self.pre_drift_window.to_string());
        kv("recovery_tolerance", self.recovery_tolerance.to_string());
        s
    }

    pub fn known_keys() -> &'static [&'static str] {
        KEYS
    }
}
