use std::collections::VecDeque;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode};
use super::run::{Event, MetricRow};
use crate::collab::{
    serve_help, BusMessage, DriftState, Endpoint, FlGlobalModel, FlModelUpdate, HelpRefusal, HelpRequest, HelperList,
    MessageKind, NodeMetadata, RefusalReason,
};
use crate::error::{Error, Result};
use crate::helper::{build_helper, update_discard, DiscardPolicy, HelperChain, HelperMode};
use crate::nn::{BatchMetrics, ClassTally, Model, OptimizerState};
use crate::sensitivity::{SensitivitySource, SignificantParamPayload, ZPercent};
use crate::workload::{BatchStream, Dataset, WorkloadSpec};

/// Helpers tried after the first candidate refuses.
pub const MAX_RETRIES: usize = 2;

#[derive(Debug, Clone)]
pub(crate) struct Outgoing {
    pub dst: Endpoint,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

#[derive(Debug)]
pub(crate) struct StepOutput {
    pub row: MetricRow,
    pub outgoing: Vec<Outgoing>,
    pub events: Vec<Event>,
    pub state_hash: [u8; 32],
}

#[derive(Debug, Clone)]
struct PendingHelp {
    classes: Vec<usize>,
    candidates: Vec<u16>,
    next: usize,
}

#[derive(Debug, Clone)]
struct MetaEntry {
    labels: Vec<u32>,
    tally: Vec<ClassTally>,
    error: f64,
}

/// One simulated edge device.
#[derive(Debug, Clone)]
pub struct EdgeNode {
    id: u16,
    mode: Mode,
    classes: usize,
    model: Model,
    opt: OptimizerState,
    stream: BatchStream,
    source: SensitivitySource,
    chain: HelperChain,
    drift: DriftState,
    discard: DiscardPolicy,
    helper_mode: HelperMode,
    z: ZPercent,
    meta: VecDeque<MetaEntry>,
    meta_window: usize,
    pending: Option<PendingHelp>,
    samples_since_sync: u32,
    fl_every: u64,
}

impl EdgeNode {
    pub(crate) fn new(
        id: u16,
        cfg: &ExperimentConfig,
        initial: &Model,
        spec: Arc<WorkloadSpec>,
        dataset: Arc<Dataset>,
    ) -> Result<Self> {
        let classes = dataset.class_count();
        Ok(EdgeNode {
            id,
            mode: cfg.mode,
            classes,
            model: initial.clone(),
            opt: OptimizerState::with_kind(cfg.optimizer, cfg.learning_rate),
            stream: BatchStream::new(spec.clone(), dataset.clone(), id)?,
            source: cfg.sensitivity_source(initial)?,
            chain: HelperChain::new(cfg.chain_history()),
            drift: DriftState::new(cfg.drift, classes),
            discard: cfg.discard_policy(classes),
            helper_mode: cfg.helper_mode,
            z: cfg.z,
            meta: VecDeque::with_capacity(cfg.metadata_window + 1),
            meta_window: cfg.metadata_window,
            pending: None,
            samples_since_sync: 0,
            fl_every: cfg.fl_every,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn chain(&self) -> &HelperChain {
        &self.chain
    }

    pub(crate) fn set_params_f32(&mut self, params: &[f32]) -> Result<()> {
        let p: Vec<f64> = params.iter().map(|&v| v as f64).collect();
        self.model.set_flat_params(&p)
    }

    pub(crate) fn take_sync_samples(&mut self) -> u32 {
        std::mem::take(&mut self.samples_since_sync)
    }

    /// Hash of everything that shapes future training: parameters and optimizer state.
    pub fn state_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.model.state_hash());
        self.opt.hash_into(&mut h);
        h.finalize().into()
    }

    fn covered(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.classes).filter(|&c| self.chain.covers(c)).collect();
        if let Some(p) = &self.pending {
            out.extend(&p.classes);
        }
        out
    }

    fn request(&self, dst: Endpoint, classes: &[usize], kind: MessageKind) -> Outgoing {
        let req = HelpRequest {
            target_node: self.id,
            classes: classes.to_vec(),
            z: self.z,
        };
        Outgoing {
            dst,
            kind,
            payload: req.encode(kind),
        }
    }

    /// Asks the next candidate, or gives up once the list or retries run out.
    fn try_next_candidate(&mut self, round: u64, out: &mut Vec<Outgoing>, events: &mut Vec<Event>) {
        let Some(p) = self.pending.as_mut() else { return };
        if p.next >= p.candidates.len() || p.next > MAX_RETRIES {
            events.push(Event::HelpAbandoned {
                node: self.id,
                round,
                classes: p.classes.clone(),
            });
            self.pending = None;
            return;
        }
        let dst = p.candidates[p.next];
        p.next += 1;
        let classes = p.classes.clone();
        out.push(self.request(Endpoint::Node(dst), &classes, MessageKind::HelpRequest));
    }

    fn serve(&self, req: &HelpRequest) -> std::result::Result<SignificantParamPayload, RefusalReason> {
        serve_help(&self.model, &self.source, req).map_err(|e| match e {
            Error::NoData => RefusalReason::NoData,
            Error::IncompatibleArchitecture { .. } => RefusalReason::Incompatible,
            _ => RefusalReason::Other,
        })
    }

    fn handle(&mut self, round: u64, msg: BusMessage, out: &mut Vec<Outgoing>, events: &mut Vec<Event>) -> Result<()> {
        let src = match msg.src {
            Endpoint::Node(n) => n,
            Endpoint::Mds => u16::MAX,
        };
        match msg.kind {
            MessageKind::HelpRequest => {
                let req = HelpRequest::decode(&msg.payload, MessageKind::HelpRequest)?;
                match self.serve(&req).and_then(|p| p.encode().map_err(|_| RefusalReason::Other)) {
                    Ok(payload) => {
                        events.push(Event::HelpServed {
                            node: self.id,
                            round,
                            target: req.target_node,
                            classes: req.classes.clone(),
                            bytes: payload.len(),
                        });
                        out.push(Outgoing {
                            dst: msg.src,
                            kind: MessageKind::KtPayload,
                            payload,
                        });
                    }
                    Err(reason) => out.push(Outgoing {
                        dst: msg.src,
                        kind: MessageKind::HelpRefusal,
                        payload: HelpRefusal {
                            helper_node: self.id,
                            reason,
                        }
                        .encode(),
                    }),
                }
            }
            MessageKind::HelperList => {
                let list = HelperList::decode(&msg.payload)?;
                if let Some(p) = self.pending.as_mut() {
                    p.candidates = list.candidates;
                    p.next = 0;
                    self.try_next_candidate(round, out, events);
                }
            }
            MessageKind::KtPayload => {
                let payload = SignificantParamPayload::decode(&msg.payload)?;
                match build_helper(&self.model, &payload, self.helper_mode, src, round) {
                    Ok(helper) => {
                        events.push(Event::HelperBuilt {
                            node: self.id,
                            round,
                            source: src,
                            classes: helper.covered_classes().to_vec(),
                            param_hash: helper.param_hash(),
                        });
                        self.chain.push(helper);
                        self.pending = None;
                    }
                    Err(_) => self.try_next_candidate(round, out, events),
                }
            }
            MessageKind::HelpRefusal => {
                HelpRefusal::decode(&msg.payload)?;
                self.try_next_candidate(round, out, events);
            }
            MessageKind::FlGlobalModel => {
                let global = FlGlobalModel::decode(&msg.payload)?;
                self.set_params_f32(&global.params)?;
                events.push(Event::FlApplied {
                    node: self.id,
                    round,
                    param_hash: self.model.state_hash(),
                });
            }
            MessageKind::MetadataUpdate | MessageKind::HelpQuery | MessageKind::FlModelUpdate => {
                return Err(Error::InvalidArgument(format!(
                    "node {} cannot handle {}",
                    self.id, msg.kind
                )));
            }
        }
        Ok(())
    }

    fn metadata(&self, round: u64) -> NodeMetadata {
        let mut labels = vec![0u32; self.classes];
        let mut tally = vec![ClassTally::default(); self.classes];
        for e in &self.meta {
            for (a, b) in labels.iter_mut().zip(&e.labels) {
                *a += b;
            }
            for (a, b) in tally.iter_mut().zip(&e.tally) {
                a.add(*b);
            }
        }
        let total: u32 = labels.iter().sum();
        NodeMetadata {
            node_id: self.id,
            batch_id: round as u32,
            class_priors: labels.iter().map(|&n| n as f64 / total.max(1) as f64).collect(),
            class_error: tally.iter().map(|t| t.error_rate().unwrap_or(1.0)).collect(),
            overall_error: self.meta.iter().map(|e| e.error).sum::<f64>() / self.meta.len().max(1) as f64,
        }
    }

    /// Runs one lockstep round: inbox, predict, train, then the protocol step.
    pub(crate) fn step(&mut self, round: u64, mut inbox: Vec<BusMessage>) -> Result<StepOutput> {
        let mut out = Vec::new();
        let mut events = Vec::new();
        inbox.sort_by_key(|m| (m.round, m.src, m.seq));
        for msg in inbox {
            self.handle(round, msg, &mut out, &mut events)?;
        }

        let batch = self
            .stream
            .next()
            .ok_or_else(|| Error::Workload(format!("node {} ran out of batches at {round}", self.id)))?;
        let combined = if self.chain.is_empty() {
            None
        } else {
            let probs = crate::helper::combined_predict(&self.model, &self.chain, batch.inputs())?;
            Some(BatchMetrics::from_probabilities(&probs, batch.labels(), self.classes))
        };
        let target = self.model.train_batch(&batch, &mut self.opt)?;
        let combined = combined.unwrap_or_else(|| target.clone());
        self.samples_since_sync += batch.len() as u32;
        let live_helpers = self.chain.len();

        let mut labels = vec![0u32; self.classes];
        for &y in batch.labels() {
            labels[y] += 1;
        }
        self.meta.push_back(MetaEntry {
            labels,
            tally: target.per_class.clone(),
            error: target.error_rate,
        });
        if self.meta.len() > self.meta_window {
            self.meta.pop_front();
        }

        match self.mode {
            Mode::Collaborative => {
                self.source.observe(&self.model, &batch)?;
                for h in update_discard(&mut self.chain, &self.discard, &target, round) {
                    events.push(Event::HelperDiscarded {
                        node: self.id,
                        round,
                        source: h.source_node(),
                        param_hash: h.param_hash(),
                        hash_now: h.model().state_hash(),
                    });
                }
                let covered = self.covered();
                if let Some(classes) = self.drift.observe(&combined, !self.chain.is_empty(), &covered) {
                    if self.chain.is_empty() {
                        if let DiscardPolicy::Dynamic(d) = &mut self.discard {
                            d.pre_drift_error = self.drift.baseline().unwrap_or(0.0);
                            d.pre_drift_class_error = self.drift.class_baselines().to_vec();
                        }
                    }
                    events.push(Event::DriftFired {
                        node: self.id,
                        round,
                        classes: classes.clone(),
                    });
                    out.push(self.request(Endpoint::Mds, &classes, MessageKind::HelpQuery));
                    self.pending = Some(PendingHelp {
                        classes,
                        candidates: Vec::new(),
                        next: 0,
                    });
                }
                out.push(Outgoing {
                    dst: Endpoint::Mds,
                    kind: MessageKind::MetadataUpdate,
                    payload: self.metadata(round).encode(),
                });
            }
            Mode::Federated => {
                if self.id != 0 && (round + 1).is_multiple_of(self.fl_every) {
                    let update = FlModelUpdate {
                        node_id: self.id,
                        round: round as u32,
                        sample_count: self.take_sync_samples(),
                        params: self.model.flat_params().iter().map(|&v| v as f32).collect(),
                    };
                    out.push(Outgoing {
                        dst: Endpoint::Node(0),
                        kind: MessageKind::FlModelUpdate,
                        payload: update.encode(),
                    });
                }
            }
            Mode::Isolated => {}
        }

        Ok(StepOutput {
            row: MetricRow {
                node: self.id,
                batch: round,
                combined_error: combined.error_rate,
                target_error: target.error_rate,
                live_helpers,
            },
            outgoing: out,
            events,
            state_hash: self.state_hash(),
        })
    }

    /// Events for helpers still live when the run ends.
    pub(crate) fn finish(&self, round: u64) -> Vec<Event> {
        self.chain
            .helpers()
            .map(|h| Event::HelperRetained {
                node: self.id,
                round,
                source: h.source_node(),
                param_hash: h.param_hash(),
                hash_now: h.model().state_hash(),
            })
            .collect()
    }
}
