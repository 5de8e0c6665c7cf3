use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode};
use super::node::{EdgeNode, StepOutput};
use crate::collab::{
    Bus, BusMessage, ByteLedger, Endpoint, FlGlobalModel, FlModelUpdate, HelpRequest, HelperList, MessageKind,
    MetadataService, NodeMetadata,
};
use crate::error::{Error, Result};
use crate::nn::{Model, OptimizerState};
use crate::workload::{BatchStream, Dataset, Pattern, WorkloadSpec};

const MODEL_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const PRETRAIN_SALT: u64 = 0x5EED_0F4A_123C_7700;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub node: u16,
    pub batch: u64,
    pub combined_error: f64,
    pub target_error: f64,
    pub live_helpers: usize,
}

/// Protocol milestones, for tests and inspection. Not written to disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    DriftFired { node: u16, round: u64, classes: Vec<usize> },
    HelpServed { node: u16, round: u64, target: u16, classes: Vec<usize>, bytes: usize },
    HelpAbandoned { node: u16, round: u64, classes: Vec<usize> },
    HelperBuilt { node: u16, round: u64, source: u16, classes: Vec<usize>, param_hash: [u8; 32] },
    HelperDiscarded { node: u16, round: u64, source: u16, param_hash: [u8; 32], hash_now: [u8; 32] },
    HelperRetained { node: u16, round: u64, source: u16, param_hash: [u8; 32], hash_now: [u8; 32] },
    FlAggregated { round: u64, param_hash: [u8; 32] },
    FlApplied { node: u16, round: u64, param_hash: [u8; 32] },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Sorted by node, then batch.
    pub rows: Vec<MetricRow>,
    pub ledger: ByteLedger,
    pub events: Vec<Event>,
    /// `state_hashes[node][batch]`: parameters plus optimizer state after the batch.
    pub state_hashes: Vec<Vec<[u8; 32]>>,
    pub final_models: Vec<Model>,
}

impl RunResult {
    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn node_rows(&self, node: u16) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.node == node)
    }

    /// Combined error of `node`, indexed by batch.
    pub fn combined_trace(&self, node: u16) -> Vec<f64> {
        self.node_rows(node).map(|r| r.combined_error).collect()
    }
}

/// Sample-weighted mean of member parameter vectors.
pub fn fedavg_round(members: &[&[f64]], sample_counts: &[u64]) -> Result<Vec<f64>> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidArgument("no members to average".into()));
    };
    if members.len() != sample_counts.len() {
        return Err(Error::InvalidArgument("one sample count per member expected".into()));
    }
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::IncompatibleArchitecture {
            expected: first.len() as u64,
            found: members.iter().map(|m| m.len()).find(|&l| l != first.len()).unwrap_or(0) as u64,
        });
    }
    let total: u64 = sample_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("all sample counts are zero".into()));
    }
    let mut out = vec![0.0; first.len()];
    for (m, &n) in members.iter().zip(sample_counts) {
        if n == 0 {
            continue;
        }
        let w = n as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

struct Runner {
    bus: Bus,
    mds: MetadataService,
    inboxes: Vec<Vec<BusMessage>>,
    seq: Vec<u32>,
    mds_seq: u32,
    events: Vec<Event>,
}

impl Runner {
    fn send(&mut self, round: u64, src: Endpoint, dst: Endpoint, kind: MessageKind, payload: Vec<u8>) -> Result<()> {
        let seq = match src {
            Endpoint::Node(n) => &mut self.seq[n as usize],
            Endpoint::Mds => &mut self.mds_seq,
        };
        let msg = BusMessage {
            round,
            src,
            dst,
            seq: *seq,
            kind,
            payload,
        };
        *seq += 1;
        self.bus.send(msg)
    }

    /// Moves delivered node messages into inboxes; returns what the MdS and
    /// the aggregator must handle now.
    fn route(&mut self, federated: bool) -> (Vec<BusMessage>, Vec<BusMessage>) {
        let mut mds = Vec::new();
        let mut fl = Vec::new();
        for (dst, msgs) in self.bus.deliver() {
            match dst {
                Endpoint::Mds => mds.extend(msgs),
                Endpoint::Node(n) => {
                    for m in msgs {
                        if federated && n == 0 && m.kind == MessageKind::FlModelUpdate {
                            fl.push(m);
                        } else {
                            self.inboxes[n as usize].push(m);
                        }
                    }
                }
            }
        }
        (mds, fl)
    }

    fn metadata_service(&mut self, round: u64, msgs: Vec<BusMessage>) -> Result<()> {
        let mut queries = Vec::new();
        for m in msgs {
            match m.kind {
                MessageKind::MetadataUpdate => self.mds.update(NodeMetadata::decode(&m.payload)?),
                MessageKind::HelpQuery => queries.push(m),
                other => {
                    return Err(Error::InvalidArgument(format!("metadata service cannot handle {other}")));
                }
            }
        }
        for q in queries {
            let req = HelpRequest::decode(&q.payload, MessageKind::HelpQuery)?;
            let list = HelperList {
                target_node: req.target_node,
                candidates: self.mds.rank(&req),
            };
            self.send(round, Endpoint::Mds, q.src, MessageKind::HelperList, list.encode())?;
        }
        Ok(())
    }
}

fn aggregate(runner: &mut Runner, round: u64, nodes: &mut [EdgeNode], updates: Vec<BusMessage>) -> Result<()> {
    let own_samples = nodes[0].take_sync_samples() as u64;
    let own: Vec<f64> = nodes[0].model().flat_params().iter().map(|&v| v as f32 as f64).collect();
    let mut decoded = Vec::with_capacity(updates.len());
    for m in &updates {
        decoded.push(FlModelUpdate::decode(&m.payload)?);
    }
    let as_f64: Vec<Vec<f64>> = decoded
        .iter()
        .map(|u| u.params.iter().map(|&v| v as f64).collect())
        .collect();
    let mut members: Vec<&[f64]> = vec![&own];
    members.extend(as_f64.iter().map(Vec::as_slice));
    let mut counts = vec![own_samples];
    counts.extend(decoded.iter().map(|u| u.sample_count as u64));
    let global: Vec<f32> = fedavg_round(&members, &counts)?.iter().map(|&v| v as f32).collect();
    nodes[0].set_params_f32(&global)?;
    runner.events.push(Event::FlAggregated {
        round,
        param_hash: nodes[0].model().state_hash(),
    });
    let payload = FlGlobalModel {
        round: round as u32,
        params: global,
    }
    .encode();
    for n in 1..nodes.len() as u16 {
        runner.send(round, Endpoint::Node(0), Endpoint::Node(n), MessageKind::FlGlobalModel, payload.clone())?;
    }
    Ok(())
}

/// Shared starting point of every node: a seeded initialization, optionally
/// trained on `pretrain_batches` batches drawn uniformly from all classes.
pub fn initial_model(cfg: &ExperimentConfig, dataset: &Arc<Dataset>) -> Result<Model> {
    let mut model = Model::init(&cfg.layers, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ MODEL_SALT))?;
    if cfg.pretrain_batches > 0 {
        let spec = WorkloadSpec {
            pattern: Pattern::Stationary,
            assignment: vec![(0..dataset.class_count()).collect()],
            target_node: 0,
            peer_pattern_weight: 1.0,
            batches: cfg.pretrain_batches,
            batch_size: cfg.batch_size,
            seed: cfg.seed ^ PRETRAIN_SALT,
            shared_stream: false,
        };
        let mut opt = OptimizerState::with_kind(cfg.optimizer, cfg.learning_rate);
        for batch in BatchStream::new(Arc::new(spec), dataset.clone(), 0)? {
            model.train_batch(&batch, &mut opt)?;
        }
    }
    Ok(model)
}

/// Runs every round of the configured experiment. Output depends only on the
/// config; the worker count changes wall time, nothing else.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let dataset = Arc::new(cfg.load_dataset()?);
    let spec = cfg.workload(&dataset)?;
    let initial = initial_model(cfg, &dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(vec![format!("cannot start {} workers: {e}", cfg.workers)]))?;
    let n = cfg.node_count;
    let mut nodes: Vec<EdgeNode> = pool.install(|| {
        (0..n as u16)
            .into_par_iter()
            .map(|id| EdgeNode::new(id, cfg, &initial, spec.clone(), dataset.clone()))
            .collect::<Result<_>>()
    })?;

    let federated = cfg.mode == Mode::Federated;
    let mut runner = Runner {
        bus: Bus::new(n),
        mds: MetadataService::new(),
        inboxes: vec![Vec::new(); n],
        seq: vec![0; n],
        mds_seq: 0,
        events: Vec::new(),
    };
    let mut rows = Vec::with_capacity(n * cfg.batches as usize);
    let mut state_hashes = vec![Vec::with_capacity(cfg.batches as usize); n];

    for round in 0..cfg.batches {
        runner.seq.iter_mut().for_each(|s| *s = 0);
        runner.mds_seq = 0;
        let inboxes = std::mem::replace(&mut runner.inboxes, vec![Vec::new(); n]);
        let outputs: Vec<Result<StepOutput>> = pool.install(|| {
            nodes
                .par_iter_mut()
                .zip(inboxes.into_par_iter())
                .map(|(node, inbox)| node.step(round, inbox))
                .collect()
        });
        for (id, out) in outputs.into_iter().enumerate() {
            let out = out?;
            rows.push(out.row);
            state_hashes[id].push(out.state_hash);
            runner.events.extend(out.events);
            for o in out.outgoing {
                runner.send(round, Endpoint::Node(id as u16), o.dst, o.kind, o.payload)?;
            }
        }
        let (mds_msgs, fl_updates) = runner.route(federated);
        runner.metadata_service(round, mds_msgs)?;
        if federated && (round + 1).is_multiple_of(cfg.fl_every) {
            aggregate(&mut runner, round, &mut nodes, fl_updates)?;
        }
        let (late_mds, _) = runner.route(federated);
        debug_assert!(late_mds.is_empty());
    }
    for node in &nodes {
        runner.events.extend(node.finish(cfg.batches));
    }

    rows.sort_by_key(|r| (r.node, r.batch));
    Ok(RunResult {
        config: cfg.clone(),
        rows,
        ledger: runner.bus.into_ledger(),
        events: runner.events,
        state_hashes,
        final_models: nodes.iter().map(|n| n.model().clone()).collect(),
    })
}
