//! Acceptance run: every criterion prints one PASS/FAIL line, and the target
//! fails if any criterion does.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;

use edgekt::collab::{Endpoint, MessageKind};
use edgekt::harness::{
    fedavg_round, initial_model, run_experiment, summarize, write_outputs, Event, ExperimentConfig, Mode, RunResult,
    Summary, LEDGER_FILE, METRICS_FILE,
};
use edgekt::helper::HelperMode;
use edgekt::nn::{Model, OptimizerState, Tensor};
use edgekt::sensitivity::{
    build_payload, select_top_z, ParamMask, Reservoir, SensitivityMap, SensitivitySource, SignificantParamPayload,
    ZPercent,
};
use edgekt::workload::{BatchStream, Pattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Scenario S variants, keyed by a short label.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Variant {
    Isolated,
    Boost,
    Zero,
    /// Peers see this fraction of the drift class's data.
    PeerShare(f64),
    Z(f64),
}

impl Variant {
    fn config(self, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::scenario_s(seed);
        match self {
            Variant::Isolated => cfg.mode = Mode::Isolated,
            Variant::Boost => {}
            Variant::Zero => cfg.helper_mode = HelperMode::Zero,
            Variant::PeerShare(f) => {
                // a peer draws from 6 classes; weight w gives the drift class
                // a share of 6w / (5 + w) relative to full weight
                cfg.peer_pattern_weight = 5.0 * f / (6.0 - f);
            }
            Variant::Z(z) => cfg.z = ZPercent::from_percent(z).unwrap(),
        }
        cfg
    }

    fn key(self) -> String {
        format!("{self:?}")
    }
}

struct Runs {
    results: BTreeMap<(String, u64), (RunResult, Summary)>,
}

impl Runs {
    fn collect(variants: &[Variant]) -> Runs {
        let jobs: Vec<(Variant, u64)> = variants
            .iter()
            .flat_map(|&v| SEEDS.iter().map(move |&s| (v, s)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(v, s)| {
                let r = run_experiment(&v.config(s)).expect("scenario run");
                let summary = summarize(&r);
                ((v.key(), s), (r, summary))
            })
            .collect();
        Runs { results }
    }

    fn get(&self, v: Variant, seed: u64) -> &(RunResult, Summary) {
        &self.results[&(v.key(), seed)]
    }

    fn summary(&self, v: Variant, seed: u64) -> &Summary {
        &self.get(v, seed).1
    }

    fn recovery(&self, v: Variant, seed: u64) -> u64 {
        self.summary(v, seed).recovery.expect("drift configured").recovery_batches
    }

    fn peak(&self, v: Variant, seed: u64) -> f64 {
        self.summary(v, seed).recovery.expect("drift configured").peak_error
    }

    fn mean(&self, f: impl Fn(u64) -> f64) -> f64 {
        SEEDS.iter().map(|&s| f(s)).sum::<f64>() / SEEDS.len() as f64
    }
}

fn logit_sum(model: &Model, inputs: &Tensor, class: usize) -> f64 {
    let out = model.forward(inputs).unwrap();
    (0..out.rows()).map(|r| out.row(r)[class]).sum()
}

fn gradient_oracle() -> Outcome {
    let archs: [&[usize]; 3] = [&[8, 16, 12, 4], &[20, 32, 24, 5], &[10, 40, 30, 3]];
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for (i, widths) in archs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let model = Model::init(widths, &mut rng).unwrap();
        assert!(model.param_count() <= 2000);
        let n = 4;
        let d = widths[0];
        let inputs = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let base = model.flat_params();
        let mut probe = model.clone();
        for class in 0..model.class_count() {
            let analytic = model.class_logit_gradient(&inputs, class).unwrap();
            for j in 0..base.len() {
                let mut p = base.clone();
                p[j] = base[j] + eps;
                probe.set_flat_params(&p).unwrap();
                let up = logit_sum(&probe, &inputs, class);
                p[j] = base[j] - eps;
                probe.set_flat_params(&p).unwrap();
                let down = logit_sum(&probe, &inputs, class);
                let numeric = (up - down) / (2.0 * eps);
                let scale = analytic[j].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic[j] - numeric).abs() / scale);
                checked += 1;
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over {checked} (parameter, class) pairs"),
    )
}

fn brute_force_mask(per_class: &[Vec<f64>], z: ZPercent) -> Vec<bool> {
    let w = per_class[0].len();
    let scores: Vec<f64> = (0..w)
        .map(|j| per_class.iter().map(|v| v[j].abs()).sum::<f64>() / per_class.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..w).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let k = (z.tenths() as usize * w).div_ceil(1000);
    let mut mask = vec![false; w];
    for &j in &order[..k] {
        mask[j] = true;
    }
    mask
}

fn selection_oracle() -> Outcome {
    let zs = [5.0, 20.0, 50.0, 90.0].map(|z| ZPercent::from_percent(z).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut nesting_breaks = 0;
    for case in 0..200 {
        let w = rng.random_range(1..=10_000);
        let k = rng.random_range(1..=3);
        let coarse = case % 2 == 0;
        let per_class: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..w)
                    .map(|_| {
                        if coarse {
                            rng.random_range(-4i32..=4) as f64
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let classes: Vec<usize> = (0..k).collect();
        let mut prev: Option<ParamMask> = None;
        for &z in &zs {
            let payload = select_top_z(&per_class, &classes, z, 0).unwrap();
            let got: Vec<bool> = payload.mask().iter().map(|b| *b).collect();
            if got != brute_force_mask(&per_class, z) {
                mismatches += 1;
            }
            if let Some(p) = &prev {
                if p.iter_ones().any(|j| !payload.mask()[j]) {
                    nesting_breaks += 1;
                }
            }
            prev = Some(payload.mask().clone());
        }
    }
    outcome(
        mismatches == 0 && nesting_breaks == 0,
        format!("200 inputs x 4 Z values: {mismatches} mismatches, {nesting_breaks} nesting breaks"),
    )
}

fn payload_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    for _ in 0..1000 {
        let depth = rng.random_range(2..=4);
        let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=24)).collect();
        let model = Model::init(&widths, &mut rng).unwrap();
        let w = model.param_count();
        let z = ZPercent::from_tenths(rng.random_range(1..=1000)).unwrap();
        let selected = (z.tenths() as usize * w).div_ceil(1000);
        let mut idx: Vec<usize> = (0..w).collect();
        for i in 0..selected {
            let j = rng.random_range(i..w);
            idx.swap(i, j);
        }
        let mut mask = ParamMask::repeat(false, w);
        for &j in &idx[..selected] {
            mask.set(j, true);
        }
        let classes: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..200)).collect();
        let mut distinct = classes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut payload = SignificantParamPayload::from_mask(&classes, z, model.fingerprint(), mask).unwrap();
        payload.fill_values(&model).unwrap();
        let bytes = payload.encode().unwrap();
        let decoded = SignificantParamPayload::decode(&bytes).unwrap();
        let expected_len = 21 + 2 * distinct.len() + w.div_ceil(8) + 4 * selected;
        if decoded != payload || decoded.encode().unwrap() != bytes || bytes.len() != expected_len {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("1000 random payloads, {failures} failures"))
}

fn mode_equivalence() -> Outcome {
    let mut compared = 0;
    let mut differing = 0;
    for &seed in &SEEDS {
        let cfg = ExperimentConfig::scenario_s(seed);
        let dataset = Arc::new(cfg.load_dataset().unwrap());
        let spec = cfg.workload(&dataset).unwrap();
        let mut model = initial_model(&cfg, &dataset).unwrap();
        let mut opt = OptimizerState::with_kind(cfg.optimizer, cfg.learning_rate);
        let mut continuous = SensitivitySource::Continuous(SensitivityMap::for_model(&model));
        let mut on_demand = SensitivitySource::OnDemand(Reservoir::new(1).unwrap());
        for (b, batch) in BatchStream::new(spec, dataset, 1).unwrap().enumerate().take(40) {
            model.train_batch(&batch, &mut opt).unwrap();
            continuous.reset();
            continuous.observe(&model, &batch).unwrap();
            on_demand.observe(&model, &batch).unwrap();
            if b % 8 == 7 {
                let a = build_payload(&continuous, &model, &[5], cfg.z).unwrap().encode().unwrap();
                let o = build_payload(&on_demand, &model, &[5], cfg.z).unwrap().encode().unwrap();
                compared += 1;
                if a != o {
                    differing += 1;
                }
            }
        }
    }
    outcome(
        differing == 0,
        format!("{compared} payloads from the helper node, {differing} differ"),
    )
}

fn adaptability(runs: &Runs) -> Outcome {
    let iso = runs.mean(|s| runs.recovery(Variant::Isolated, s) as f64);
    let collab = runs.mean(|s| runs.recovery(Variant::Boost, s) as f64);
    let iso_peak = runs.mean(|s| runs.peak(Variant::Isolated, s));
    let collab_peak = runs.mean(|s| runs.peak(Variant::Boost, s));
    outcome(
        collab <= iso * 2.0 / 3.0 && collab_peak < iso_peak,
        format!(
            "mean recovery collaborative {collab:.1} vs isolated {iso:.1} ({:.2}x faster); mean peak {collab_peak:.3} vs {iso_peak:.3}",
            iso / collab
        ),
    )
}

fn boost_vs_zero(runs: &Runs) -> Outcome {
    let per_seed: Vec<bool> = SEEDS
        .iter()
        .map(|&s| {
            runs.peak(Variant::Boost, s) <= runs.peak(Variant::Zero, s)
                && runs.recovery(Variant::Boost, s) <= runs.recovery(Variant::Zero, s)
        })
        .collect();
    let wins = per_seed.iter().filter(|&&w| w).count();
    let detail: Vec<String> = SEEDS
        .iter()
        .map(|&s| format!("{}/{}", runs.recovery(Variant::Boost, s), runs.recovery(Variant::Zero, s)))
        .collect();
    outcome(
        wins >= 4,
        format!("BOOST <= ZERO in {wins}/5 seeds (recovery boost/zero: {})", detail.join(" ")),
    )
}

fn data_transfer(runs: &Runs) -> Outcome {
    let mut cfg = ExperimentConfig::scenario_s(1);
    cfg.mode = Mode::Federated;
    cfg.fl_every = 1;
    let fl = run_experiment(&cfg).unwrap();
    let member = fl.ledger.traffic(Endpoint::Node(1)).total();
    let (collab_run, _) = runs.get(Variant::Boost, 1);
    let collab_max = (0..collab_run.config.node_count as u16)
        .map(|n| collab_run.ledger.traffic(Endpoint::Node(n)).total())
        .max()
        .unwrap();
    let dense_update = fl
        .ledger
        .of_kind(MessageKind::FlModelUpdate)
        .map(|r| r.bytes)
        .next()
        .unwrap();
    let meta_max = collab_run
        .ledger
        .of_kind(MessageKind::MetadataUpdate)
        .map(|r| r.bytes)
        .max()
        .unwrap();
    let ratio = member as f64 / collab_max as f64;
    outcome(
        ratio >= 100.0 && meta_max as f64 <= 0.01 * dense_update as f64,
        format!(
            "FL member {member} B vs collaborative max per-node {collab_max} B ({ratio:.0}x); metadata {meta_max} B vs dense update {dense_update} B"
        ),
    )
}

fn payload_economy(runs: &Runs) -> Outcome {
    let model = &runs.get(Variant::Boost, 1).0.final_models[0];
    let w = model.param_count();
    let dense = 4 * w;
    let size = |z: f64| 21 + 2 + w.div_ceil(8) + 4 * (z / 100.0 * w as f64).ceil() as usize;
    let (z50, z20) = (size(50.0), size(20.0));
    let observed: Vec<u64> = runs
        .get(Variant::Boost, 1)
        .0
        .ledger
        .of_kind(MessageKind::KtPayload)
        .map(|r| r.bytes)
        .collect();
    let matches = !observed.is_empty() && observed.iter().all(|&b| b as usize == z50);
    outcome(
        z50 as f64 <= 0.56 * dense as f64 && z20 as f64 <= 0.24 * dense as f64 && matches,
        format!(
            "W={w}, dense {dense} B: Z=50 {z50} B ({:.3}x), Z=20 {z20} B ({:.3}x); ledger KTPayload sizes {observed:?}",
            z50 as f64 / dense as f64,
            z20 as f64 / dense as f64
        ),
    )
}

fn freeze_and_discard(runs: &Runs) -> Outcome {
    let mut hash_checks = 0;
    let mut hash_breaks = 0;
    let mut post_checks = 0;
    let mut post_breaks = 0;
    let mut discards = 0;
    for &seed in &SEEDS {
        let (collab, _) = runs.get(Variant::Boost, seed);
        let (iso, _) = runs.get(Variant::Isolated, seed);
        let mut built = BTreeMap::new();
        for e in &collab.events {
            match e {
                Event::HelperBuilt {
                    node, round, param_hash, ..
                } => {
                    built.insert((*node, *round), *param_hash);
                }
                Event::HelperDiscarded {
                    node,
                    round,
                    param_hash,
                    hash_now,
                    ..
                }
                | Event::HelperRetained {
                    node,
                    round,
                    param_hash,
                    hash_now,
                    ..
                } => {
                    hash_checks += 1;
                    let at_build = built.range((*node, 0)..=(*node, *round)).next_back().map(|(_, h)| *h);
                    if param_hash != hash_now || at_build != Some(*param_hash) {
                        hash_breaks += 1;
                    }
                }
                _ => {}
            }
        }
        let target = collab.config.target_node;
        let last_discard = collab
            .events
            .iter()
            .filter_map(|e| match e {
                Event::HelperDiscarded { node, round, .. } if *node == target => Some(*round),
                _ => None,
            })
            .max();
        let Some(after) = last_discard else { continue };
        discards += 1;
        let c_rows: Vec<_> = collab.node_rows(target).filter(|r| r.batch > after).collect();
        let i_rows: Vec<_> = iso.node_rows(target).filter(|r| r.batch > after).collect();
        for (c, i) in c_rows.iter().zip(&i_rows) {
            post_checks += 1;
            let same_state = collab.state_hashes[target as usize][c.batch as usize]
                == iso.state_hashes[target as usize][i.batch as usize];
            let same_behaviour = c.live_helpers == 0
                && c.combined_error == i.combined_error
                && c.target_error == i.target_error;
            if !(same_state && same_behaviour) {
                post_breaks += 1;
            }
        }
        if c_rows.len() != i_rows.len() {
            post_breaks += 1;
        }
    }
    outcome(
        hash_checks > 0 && hash_breaks == 0 && discards == SEEDS.len() && post_checks > 0 && post_breaks == 0,
        format!(
            "{hash_checks} helper hash checks ({hash_breaks} changed); {discards} discards, {post_checks} post-discard batches compared with a helper-free node ({post_breaks} differ)"
        ),
    )
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let workers = [1, 1, 4];
    for (dir, &w) in dirs.iter().zip(&workers) {
        let mut cfg = ExperimentConfig::scenario_s(3);
        cfg.workers = w;
        write_outputs(&run_experiment(&cfg).unwrap(), dir.path()).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    let mut same = true;
    for f in [METRICS_FILE, LEDGER_FILE] {
        same &= read(&dirs[0], f) == read(&dirs[1], f);
        same &= read(&dirs[0], f) == read(&dirs[2], f);
    }
    outcome(same, "metrics.csv and ledger.csv compared across two 1-worker runs and one 4-worker run")
}

fn fedavg_sanity() -> Outcome {
    let mut cfg = ExperimentConfig::scenario_s(2);
    cfg.mode = Mode::Federated;
    cfg.shared_stream = true;
    cfg.fl_every = 1;
    let run = run_experiment(&cfg).unwrap();
    let mut aggregated = BTreeMap::new();
    let mut applied: BTreeMap<u64, Vec<(u16, [u8; 32])>> = BTreeMap::new();
    for e in &run.events {
        match e {
            Event::FlAggregated { round, param_hash } => {
                aggregated.insert(*round, *param_hash);
            }
            Event::FlApplied {
                node, round, param_hash, ..
            } => applied.entry(*round).or_default().push((*node, *param_hash)),
            _ => {}
        }
    }
    let members = cfg.node_count - 1;
    let mut broadcasts_ok = aggregated.len() as u64 == cfg.batches;
    for (&round, list) in &applied {
        let global = round.checked_sub(1).and_then(|r| aggregated.get(&r));
        broadcasts_ok &= list.len() == members && list.iter().all(|(_, h)| Some(h) == global);
    }
    broadcasts_ok &= applied.len() as u64 == cfg.batches - 1;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..4390).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let counts = [64u64, 64, 32, 128, 7];
    let refs: Vec<&[f64]> = models.iter().map(Vec::as_slice).collect();
    let got = fedavg_round(&refs, &counts).unwrap();
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let oracle_err = (0..got.len())
        .map(|j| {
            let num: f64 = models.iter().zip(&counts).map(|(m, &c)| m[j] * c as f64).sum();
            (got[j] - num / total).abs()
        })
        .fold(0.0, f64::max);

    let mut one = ExperimentConfig::scenario_s(4);
    one.batches = 1;
    one.pattern = Pattern::Stationary;
    one.mode = Mode::Isolated;
    let before = run_experiment(&one).unwrap();
    one.mode = Mode::Federated;
    let after = run_experiment(&one).unwrap();
    let rounded: Vec<Vec<f64>> = before
        .final_models
        .iter()
        .map(|m| m.flat_params().iter().map(|&v| v as f32 as f64).collect())
        .collect();
    let refs: Vec<&[f64]> = rounded.iter().map(Vec::as_slice).collect();
    let n = one.node_count;
    let expect = fedavg_round(&refs, &vec![one.batch_size as u64; n]).unwrap();
    let end_to_end_err = after.final_models[0]
        .flat_params()
        .iter()
        .zip(&expect)
        .map(|(&a, &b)| (a - b as f32 as f64).abs())
        .fold(0.0, f64::max);

    outcome(
        broadcasts_ok && oracle_err <= 1e-12 && end_to_end_err <= 1e-12,
        format!(
            "{} broadcasts applied bit-identically by all {members} members: {broadcasts_ok}; oracle error {oracle_err:.1e}; first in-run round error {end_to_end_err:.1e}",
            applied.len()
        ),
    )
}

fn z_knob(runs: &Runs) -> Outcome {
    let mut ok = 0;
    let mut detail = Vec::new();
    for &s in &SEEDS {
        let kt = |v: Variant| runs.summary(v, s).kind_total(MessageKind::KtPayload);
        let hw = |v: Variant| runs.summary(v, s).helper_window_error;
        let bytes = [kt(Variant::Z(10.0)), kt(Variant::Boost), kt(Variant::Z(90.0))];
        let (e10, e90) = (hw(Variant::Z(10.0)), hw(Variant::Z(90.0)));
        let pass = bytes[0] < bytes[1]
            && bytes[1] < bytes[2]
            && matches!((e10, e90), (Some(a), Some(b)) if b <= a);
        ok += pass as usize;
        detail.push(format!(
            "{:?}B err {:.3}/{:.3}",
            bytes,
            e10.unwrap_or(f64::NAN),
            e90.unwrap_or(f64::NAN)
        ));
    }
    outcome(ok == SEEDS.len(), format!("holds in {ok}/5 seeds: {}", detail.join("; ")))
}

fn helper_quality(runs: &Runs) -> Outcome {
    let shares = [Variant::Boost, Variant::PeerShare(0.5), Variant::PeerShare(0.1)];
    let means: Vec<f64> = shares
        .iter()
        .map(|&v| runs.mean(|s| runs.recovery(v, s) as f64))
        .collect();
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    let beats = SEEDS
        .iter()
        .filter(|&&s| runs.recovery(Variant::PeerShare(0.1), s) < runs.recovery(Variant::Isolated, s))
        .count();
    outcome(
        monotone && beats >= 4,
        format!(
            "mean recovery 100%/50%/10%: {:.1}/{:.1}/{:.1}, isolated {:.1}; 10% helper faster than isolated in {beats}/5 seeds",
            means[0],
            means[1],
            means[2],
            runs.mean(|s| runs.recovery(Variant::Isolated, s) as f64)
        ),
    )
}

fn main() -> ExitCode {
    let runs = Runs::collect(&[
        Variant::Isolated,
        Variant::Boost,
        Variant::Zero,
        Variant::PeerShare(0.5),
        Variant::PeerShare(0.1),
        Variant::Z(10.0),
        Variant::Z(90.0),
    ]);
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient oracle", Box::new(gradient_oracle)),
        ("selection oracle", Box::new(selection_oracle)),
        ("payload round trip and size", Box::new(payload_round_trips)),
        ("continuous vs on-demand", Box::new(mode_equivalence)),
        ("adaptability", Box::new(|| adaptability(&runs))),
        ("BOOST vs ZERO", Box::new(|| boost_vs_zero(&runs))),
        ("data transfer", Box::new(|| data_transfer(&runs))),
        ("payload economy", Box::new(|| payload_economy(&runs))),
        ("freeze and discard", Box::new(|| freeze_and_discard(&runs))),
        ("determinism", Box::new(determinism)),
        ("FedAvg sanity", Box::new(fedavg_sanity)),
        ("Z knob", Box::new(|| z_knob(&runs))),
        ("helper quality", Box::new(|| helper_quality(&runs))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.pass as usize;
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
