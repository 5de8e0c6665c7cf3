use edgekt::collab::{Endpoint, MessageKind};
use edgekt::harness::{run_experiment, summarize, Event, ExperimentConfig, Mode};
use edgekt::workload::Pattern;

fn scenario(seed: u64, mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::scenario_s(seed);
    cfg.mode = mode;
    cfg
}

#[test]
fn isolated_run_sends_nothing() {
    let r = run_experiment(&scenario(1, Mode::Isolated)).unwrap();
    assert!(r.ledger.is_empty());
    assert!(r.events.is_empty());
    assert_eq!(r.rows.len(), 5 * 100);
    assert!(r.rows.iter().all(|row| row.combined_error == row.target_error && row.live_helpers == 0));
}

#[test]
fn federated_members_exchange_one_update_and_one_global_per_round() {
    let mut cfg = scenario(2, Mode::Federated);
    cfg.batches = 40;
    cfg.fl_every = 4;
    let r = run_experiment(&cfg).unwrap();
    let rounds: Vec<u64> = (0..cfg.batches).filter(|b| (b + 1) % 4 == 0).collect();
    for member in 1..cfg.node_count as u16 {
        let ups: Vec<u64> = r
            .ledger
            .of_kind(MessageKind::FlModelUpdate)
            .filter(|rec| rec.src == Endpoint::Node(member))
            .inspect(|rec| assert_eq!(rec.dst, Endpoint::Node(0)))
            .map(|rec| rec.round)
            .collect();
        let globals: Vec<u64> = r
            .ledger
            .of_kind(MessageKind::FlGlobalModel)
            .filter(|rec| rec.dst == Endpoint::Node(member))
            .map(|rec| rec.round)
            .collect();
        assert_eq!(ups, rounds);
        assert_eq!(globals, rounds);
    }
    assert_eq!(
        r.ledger.records().iter().filter(|rec| rec.src == Endpoint::Node(0) && rec.dst == Endpoint::Node(0)).count(),
        0
    );
    let kinds: Vec<MessageKind> = r.ledger.records().iter().map(|rec| rec.kind).collect();
    assert!(kinds.iter().all(|k| matches!(k, MessageKind::FlModelUpdate | MessageKind::FlGlobalModel)));
}

#[test]
fn collaborative_run_transfers_one_payload_for_the_new_class() {
    let r = run_experiment(&scenario(1, Mode::Collaborative)).unwrap();
    let fired: Vec<(u64, Vec<usize>)> = r
        .events
        .iter()
        .filter_map(|e| match e {
            Event::DriftFired { node: 0, round, classes } => Some((*round, classes.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(fired.len(), 1);
    let (round, classes) = &fired[0];
    assert_eq!(classes, &vec![5]);
    assert!((35..=40).contains(round));

    let payloads: Vec<_> = r.ledger.of_kind(MessageKind::KtPayload).collect();
    assert_eq!(payloads.len(), 1);
    assert_eq!(payloads[0].dst, Endpoint::Node(0));
    assert!(payloads[0].round >= *round && payloads[0].round <= round + 2 + 2 * edgekt::harness::MAX_RETRIES as u64);

    let built: Vec<_> = r
        .events
        .iter()
        .filter_map(|e| match e {
            Event::HelperBuilt { node: 0, classes, .. } => Some(classes.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(built, vec![vec![5]]);

    // every node reports metadata every batch; only node 0 queries
    assert_eq!(r.ledger.of_kind(MessageKind::MetadataUpdate).count(), 5 * 100);
    let queries: Vec<_> = r.ledger.of_kind(MessageKind::HelpQuery).collect();
    assert_eq!(queries.len(), 1);
    assert_eq!((queries[0].src, queries[0].dst), (Endpoint::Node(0), Endpoint::Mds));
    assert!(r.ledger.of_kind(MessageKind::FlModelUpdate).next().is_none());

    let s = summarize(&r);
    assert!(s.helper_batches > 0);
    assert_eq!(s.kind_total(MessageKind::KtPayload), payloads[0].bytes);
}

#[test]
fn payload_in_the_ledger_matches_the_size_formula() {
    let r = run_experiment(&scenario(4, Mode::Collaborative)).unwrap();
    let w = r.final_models[0].param_count();
    let rec = r.ledger.of_kind(MessageKind::KtPayload).next().unwrap();
    let selected = (500 * w).div_ceil(1000);
    assert_eq!(rec.bytes as usize, 21 + 2 + w.div_ceil(8) + 4 * selected);
}

#[test]
fn without_drift_collaboration_changes_nothing_but_traffic() {
    let mut a = scenario(3, Mode::Collaborative);
    a.pattern = Pattern::Stationary;
    let mut b = a.clone();
    b.mode = Mode::Isolated;
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_eq!(ra.rows, rb.rows);
    assert_eq!(ra.state_hashes, rb.state_hashes);
    assert!(ra.ledger.of_kind(MessageKind::KtPayload).next().is_none());
    assert!(ra.ledger.records().iter().all(|rec| rec.kind == MessageKind::MetadataUpdate));
}

#[test]
fn worker_count_does_not_change_any_mode() {
    for mode in [Mode::Collaborative, Mode::Federated] {
        let mut cfg = scenario(6, mode);
        cfg.batches = 50;
        let one = run_experiment(&cfg).unwrap();
        cfg.workers = 3;
        let three = run_experiment(&cfg).unwrap();
        assert_eq!(one.rows, three.rows);
        assert_eq!(one.ledger, three.ledger);
        assert_eq!(one.events, three.events);
        assert_eq!(one.state_hashes, three.state_hashes);
    }
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut cfg = ExperimentConfig::scenario_s(1);
    cfg.target_node = 9;
    assert!(matches!(run_experiment(&cfg), Err(edgekt::Error::Config(_))));
    let mut cfg = ExperimentConfig::scenario_s(1);
    cfg.workers = 0;
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn ledger_bytes_are_conserved_and_metadata_size_is_fixed() {
    for mode in [Mode::Collaborative, Mode::Federated] {
        let mut cfg = scenario(5, mode);
        cfg.batches = 60;
        let r = run_experiment(&cfg).unwrap();
        let traffic = r.ledger.traffic_by_endpoint();
        let sent: u64 = traffic.values().map(|t| t.bytes_out).sum();
        let received: u64 = traffic.values().map(|t| t.bytes_in).sum();
        assert_eq!(sent, received);
        assert_eq!(sent, r.ledger.records().iter().map(|rec| rec.bytes).sum::<u64>());
    }
    let small = run_experiment(&scenario(5, Mode::Collaborative)).unwrap();
    let mut wide = scenario(5, Mode::Collaborative);
    wide.layers = vec![32, 128, 64, 6];
    let wide = run_experiment(&wide).unwrap();
    let sizes: std::collections::BTreeSet<u64> = small
        .ledger
        .of_kind(MessageKind::MetadataUpdate)
        .chain(wide.ledger.of_kind(MessageKind::MetadataUpdate))
        .map(|rec| rec.bytes)
        .collect();
    assert_eq!(sizes.into_iter().collect::<Vec<_>>(), vec![14 + 8 * 6]);
}
