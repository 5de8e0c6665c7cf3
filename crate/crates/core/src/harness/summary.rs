use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{ExperimentConfig, Mode};
use super::run::{MetricRow, RunResult};
use crate::collab::{ByteLedger, Endpoint, MessageKind, Traffic};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// How a node's combined error reacted to a drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub pre_drift_error: f64,
    pub peak_error: f64,
    /// Batches from the drift until the 3-batch trailing mean is back within
    /// tolerance. When that never happens this is the number of post-drift
    /// batches and `recovered` is false.
    pub recovery_batches: u64,
    pub recovered: bool,
}

/// `None` when there is no pre-drift history or no post-drift batch.
pub fn recovery_stats(trace: &[f64], drift_at: u64, pre_window: usize, tolerance: f64) -> Option<Recovery> {
    let t = drift_at as usize;
    if t == 0 || t >= trace.len() || pre_window == 0 {
        return None;
    }
    let pre = &trace[t.saturating_sub(pre_window)..t];
    let pre_drift_error = pre.iter().sum::<f64>() / pre.len() as f64;
    let peak_error = trace[t..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let limit = pre_drift_error + tolerance;
    let hit = (t..trace.len()).find(|&b| {
        let w = &trace[b.saturating_sub(2)..=b];
        w.iter().sum::<f64>() / w.len() as f64 <= limit
    });
    Some(Recovery {
        pre_drift_error,
        peak_error,
        recovery_batches: (hit.unwrap_or(trace.len()) - t) as u64,
        recovered: hit.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: Mode,
    pub target_node: u16,
    pub drift_batch: Option<u64>,
    pub recovery: Option<Recovery>,
    /// Mean combined error of the target over batches served with a helper.
    pub helper_window_error: Option<f64>,
    pub helper_batches: u64,
    pub traffic: BTreeMap<Endpoint, Traffic>,
    pub total_bytes: u64,
    pub kind_bytes: BTreeMap<MessageKind, u64>,
    pub messages: usize,
}

impl Summary {
    pub fn node_traffic(&self, node: u16) -> Traffic {
        self.traffic.get(&Endpoint::Node(node)).copied().unwrap_or_default()
    }

    pub fn kind_total(&self, kind: MessageKind) -> u64 {
        self.kind_bytes.get(&kind).copied().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode.name());
        let _ = writeln!(s, "target_node: {}", self.target_node);
        match (self.drift_batch, &self.recovery) {
            (Some(t), Some(r)) => {
                let _ = writeln!(s, "drift_batch: {t}");
                let _ = writeln!(s, "pre_drift_error: {:.6}", r.pre_drift_error);
                let _ = writeln!(s, "peak_error: {:.6}", r.peak_error);
                let _ = writeln!(s, "recovery_batches: {}", r.recovery_batches);
                let _ = writeln!(s, "recovered: {}", r.recovered);
            }
            (Some(t), None) => {
                let _ = writeln!(s, "drift_batch: {t}");
            }
            _ => {}
        }
        let _ = writeln!(s, "helper_batches: {}", self.helper_batches);
        if let Some(e) = self.helper_window_error {
            let _ = writeln!(s, "helper_window_error: {e:.6}");
        }
        let _ = writeln!(s, "messages: {}", self.messages);
        let _ = writeln!(s, "total_bytes: {}", self.total_bytes);
        for (k, b) in &self.kind_bytes {
            let _ = writeln!(s, "bytes[{k}]: {b}");
        }
        for (e, t) in &self.traffic {
            let _ = writeln!(s, "traffic[{e}]: in={} out={}", t.bytes_in, t.bytes_out);
        }
        s
    }
}

/// Summary of any run given its config, metric rows and ledger.
pub fn summarize_parts(cfg: &ExperimentConfig, rows: &[MetricRow], ledger: &ByteLedger) -> Summary {
    let target = cfg.target_node;
    let mut target_rows: Vec<&MetricRow> = rows.iter().filter(|r| r.node == target).collect();
    target_rows.sort_by_key(|r| r.batch);
    let trace: Vec<f64> = target_rows.iter().map(|r| r.combined_error).collect();
    let drift_batch = cfg.pattern.onset();
    let recovery =
        drift_batch.and_then(|t| recovery_stats(&trace, t, cfg.pre_drift_window, cfg.recovery_tolerance));
    let helped: Vec<f64> = target_rows
        .iter()
        .filter(|r| r.live_helpers > 0)
        .map(|r| r.combined_error)
        .collect();
    let mut kind_bytes = BTreeMap::new();
    for r in ledger.records() {
        *kind_bytes.entry(r.kind).or_insert(0) += r.bytes;
    }
    Summary {
        mode: cfg.mode,
        target_node: target,
        drift_batch,
        recovery,
        helper_window_error: (!helped.is_empty()).then(|| helped.iter().sum::<f64>() / helped.len() as f64),
        helper_batches: helped.len() as u64,
        traffic: ledger.traffic_by_endpoint(),
        total_bytes: ledger.records().iter().map(|r| r.bytes).sum(),
        kind_bytes,
        messages: ledger.records().len(),
    }
}

pub fn summarize(result: &RunResult) -> Summary {
    summarize_parts(&result.config, &result.rows, &result.ledger)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "batch", "combined_error", "target_error", "live_helpers"])?;
    for r in rows {
        w.write_record([
            r.node.to_string(),
            r.batch.to_string(),
            r.combined_error.to_string(),
            r.target_error.to_string(),
            r.live_helpers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::InvalidArgument(format!("metrics row has {} fields", rec.len())));
        }
        let bad = |i: usize| Error::InvalidArgument(format!("bad metrics field {:?}", &rec[i]));
        rows.push(MetricRow {
            node: rec[0].parse().map_err(|_| bad(0))?,
            batch: rec[1].parse().map_err(|_| bad(1))?,
            combined_error: rec[2].parse().map_err(|_| bad(2))?,
            target_error: rec[3].parse().map_err(|_| bad(3))?,
            live_helpers: rec[4].parse().map_err(|_| bad(4))?,
        });
    }
    Ok(rows)
}

/// Writes metrics, ledger, config and summary into `dir`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(&result.rows, BufWriter::new(File::create(dir.join(METRICS_FILE))?))?;
    result.ledger.write_csv(BufWriter::new(File::create(dir.join(LEDGER_FILE))?))?;
    std::fs::write(dir.join(CONFIG_FILE), result.config.to_text())?;
    let summary = summarize(result);
    std::fs::write(dir.join(SUMMARY_FILE), summary.to_text())?;
    Ok(summary)
}

/// Recomputes the summary of a finished run from its output directory.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let cfg = ExperimentConfig::parse(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let rows = read_metrics_csv(BufReader::new(File::open(dir.join(METRICS_FILE))?))?;
    let ledger = ByteLedger::read_csv(BufReader::new(File::open(dir.join(LEDGER_FILE))?))?;
    Ok(summarize_parts(&cfg, &rows, &ledger))
}
