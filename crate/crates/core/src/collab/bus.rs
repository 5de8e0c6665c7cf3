//! Lockstep message bus with an append-only byte ledger.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use super::messages::MessageKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Node(u16),
    Mds,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(n) => write!(f, "{n}"),
            Endpoint::Mds => f.write_str("mds"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mds" {
            return Ok(Endpoint::Mds);
        }
        s.parse()
            .map(Endpoint::Node)
            .map_err(|_| Error::InvalidArgument(format!("unknown endpoint {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub round: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Per-sender counter within a round.
    pub seq: u32,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl BusMessage {
    pub fn byte_count(&self) -> usize {
        self.payload.len()
    }

    fn order_key(&self) -> (u64, Endpoint, u32) {
        (self.round, self.src, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub round: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MessageKind,
    pub bytes: u64,
}

/// Bytes sent and received by one endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl Traffic {
    pub fn total(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteLedger {
    records: Vec<LedgerRecord>,
}

impl ByteLedger {
    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn traffic(&self, endpoint: Endpoint) -> Traffic {
        let mut t = Traffic::default();
        for r in &self.records {
            if r.src == endpoint {
                t.bytes_out += r.bytes;
            }
            if r.dst == endpoint {
                t.bytes_in += r.bytes;
            }
        }
        t
    }

    pub fn traffic_by_endpoint(&self) -> BTreeMap<Endpoint, Traffic> {
        let mut out: BTreeMap<Endpoint, Traffic> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.src).or_default().bytes_out += r.bytes;
            out.entry(r.dst).or_default().bytes_in += r.bytes;
        }
        out
    }

    pub fn kind_bytes(&self, kind: MessageKind) -> u64 {
        self.records.iter().filter(|r| r.kind == kind).map(|r| r.bytes).sum()
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &LedgerRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "src", "dst", "kind", "bytes"])?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.src.to_string(),
                r.dst.to_string(),
                r.kind.name().to_string(),
                r.bytes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 5 {
                return Err(Error::InvalidArgument(format!("ledger row has {} fields", row.len())));
            }
            let int = |i: usize| -> Result<u64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad ledger integer {:?}", &row[i])))
            };
            records.push(LedgerRecord {
                round: int(0)?,
                src: row[1].parse()?,
                dst: row[2].parse()?,
                kind: row[3].parse()?,
                bytes: int(4)?,
            });
        }
        Ok(ByteLedger { records })
    }
}

/// Messages sent during a round are held until [`Bus::deliver`] runs at the
/// next boundary, then handed out in `(round, src, seq)` order.
#[derive(Debug, Clone)]
pub struct Bus {
    node_count: usize,
    pending: Vec<BusMessage>,
    ledger: ByteLedger,
}

impl Bus {
    pub fn new(node_count: usize) -> Self {
        Bus {
            node_count,
            pending: Vec::new(),
            ledger: ByteLedger::default(),
        }
    }

    fn known(&self, e: Endpoint) -> bool {
        match e {
            Endpoint::Node(n) => (n as usize) < self.node_count,
            Endpoint::Mds => true,
        }
    }

    pub fn send(&mut self, msg: BusMessage) -> Result<()> {
        for e in [msg.src, msg.dst] {
            if !self.known(e) {
                return Err(Error::Config(vec![format!(
                    "{} message addressed to unknown endpoint {e}",
                    msg.kind
                )]));
            }
        }
        self.ledger.records.push(LedgerRecord {
            round: msg.round,
            src: msg.src,
            dst: msg.dst,
            kind: msg.kind,
            bytes: msg.byte_count() as u64,
        });
        self.pending.push(msg);
        Ok(())
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Drains everything pending, grouped by receiver.
    pub fn deliver(&mut self) -> BTreeMap<Endpoint, Vec<BusMessage>> {
        let mut msgs = std::mem::take(&mut self.pending);
        msgs.sort_by_key(BusMessage::order_key);
        let mut out: BTreeMap<Endpoint, Vec<BusMessage>> = BTreeMap::new();
        for m in msgs {
            out.entry(m.dst).or_default().push(m);
        }
        out
    }

    pub fn ledger(&self) -> &ByteLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> ByteLedger {
        self.ledger
    }
}
