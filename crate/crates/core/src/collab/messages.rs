//! Encodings of every bus message body. All integers and floats little-endian.
//!
//! Apart from the knowledge-transfer payload, which carries its own header,
//! bodies start with `version: u8` and `kind: u8`:
//!
//! ```text
//! MetadataUpdate  node u16 | batch u32 | C u16 | C × (prior f32, error f32) | overall f32
//! HelpQuery       target u16 | z u16 (tenths of %) | n u16 | n × class u16
//! HelpRequest     same layout as HelpQuery
//! HelperList      target u16 | n u16 | n × node u16
//! HelpRefusal     helper u16 | reason u8
//! FLModelUpdate   node u16 | round u32 | samples u32 | W u32 | W × f32
//! FLGlobalModel   round u32 | W u32 | W × f32
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{DecodeError, DecodeErrorKind, Error, Result};
use crate::sensitivity::ZPercent;
use crate::wire::Reader;

pub const MESSAGE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    MetadataUpdate,
    HelpQuery,
    HelperList,
    HelpRequest,
    KtPayload,
    HelpRefusal,
    FlModelUpdate,
    FlGlobalModel,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::MetadataUpdate,
        MessageKind::HelpQuery,
        MessageKind::HelperList,
        MessageKind::HelpRequest,
        MessageKind::KtPayload,
        MessageKind::HelpRefusal,
        MessageKind::FlModelUpdate,
        MessageKind::FlGlobalModel,
    ];

    pub fn code(self) -> u8 {
        match self {
            MessageKind::MetadataUpdate => 1,
            MessageKind::HelpQuery => 2,
            MessageKind::HelperList => 3,
            MessageKind::HelpRequest => 4,
            MessageKind::KtPayload => 5,
            MessageKind::HelpRefusal => 6,
            MessageKind::FlModelUpdate => 7,
            MessageKind::FlGlobalModel => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::MetadataUpdate => "MetadataUpdate",
            MessageKind::HelpQuery => "HelpQuery",
            MessageKind::HelperList => "HelperList",
            MessageKind::HelpRequest => "HelpRequest",
            MessageKind::KtPayload => "KTPayload",
            MessageKind::HelpRefusal => "HelpRefusal",
            MessageKind::FlModelUpdate => "FLModelUpdate",
            MessageKind::FlGlobalModel => "FLGlobalModel",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown message kind {s:?}")))
    }
}

fn header(kind: MessageKind, capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(capacity);
    out.push(MESSAGE_VERSION);
    out.push(kind.code());
    out
}

fn read_header(r: &mut Reader<'_>, kind: MessageKind) -> std::result::Result<(), DecodeError> {
    let v = r.u8()?;
    if v != MESSAGE_VERSION {
        return Err(r.error(0, DecodeErrorKind::UnsupportedVersion(v)));
    }
    let k = r.u8()?;
    if k != kind.code() {
        return Err(r.error(1, DecodeErrorKind::UnexpectedKind(k)));
    }
    Ok(())
}

fn read_unit_f32(r: &mut Reader<'_>) -> std::result::Result<f64, DecodeError> {
    let at = r.offset();
    let v = r.finite_f32_le()?;
    if (0.0..=1.0).contains(&v) {
        Ok(v as f64)
    } else {
        Err(r.error(at, DecodeErrorKind::Invalid("value outside [0, 1]")))
    }
}

/// Statistics a node shares with the metadata service after every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMetadata {
    pub node_id: u16,
    pub batch_id: u32,
    /// Normalized class histogram over the node's recent window.
    pub class_priors: Vec<f64>,
    /// Recent per-class error; 1.0 for classes without recent samples.
    pub class_error: Vec<f64>,
    pub overall_error: f64,
}

impl NodeMetadata {
    pub fn encoded_len(classes: usize) -> usize {
        2 + 2 + 4 + 2 + 8 * classes + 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = self.class_priors.len();
        let mut out = header(MessageKind::MetadataUpdate, Self::encoded_len(c));
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.batch_id.to_le_bytes());
        out.extend_from_slice(&(c as u16).to_le_bytes());
        for (p, e) in self.class_priors.iter().zip(&self.class_error) {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
            out.extend_from_slice(&(*e as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.overall_error as f32).to_le_bytes());
        out
    }

    /// Decodes and renormalizes the priors so they sum to one in `f64`.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, MessageKind::MetadataUpdate)?;
        let node_id = r.u16_le()?;
        let batch_id = r.u32_le()?;
        let at = r.offset();
        let c = r.u16_le()? as usize;
        if c == 0 {
            return Err(r.error(at, DecodeErrorKind::Invalid("zero classes")));
        }
        let mut class_priors = Vec::with_capacity(c.min(r.remaining() / 8));
        let mut class_error = Vec::with_capacity(c.min(r.remaining() / 8));
        let priors_at = r.offset();
        for _ in 0..c {
            class_priors.push(read_unit_f32(&mut r)?);
            class_error.push(read_unit_f32(&mut r)?);
        }
        let overall_error = read_unit_f32(&mut r)?;
        r.finish()?;
        let total: f64 = class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-3 {
            return Err(DecodeError::new(priors_at, DecodeErrorKind::Invalid("priors do not sum to one")));
        }
        class_priors.iter_mut().for_each(|p| *p /= total);
        Ok(NodeMetadata {
            node_id,
            batch_id,
            class_priors,
            class_error,
            overall_error,
        })
    }
}

/// A target node asking for knowledge about `classes`; sent to the metadata
/// service as a query and to a candidate helper as a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelpRequest {
    pub target_node: u16,
    pub classes: Vec<usize>,
    pub z: ZPercent,
}

impl HelpRequest {
    pub fn encoded_len(classes: usize) -> usize {
        2 + 2 + 2 + 2 + 2 * classes
    }

    pub fn encode(&self, kind: MessageKind) -> Vec<u8> {
        debug_assert!(matches!(kind, MessageKind::HelpQuery | MessageKind::HelpRequest));
        let mut out = header(kind, Self::encoded_len(self.classes.len()));
        out.extend_from_slice(&self.target_node.to_le_bytes());
        out.extend_from_slice(&self.z.tenths().to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u16).to_le_bytes());
        for &c in &self.classes {
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], kind: MessageKind) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, kind)?;
        let target_node = r.u16_le()?;
        let at = r.offset();
        let z = ZPercent::from_tenths(r.u16_le()?)
            .map_err(|_| DecodeError::new(at, DecodeErrorKind::Invalid("Z outside 0.1..=100%")))?;
        let at = r.offset();
        let n = r.u16_le()? as usize;
        if n == 0 {
            return Err(r.error(at, DecodeErrorKind::Invalid("empty class set")));
        }
        let mut classes = Vec::with_capacity(n.min(r.remaining() / 2));
        for _ in 0..n {
            classes.push(r.u16_le()? as usize);
        }
        r.finish()?;
        Ok(HelpRequest {
            target_node,
            classes,
            z,
        })
    }
}

/// Ranked helper candidates returned by the metadata service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperList {
    pub target_node: u16,
    pub candidates: Vec<u16>,
}

impl HelperList {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MessageKind::HelperList, 6 + 2 * self.candidates.len());
        out.extend_from_slice(&self.target_node.to_le_bytes());
        out.extend_from_slice(&(self.candidates.len() as u16).to_le_bytes());
        for c in &self.candidates {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, MessageKind::HelperList)?;
        let target_node = r.u16_le()?;
        let n = r.u16_le()? as usize;
        let mut candidates = Vec::with_capacity(n.min(r.remaining() / 2));
        for _ in 0..n {
            candidates.push(r.u16_le()?);
        }
        r.finish()?;
        Ok(HelperList {
            target_node,
            candidates,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefusalReason {
    NoData,
    Incompatible,
    Other,
}

impl RefusalReason {
    fn code(self) -> u8 {
        match self {
            RefusalReason::NoData => 1,
            RefusalReason::Incompatible => 2,
            RefusalReason::Other => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(RefusalReason::NoData),
            2 => Some(RefusalReason::Incompatible),
            3 => Some(RefusalReason::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelpRefusal {
    pub helper_node: u16,
    pub reason: RefusalReason,
}

impl HelpRefusal {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MessageKind::HelpRefusal, 5);
        out.extend_from_slice(&self.helper_node.to_le_bytes());
        out.push(self.reason.code());
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, MessageKind::HelpRefusal)?;
        let helper_node = r.u16_le()?;
        let at = r.offset();
        let reason = RefusalReason::from_code(r.u8()?)
            .ok_or_else(|| DecodeError::new(at, DecodeErrorKind::Invalid("unknown refusal reason")))?;
        r.finish()?;
        Ok(HelpRefusal { helper_node, reason })
    }
}

/// Dense `f32` parameter vector a member sends to the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlModelUpdate {
    pub node_id: u16,
    pub round: u32,
    pub sample_count: u32,
    pub params: Vec<f32>,
}

impl FlModelUpdate {
    pub fn encoded_len(params: usize) -> usize {
        2 + 2 + 4 + 4 + 4 + 4 * params
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MessageKind::FlModelUpdate, Self::encoded_len(self.params.len()));
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.sample_count.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, MessageKind::FlModelUpdate)?;
        let node_id = r.u16_le()?;
        let round = r.u32_le()?;
        let sample_count = r.u32_le()?;
        let params = read_params(&mut r)?;
        r.finish()?;
        Ok(FlModelUpdate {
            node_id,
            round,
            sample_count,
            params,
        })
    }
}

/// Aggregated model broadcast by the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlGlobalModel {
    pub round: u32,
    pub params: Vec<f32>,
}

impl FlGlobalModel {
    pub fn encoded_len(params: usize) -> usize {
        2 + 4 + 4 + 4 * params
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MessageKind::FlGlobalModel, Self::encoded_len(self.params.len()));
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, MessageKind::FlGlobalModel)?;
        let round = r.u32_le()?;
        let params = read_params(&mut r)?;
        r.finish()?;
        Ok(FlGlobalModel { round, params })
    }
}

fn read_params(r: &mut Reader<'_>) -> std::result::Result<Vec<f32>, DecodeError> {
    let w = r.u32_le()? as usize;
    let mut params = Vec::with_capacity(w.min(r.remaining() / 4));
    for _ in 0..w {
        params.push(r.finite_f32_le()?);
    }
    Ok(params)
}
