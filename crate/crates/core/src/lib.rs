//! Collaborative knowledge transfer between small neural-network models running
//! on simulated edge nodes.
//!
//! A node whose model degrades after a shift in its request stream asks a peer
//! for help. The peer ranks its parameters by the gradient of the requested class
//! logits, ships the top Z percent as a sparse payload, and the requesting node
//! turns that payload into a frozen helper model whose predictions are averaged
//! with its own until it has caught up. Isolated learning and federated
//! averaging run in the same lockstep simulator as baselines, with every message
//! accounted for byte by byte.
//!
//! Module map:
//! - [`nn`]: dense networks, backprop, flat parameter addressing
//! - [`sensitivity`]: per-class sensitivities, top-Z selection, payload wire format
//! - [`helper`]: helper construction, combined prediction, discard policies
//! - [`collab`]: drift detection, metadata service, message bus and ledger
//! - [`workload`]: IDX loading, synthetic data, per-node batch streams
//! - [`harness`]: experiment configuration, runner, FedAvg, summaries, CSV output

pub mod collab;
pub mod error;
pub mod harness;
pub mod helper;
pub mod nn;
pub mod sensitivity;
pub mod workload;
mod wire;

pub use error::{DecodeError, DecodeErrorKind, Error, Result};
