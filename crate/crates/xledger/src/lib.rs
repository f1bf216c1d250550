//! Deterministic round-based simulator and library for cross-ledger
//! commit protocols over consortia of permissioned blockchains.
//!
//! Three protocols are implemented as pluggable engines over a lock-step
//! synchronous network:
//!
//! * **XLPN22** — a five-phase commit (VOTE-REQ, VOTE-PREP, READY,
//!   COMMIT-REQ, COMMIT) coordinated by a single initiator over a flat
//!   topology where any node can message any node.
//! * **VLDB20** — two-phase commit across ledgers with a witness ledger
//!   as coordinator and one BFT execution per ledger per 2PC phase.
//! * **PODC18** — ring traversal with per-hop timelocks and one BFT
//!   execution per two-party swap.
//!
//! Every message and round is accounted deterministically; the
//! [`complexity`] module reconciles simulated counts against the closed
//! forms, and [`topology`] builds the simplicial complexes induced by each
//! phase's communication graph. Fault injection (crashes, silence, vote
//! corruption, equivocation, selective omission) is a message-level filter
//! in [`fault`], so engines always express honest behavior.

pub mod complexity;
pub mod config;
pub mod fault;
pub mod netsim;
pub mod pbft;
pub mod podc18;
pub mod topology;
pub mod types;
pub mod vldb20;
pub mod workload;
pub mod xlpn22;

pub use config::{ClusterConfig, ConfigError, validate_config};
pub use netsim::{
    ConsortiumState, Protocol, ProtocolEngine, RoundCtx, RoundReport, RunMetrics, SimError,
    Simulation, run_protocol, run_workload,
};
pub use types::{Body, Decision, Envelope, NodeId, Phase, Transaction, Vote};
