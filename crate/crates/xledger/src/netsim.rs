//! Lock-step synchronous network simulator.
//!
//! Each `step` is one synchronous round: the engine emits this round's
//! envelopes from state it gathered in earlier rounds, the fault filter
//! decides which survive, and the survivors are handed back for
//! processing. An envelope emitted in round `r` therefore influences
//! emissions no earlier than round `r + 1`, which is the synchrony
//! guarantee. Node handlers inside engines run in ascending NodeId order.

use std::collections::{BTreeMap, BTreeSet};

use crate::complexity::rounds_formula;
use crate::config::ClusterConfig;
use crate::fault::apply_faults;
use crate::types::{Decision, Envelope, NodeId, Phase, Transaction};
use crate::workload;

/// The three cross-ledger protocols plus the intra-ledger BFT engine used
/// standalone in tests and cost checks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Protocol {
    Xlpn22,
    Vldb20,
    Podc18,
    Pbft,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Xlpn22 => "XLPN22",
            Protocol::Vldb20 => "VLDB20",
            Protocol::Podc18 => "PODC18",
            Protocol::Pbft => "PBFT",
        }
    }

    /// The protocols the CLI exposes.
    pub const CROSS_LEDGER: [Protocol; 3] = [Protocol::Xlpn22, Protocol::Vldb20, Protocol::Podc18];
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-run accounting: rounds, messages by phase, per-node decisions and
/// simulated time.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct RunMetrics {
    pub rounds: u64,
    pub messages_total: u64,
    pub messages_by_phase: BTreeMap<Phase, u64>,
    /// Finalization records of the most recent transaction.
    pub decisions: BTreeMap<NodeId, Decision>,
    /// rounds times the configured per-round latency unit
    pub sim_time: u64,
    /// Cumulative node-level finalizations across all transactions.
    pub commit_decisions: u64,
    pub rollback_decisions: u64,
}

impl RunMetrics {
    pub fn phase_count(&self, phase: Phase) -> u64 {
        self.messages_by_phase.get(&phase).copied().unwrap_or(0)
    }
}

/// What one round did: how many envelopes survived the fault filter, how
/// many were dropped, and how many senders were caught equivocating.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoundReport {
    pub round: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub equivocations_detected: u64,
}

/// Round context handed to engines.
///
/// `crashed` is the heartbeat view: nodes whose crash round has passed.
/// Byzantine-but-alive nodes answer heartbeats and are absent from it.
pub struct RoundCtx<'a> {
    /// Global round index across the whole run, starting at 1.
    pub round: u64,
    /// Round index within the current transaction, starting at 1.
    pub txn_round: u64,
    pub crashed: &'a BTreeSet<NodeId>,
}

/// Mutable consortium state carried across transactions: per-ledger view
/// numbers and the current initiator.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ConsortiumState {
    pub views: Vec<u64>,
    pub initiator: NodeId,
}

impl ConsortiumState {
    pub fn new(cfg: &ClusterConfig) -> Self {
        ConsortiumState {
            views: vec![0; cfg.k as usize],
            initiator: NodeId::new(0, 0),
        }
    }

    /// Current primary of a ledger: rank `view mod n`.
    pub fn primary_of(&self, ledger: u32, n: u32) -> NodeId {
        NodeId::new(ledger, (self.views[ledger as usize] % n as u64) as u32)
    }
}

/// Errors raised by protocol engines.
#[derive(Clone, PartialEq, Eq, Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("initiator {0} failed before emitting")]
    InitiatorFailed(NodeId),
    #[error("all {0} ledger primaries are unavailable, no initiator can be elected")]
    NoPrimaryAvailable(u32),
    #[error("ledger {ledger} has fewer than 2f+1 live nodes, view change cannot recover it")]
    UnrecoverableLedger { ledger: u32 },
    #[error("witness coordinator (ledger {ledger}) is unavailable at round {round}; 2PC blocks")]
    CoordinatorBlocked { ledger: u32, round: u64 },
}

/// Errors raised by the simulator.
#[derive(Clone, PartialEq, Eq, Debug, thiserror::Error)]
pub enum SimError {
    #[error("round {round} produced no messages and no progress; the engine is stalled")]
    Stalled { round: u64 },
    #[error("transaction {txn} used {rounds} rounds, exceeding the liveness budget of {budget}")]
    LivenessViolation { txn: u64, rounds: u64, budget: u64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A pluggable state machine advanced one synchronous round at a time.
///
/// `emit` produces the round's outbound envelopes from state gathered in
/// earlier rounds; `deliver` ingests whatever survived the fault filter.
/// The simulator never lets an emission influence the same round's
/// delivery processing, which realizes the send-in-r / act-in-r+1 model.
pub trait ProtocolEngine {
    fn protocol(&self) -> Protocol;
    fn emit(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError>;
    fn deliver(&mut self, ctx: &RoundCtx<'_>, delivered: &[Envelope]) -> Result<(), ProtocolError>;
    fn done(&self) -> bool;
    /// Coarse state label used by the stall detector.
    fn phase_label(&self) -> &'static str;
    fn decisions(&self) -> &BTreeMap<NodeId, Decision>;
    fn consortium(&self) -> &ConsortiumState;
}

/// Deterministic lock-step simulator for one run (one or more transactions
/// executed sequentially by fresh engines).
pub struct Simulation {
    cfg: ClusterConfig,
    /// The fault plan with `initiator_fails_at` resolved into a crash of
    /// the node that is initiator when the run starts.
    plan: crate::fault::FaultPlan,
    round: u64,
    txn_round: u64,
    metrics: RunMetrics,
    reports: Vec<RoundReport>,
    trace: Option<Vec<Envelope>>,
    latency_unit: u64,
    crash_rounds: BTreeMap<NodeId, u64>,
}

impl Simulation {
    pub fn new(cfg: ClusterConfig) -> Self {
        let mut plan = cfg.fault_plan.clone();
        if let Some(round) = plan.initiator_fails_at.take() {
            let initial = ConsortiumState::new(&cfg).initiator;
            plan = plan.with_crash(initial, round);
        }
        let mut crash_rounds: BTreeMap<NodeId, u64> = BTreeMap::new();
        for c in &plan.crash_at {
            let entry = crash_rounds.entry(c.node).or_insert(c.round);
            *entry = (*entry).min(c.round);
        }
        Simulation {
            cfg,
            plan,
            round: 0,
            txn_round: 0,
            metrics: RunMetrics::default(),
            reports: Vec::new(),
            trace: None,
            latency_unit: 1,
            crash_rounds,
        }
    }

    /// Keep the full delivered-envelope trace for topology extraction and
    /// trace dumps.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Simulated time advances by this many units per round (default 1).
    pub fn with_latency_unit(mut self, unit: u64) -> Self {
        self.latency_unit = unit;
        self
    }

    pub fn cfg(&self) -> &ClusterConfig {
        &self.cfg
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn trace(&self) -> Option<&[Envelope]> {
        self.trace.as_deref()
    }

    /// One line per delivered envelope, tab-separated, stable order
    /// (round, then src, dst, phase, body).
    pub fn dump_trace(&self) -> String {
        let mut envelopes: Vec<&Envelope> = self.trace.as_deref().unwrap_or(&[]).iter().collect();
        envelopes.sort_by_key(|e| (e.round, e.src, e.dst, e.phase, e.body));
        let mut out = String::new();
        for env in envelopes {
            out.push_str(&env.trace_line());
            out.push('\n');
        }
        out
    }

    fn crashed_as_of(&self, round: u64) -> BTreeSet<NodeId> {
        self.crash_rounds
            .iter()
            .filter(|(_, &r)| r <= round)
            .map(|(&node, _)| node)
            .collect()
    }

    /// Advance one synchronous round.
    pub fn step(&mut self, engine: &mut dyn ProtocolEngine) -> Result<RoundReport, SimError> {
        let round = self.round + 1;
        let txn_round = self.txn_round + 1;
        let crashed = self.crashed_as_of(round);
        let ctx = RoundCtx { round, txn_round, crashed: &crashed };

        let label_before = engine.phase_label();
        let outbound = engine.emit(&ctx)?;
        debug_assert!(outbound.iter().all(|e| e.round == round), "envelope round mismatch");
        let emitted = outbound.len() as u64;
        let (delivered, dropped) = apply_faults(outbound, &self.plan, round);

        self.round = round;
        self.txn_round = txn_round;
        self.metrics.rounds += 1;
        for env in &delivered {
            self.metrics.messages_total += 1;
            *self.metrics.messages_by_phase.entry(env.phase).or_insert(0) += 1;
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.extend(delivered.iter().cloned());
        }

        let report = RoundReport {
            round,
            delivered: delivered.len() as u64,
            dropped: dropped.len() as u64,
            equivocations_detected: count_equivocations(&delivered),
        };

        engine.deliver(&ctx, &delivered)?;

        if emitted == 0
            && delivered.is_empty()
            && !engine.done()
            && engine.phase_label() == label_before
        {
            return Err(SimError::Stalled { round });
        }

        self.reports.push(report.clone());
        Ok(report)
    }

    /// Run one engine to completion under the per-transaction liveness
    /// budget `rounds_formula(protocol, k) + 3`.
    pub fn run_transaction(
        &mut self,
        txn_id: u64,
        engine: &mut dyn ProtocolEngine,
    ) -> Result<(), SimError> {
        self.txn_round = 0;
        // standalone consensus absorbs up to f successive view changes;
        // the cross-ledger protocols get the flat three-round allowance
        let extra = match engine.protocol() {
            Protocol::Pbft => 3 + 2 * self.cfg.f as u64,
            _ => 3,
        };
        let budget = rounds_formula(engine.protocol(), self.cfg.k as u64) + extra;
        while !engine.done() {
            self.step(engine)?;
            if self.txn_round > budget {
                return Err(SimError::LivenessViolation {
                    txn: txn_id,
                    rounds: self.txn_round,
                    budget,
                });
            }
        }
        self.metrics.decisions = engine.decisions().clone();
        for d in engine.decisions().values() {
            match d.value {
                crate::types::Vote::Commit => self.metrics.commit_decisions += 1,
                crate::types::Vote::Rollback => self.metrics.rollback_decisions += 1,
            }
        }
        self.metrics.sim_time = self.metrics.rounds * self.latency_unit;
        Ok(())
    }

    /// Final metrics snapshot.
    pub fn into_metrics(mut self) -> RunMetrics {
        self.metrics.sim_time = self.metrics.rounds * self.latency_unit;
        self.metrics
    }
}

fn count_equivocations(delivered: &[Envelope]) -> u64 {
    let mut bodies: BTreeMap<(NodeId, Phase), BTreeSet<crate::types::Body>> = BTreeMap::new();
    for env in delivered {
        bodies.entry((env.src, env.phase)).or_default().insert(env.body);
    }
    bodies.values().filter(|set| set.len() > 1).count() as u64
}

/// Build the engine for one transaction under `protocol`.
pub fn build_engine(
    protocol: Protocol,
    cfg: &ClusterConfig,
    consortium: ConsortiumState,
    txn: &Transaction,
) -> Box<dyn ProtocolEngine> {
    match protocol {
        Protocol::Xlpn22 => Box::new(crate::xlpn22::Xlpn22Engine::new(cfg.clone(), consortium, txn)),
        Protocol::Vldb20 => Box::new(crate::vldb20::Vldb20Engine::new(cfg.clone(), consortium, txn)),
        Protocol::Podc18 => Box::new(crate::podc18::Podc18Engine::new(cfg.clone(), consortium, txn)),
        Protocol::Pbft => Box::new(crate::pbft::PbftEngine::standalone(
            cfg.clone(),
            consortium,
            0,
            crate::types::Vote::Commit,
        )),
    }
}

/// Process `txns` sequentially, one protocol instance at a time, and
/// return the aggregate metrics. Deterministic for fixed inputs.
pub fn run_protocol(
    protocol: Protocol,
    cfg: &ClusterConfig,
    txns: &[Transaction],
) -> Result<RunMetrics, SimError> {
    let mut sim = Simulation::new(cfg.clone());
    let mut consortium = ConsortiumState::new(cfg);
    for txn in txns {
        let mut engine = build_engine(protocol, cfg, consortium.clone(), txn);
        sim.run_transaction(txn.id, engine.as_mut())?;
        consortium = engine.consortium().clone();
    }
    Ok(sim.into_metrics())
}

/// Convenience wrapper: run `txn_count` all-ledger transactions.
pub fn run_workload(
    protocol: Protocol,
    cfg: &ClusterConfig,
    txn_count: u64,
) -> Result<RunMetrics, SimError> {
    let spec = workload::WorkloadSpec {
        txn_count,
        k: cfg.k,
        ledgers_per_txn: workload::LedgersPerTxn::All,
        seed: cfg.seed,
    };
    let txns = workload::generate(&spec).expect("workload spec derived from a valid config");
    run_protocol(protocol, cfg, &txns)
}
