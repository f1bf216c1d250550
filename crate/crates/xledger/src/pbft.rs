//! Intra-ledger four-phase BFT (PRE-PREPARE, PREPARE, COMMIT, REPLY) with
//! a two-round view change, used as the consensus unit inside both
//! baseline protocols and runnable standalone.
//!
//! Counting convention: PRE-PREPARE is the primary to all n ledger nodes
//! including itself (n messages); PREPARE and COMMIT are every node to
//! every node including itself (n^2 each); REPLY is every node to the
//! requester (n). A failure-free execution therefore emits exactly
//! `n + n^2 + n^2 + n = 2n^2 + 2n` envelopes over 4 rounds.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::ClusterConfig;
use crate::netsim::{ConsortiumState, Protocol, ProtocolEngine, ProtocolError, RoundCtx, RunMetrics, SimError, Simulation};
use crate::types::{Body, Decision, Envelope, NodeId, Phase, Vote, quorum_size};

/// Closed-form message cost of one failure-free execution: `2n^2 + 2n`.
pub fn pbft_message_count(n: u64) -> u64 {
    2 * n * n + 2 * n
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Stage {
    SendPrePrepare,
    SendPrepare,
    SendCommit,
    SendReply,
    SendViewChange,
    SendNewView,
    Complete,
}

/// One consensus instance over a single ledger, advanced round by round by
/// its owner. The owner routes this ledger's envelopes into `deliver`.
pub struct PbftInstance {
    ledger: u32,
    k: u32,
    n: u32,
    f: u32,
    view: u64,
    proposal: Vote,
    stage: Stage,
    /// proposal value each node received in PRE-PREPARE
    received_proposal: BTreeMap<NodeId, Vote>,
    prepare_attest: BTreeMap<NodeId, BTreeMap<Vote, BTreeSet<NodeId>>>,
    commit_attest: BTreeMap<NodeId, BTreeMap<Vote, BTreeSet<NodeId>>>,
    prepared: BTreeMap<NodeId, Vote>,
    decided: BTreeMap<NodeId, Decision>,
    view_changed: bool,
}

impl PbftInstance {
    pub fn new(cfg: &ClusterConfig, ledger: u32, view: u64, proposal: Vote) -> Self {
        PbftInstance {
            ledger,
            k: cfg.k,
            n: cfg.n,
            f: cfg.f,
            view,
            proposal,
            stage: Stage::SendPrePrepare,
            received_proposal: BTreeMap::new(),
            prepare_attest: BTreeMap::new(),
            commit_attest: BTreeMap::new(),
            prepared: BTreeMap::new(),
            decided: BTreeMap::new(),
            view_changed: false,
        }
    }

    pub fn ledger(&self) -> u32 {
        self.ledger
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn view_changed(&self) -> bool {
        self.view_changed
    }

    /// Current primary: rank `view mod n`.
    pub fn primary(&self) -> NodeId {
        NodeId::new(self.ledger, (self.view % self.n as u64) as u32)
    }

    pub fn complete(&self) -> bool {
        self.stage == Stage::Complete
    }

    pub fn decided(&self) -> &BTreeMap<NodeId, Decision> {
        &self.decided
    }

    /// The value the ledger agreed on, once nodes have decided. Ties (only
    /// reachable over budget) break toward COMMIT via the vote order.
    pub fn agreed(&self) -> Option<Vote> {
        let mut counts: BTreeMap<Vote, usize> = BTreeMap::new();
        for d in self.decided.values() {
            *counts.entry(d.value).or_insert(0) += 1;
        }
        counts.into_iter().max_by_key(|&(v, c)| (c, v)).map(|(v, _)| v)
    }

    pub fn stage_label(&self) -> &'static str {
        match self.stage {
            Stage::SendPrePrepare => "pbft:pre-prepare",
            Stage::SendPrepare => "pbft:prepare",
            Stage::SendCommit => "pbft:commit",
            Stage::SendReply => "pbft:reply",
            Stage::SendViewChange => "pbft:view-change",
            Stage::SendNewView => "pbft:new-view",
            Stage::Complete => "pbft:complete",
        }
    }

    fn ledger_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n).map(move |r| NodeId::new(self.ledger, r))
    }

    fn quorum(&self) -> usize {
        quorum_size(self.f) as usize
    }

    pub fn emit(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError> {
        let mut out = Vec::new();
        match self.stage {
            Stage::SendPrePrepare => {
                if ctx.crashed.contains(&self.primary()) {
                    self.begin_view_change(ctx)?;
                    return self.emit_view_change(ctx);
                }
                let primary = self.primary();
                for dst in self.ledger_nodes() {
                    out.push(Envelope::new(
                        ctx.round,
                        primary,
                        dst,
                        Phase::PrePrepare,
                        Body::Proposal(self.proposal),
                    ));
                }
            }
            Stage::SendPrepare => {
                for src in self.ledger_nodes() {
                    let Some(&v) = self.received_proposal.get(&src) else { continue };
                    for dst in self.ledger_nodes() {
                        out.push(Envelope::new(ctx.round, src, dst, Phase::Prepare, Body::Vote(v)));
                    }
                }
            }
            Stage::SendCommit => {
                for src in self.ledger_nodes() {
                    let Some(&v) = self.prepared.get(&src) else { continue };
                    for dst in self.ledger_nodes() {
                        out.push(Envelope::new(ctx.round, src, dst, Phase::Commit, Body::Vote(v)));
                    }
                }
            }
            Stage::SendReply => {
                let requester = self.primary();
                let quorum = self.quorum();
                for src in self.ledger_nodes().collect::<Vec<_>>() {
                    let attest = self.commit_attest.get(&src);
                    let Some((v, backing)) = attest.and_then(|m| {
                        m.iter()
                            .map(|(&v, s)| (v, s.len()))
                            .filter(|&(_, c)| c >= quorum)
                            .max_by_key(|&(v, c)| (c, v))
                    }) else {
                        continue;
                    };
                    if !ctx.crashed.contains(&src) {
                        self.decided.insert(src, Decision { value: v, backing: backing as u32 });
                    }
                    out.push(Envelope::new(ctx.round, src, requester, Phase::Reply, Body::Decision(v)));
                }
            }
            Stage::SendViewChange => {
                self.begin_view_change(ctx)?;
                return self.emit_view_change(ctx);
            }
            Stage::SendNewView => {
                let primary = self.primary();
                for ledger in 0..self.k {
                    for rank in 0..self.n {
                        out.push(Envelope::new(
                            ctx.round,
                            primary,
                            NodeId::new(ledger, rank),
                            Phase::NewView,
                            Body::NewView(self.view),
                        ));
                    }
                }
            }
            Stage::Complete => {}
        }
        Ok(out)
    }

    fn begin_view_change(&mut self, ctx: &RoundCtx<'_>) -> Result<(), ProtocolError> {
        let live = self
            .ledger_nodes()
            .filter(|node| !ctx.crashed.contains(node))
            .count();
        if live < self.quorum() {
            return Err(ProtocolError::UnrecoverableLedger { ledger: self.ledger });
        }
        self.view += 1;
        self.view_changed = true;
        self.stage = Stage::SendViewChange;
        Ok(())
    }

    fn emit_view_change(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError> {
        let new_primary = self.primary();
        Ok(self
            .ledger_nodes()
            .map(|src| {
                Envelope::new(ctx.round, src, new_primary, Phase::ViewChange, Body::ViewChange(self.view))
            })
            .collect())
    }

    pub fn deliver(&mut self, _ctx: &RoundCtx<'_>, delivered: &[Envelope]) {
        match self.stage {
            Stage::SendPrePrepare => {
                let mut any = false;
                for env in delivered {
                    if env.phase == Phase::PrePrepare {
                        if let Body::Proposal(v) = env.body {
                            self.received_proposal.insert(env.dst, v);
                            any = true;
                        }
                    }
                }
                // a silent (non-crashed) primary is detected by the missing
                // broadcast and triggers the same view change
                self.stage = if any { Stage::SendPrepare } else { Stage::SendViewChange };
            }
            Stage::SendPrepare => {
                for env in delivered {
                    if env.phase == Phase::Prepare {
                        if let Body::Vote(v) = env.body {
                            self.prepare_attest
                                .entry(env.dst)
                                .or_default()
                                .entry(v)
                                .or_default()
                                .insert(env.src);
                        }
                    }
                }
                for node in self.ledger_nodes().collect::<Vec<_>>() {
                    let Some(m) = self.prepare_attest.get(&node) else { continue };
                    if let Some((&v, _)) = m
                        .iter()
                        .filter(|(_, s)| s.len() >= self.quorum())
                        .max_by_key(|(&v, s)| (s.len(), v))
                    {
                        self.prepared.insert(node, v);
                    }
                }
                self.stage = Stage::SendCommit;
            }
            Stage::SendCommit => {
                for env in delivered {
                    if env.phase == Phase::Commit {
                        if let Body::Vote(v) = env.body {
                            self.commit_attest
                                .entry(env.dst)
                                .or_default()
                                .entry(v)
                                .or_default()
                                .insert(env.src);
                        }
                    }
                }
                self.stage = Stage::SendReply;
            }
            Stage::SendReply => {
                self.stage = Stage::Complete;
            }
            Stage::SendViewChange => {
                self.stage = Stage::SendNewView;
            }
            Stage::SendNewView => {
                let arrived = delivered.iter().any(|e| e.phase == Phase::NewView);
                if arrived {
                    // restart the protocol under the new primary
                    self.received_proposal.clear();
                    self.prepare_attest.clear();
                    self.commit_attest.clear();
                    self.prepared.clear();
                    self.stage = Stage::SendPrePrepare;
                } else {
                    // the new primary is dead as well; run another view change
                    self.stage = Stage::SendViewChange;
                }
            }
            Stage::Complete => {}
        }
    }
}

/// Two-round consortium view change for a set of ledgers whose primaries
/// are dead: a VIEW-CHANGE round inside each affected ledger, then a
/// NEW-VIEW broadcast from each new primary to the whole consortium so all
/// ledgers learn the new view numbers. Affected ledgers repeat the pair of
/// rounds until a live primary emerges.
pub struct ConsortiumRepair {
    pending: BTreeSet<u32>,
    in_new_view_round: bool,
}

impl ConsortiumRepair {
    /// Repair plan for every ledger whose current primary is crashed,
    /// optionally skipping one ledger.
    pub fn detect(
        cfg: &ClusterConfig,
        consortium: &ConsortiumState,
        crashed: &BTreeSet<NodeId>,
        skip: Option<u32>,
    ) -> Self {
        let pending = (0..cfg.k)
            .filter(|&l| Some(l) != skip)
            .filter(|&l| crashed.contains(&consortium.primary_of(l, cfg.n)))
            .collect();
        ConsortiumRepair { pending, in_new_view_round: false }
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_empty()
    }

    fn next_primary(cfg: &ClusterConfig, consortium: &ConsortiumState, ledger: u32) -> NodeId {
        let next_view = consortium.views[ledger as usize] + 1;
        NodeId::new(ledger, (next_view % cfg.n as u64) as u32)
    }

    pub fn emit(
        &mut self,
        cfg: &ClusterConfig,
        consortium: &ConsortiumState,
        ctx: &RoundCtx<'_>,
    ) -> Result<Vec<Envelope>, ProtocolError> {
        let mut out = Vec::new();
        for &ledger in &self.pending {
            let next_view = consortium.views[ledger as usize] + 1;
            if self.in_new_view_round {
                let new_primary = Self::next_primary(cfg, consortium, ledger);
                for dst in cfg.nodes() {
                    out.push(Envelope::new(ctx.round, new_primary, dst, Phase::NewView, Body::NewView(next_view)));
                }
            } else {
                let live = cfg
                    .ledger_nodes(ledger)
                    .filter(|n| !ctx.crashed.contains(n))
                    .count();
                if live < quorum_size(cfg.f) as usize {
                    return Err(ProtocolError::UnrecoverableLedger { ledger });
                }
                let new_primary = Self::next_primary(cfg, consortium, ledger);
                for src in cfg.ledger_nodes(ledger) {
                    out.push(Envelope::new(ctx.round, src, new_primary, Phase::ViewChange, Body::ViewChange(next_view)));
                }
            }
        }
        Ok(out)
    }

    pub fn deliver(&mut self, consortium: &mut ConsortiumState, delivered: &[Envelope]) {
        if !self.in_new_view_round {
            self.in_new_view_round = true;
            return;
        }
        let mut still_pending = BTreeSet::new();
        for &ledger in &self.pending {
            let next_view = consortium.views[ledger as usize] + 1;
            let arrived = delivered.iter().any(|e| {
                e.phase == Phase::NewView && e.src.ledger == ledger && e.body == Body::NewView(next_view)
            });
            consortium.views[ledger as usize] = next_view;
            if !arrived {
                still_pending.insert(ledger);
            }
        }
        self.pending = still_pending;
        self.in_new_view_round = false;
    }
}

/// Standalone engine wrapping a single instance, for direct execution of
/// one consensus round-trip on one ledger.
pub struct PbftEngine {
    consortium: ConsortiumState,
    instance: PbftInstance,
    decisions: BTreeMap<NodeId, Decision>,
}

impl PbftEngine {
    pub fn standalone(
        cfg: ClusterConfig,
        consortium: ConsortiumState,
        ledger: u32,
        proposal: Vote,
    ) -> Self {
        let view = consortium.views[ledger as usize];
        PbftEngine {
            consortium,
            instance: PbftInstance::new(&cfg, ledger, view, proposal),
            decisions: BTreeMap::new(),
        }
    }

    pub fn instance(&self) -> &PbftInstance {
        &self.instance
    }
}

impl ProtocolEngine for PbftEngine {
    fn protocol(&self) -> Protocol {
        Protocol::Pbft
    }

    fn emit(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError> {
        self.instance.emit(ctx)
    }

    fn deliver(&mut self, ctx: &RoundCtx<'_>, delivered: &[Envelope]) -> Result<(), ProtocolError> {
        self.instance.deliver(ctx, delivered);
        if self.instance.complete() {
            self.decisions = self.instance.decided().clone();
            let ledger = self.instance.ledger() as usize;
            self.consortium.views[ledger] = self.instance.view();
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.instance.complete()
    }

    fn phase_label(&self) -> &'static str {
        self.instance.stage_label()
    }

    fn decisions(&self) -> &BTreeMap<NodeId, Decision> {
        &self.decisions
    }

    fn consortium(&self) -> &ConsortiumState {
        &self.consortium
    }
}

/// Run one consensus execution on `ledger` and return the metrics together
/// with the final view number.
pub fn execute(
    cfg: &ClusterConfig,
    ledger: u32,
    proposal: Vote,
) -> Result<(RunMetrics, u64), SimError> {
    let mut sim = Simulation::new(cfg.clone());
    let consortium = ConsortiumState::new(cfg);
    let mut engine = PbftEngine::standalone(cfg.clone(), consortium, ledger, proposal);
    sim.run_transaction(0, &mut engine)?;
    let view = engine.instance().view();
    Ok((sim.into_metrics(), view))
}
