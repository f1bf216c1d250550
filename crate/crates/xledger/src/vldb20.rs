//! Two-phase commit over ledgers with a witness-chain coordinator.
//!
//! One of the k ledgers acts as the witness; its current primary is the
//! coordinator. Each 2PC phase is one coordinator round, one intra-ledger
//! consensus execution in every ledger, and one response round:
//!
//!   round 1      witness -> ledger primaries  (vote request, 2PC-VOTE)
//!   rounds 2-5   one consensus execution per ledger on its vote
//!   round 6      ledger primaries -> witness  (votes, 2PC-VOTE)
//!   round 7      witness -> ledger primaries  (decision, 2PC-DECIDE)
//!   rounds 8-11  one consensus execution per ledger applying the decision
//!   round 12     ledger primaries -> witness  (acks, 2PC-DECIDE)
//!
//! Vote reports and decisions travel as certified `Decision` bodies, so a
//! Byzantine primary cannot misreport its ledger's consensus outcome.
//! If the witness primary is dead or silent when it must act, the run
//! stops with `CoordinatorBlocked`: the blocking scenario is surfaced, not
//! resolved.

use std::collections::BTreeMap;

use crate::config::ClusterConfig;
use crate::netsim::{ConsortiumState, Protocol, ProtocolEngine, ProtocolError, RoundCtx};
use crate::pbft::{ConsortiumRepair, PbftInstance};
use crate::types::{Body, Decision, Envelope, NodeId, Phase, Vote};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum V20Phase {
    Start,
    Repair,
    VoteRequest,
    VotePbft,
    VoteCollect,
    DecideSend,
    DecidePbft,
    AckCollect,
    Done,
}

pub struct Vldb20Engine {
    cfg: ClusterConfig,
    consortium: ConsortiumState,
    witness: u32,
    ledger_votes: BTreeMap<u32, Vote>,
    phase: V20Phase,
    repair: Option<ConsortiumRepair>,
    instances: BTreeMap<u32, PbftInstance>,
    collected_votes: BTreeMap<u32, Vote>,
    global_decision: Option<Vote>,
    decisions: BTreeMap<NodeId, Decision>,
}

impl Vldb20Engine {
    pub fn new(cfg: ClusterConfig, consortium: ConsortiumState, _txn: &crate::types::Transaction) -> Self {
        let witness = choose_witness(&cfg);
        Vldb20Engine {
            cfg,
            consortium,
            witness,
            ledger_votes: BTreeMap::new(),
            phase: V20Phase::Start,
            repair: None,
            instances: BTreeMap::new(),
            collected_votes: BTreeMap::new(),
            global_decision: None,
            decisions: BTreeMap::new(),
        }
    }

    /// Override the coordinator ledger.
    pub fn with_witness(mut self, witness: u32) -> Self {
        self.witness = witness;
        self
    }

    /// Force a ledger to vote `vote` in the first 2PC phase.
    pub fn with_ledger_vote(mut self, ledger: u32, vote: Vote) -> Self {
        self.ledger_votes.insert(ledger, vote);
        self
    }

    pub fn witness(&self) -> u32 {
        self.witness
    }

    pub fn global_decision(&self) -> Option<Vote> {
        self.global_decision
    }

    fn witness_primary(&self) -> NodeId {
        self.consortium.primary_of(self.witness, self.cfg.n)
    }

    fn ledger_primaries(&self) -> Vec<NodeId> {
        (0..self.cfg.k)
            .map(|l| self.consortium.primary_of(l, self.cfg.n))
            .collect()
    }

    fn route_to_instances(&mut self, ctx: &RoundCtx<'_>, delivered: &[Envelope]) {
        let mut by_ledger: BTreeMap<u32, Vec<Envelope>> = BTreeMap::new();
        for env in delivered {
            by_ledger.entry(env.src.ledger).or_default().push(env.clone());
        }
        let empty = Vec::new();
        for (&ledger, instance) in self.instances.iter_mut() {
            if instance.complete() {
                continue;
            }
            let envs = by_ledger.get(&ledger).unwrap_or(&empty);
            instance.deliver(ctx, envs);
            if instance.complete() {
                self.consortium.views[ledger as usize] = instance.view();
            }
        }
    }

    fn all_instances_complete(&self) -> bool {
        self.instances.values().all(|i| i.complete())
    }
}

impl ProtocolEngine for Vldb20Engine {
    fn protocol(&self) -> Protocol {
        Protocol::Vldb20
    }

    fn emit(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError> {
        if self.phase == V20Phase::Start {
            if ctx.crashed.contains(&self.witness_primary()) {
                return Err(ProtocolError::CoordinatorBlocked { ledger: self.witness, round: ctx.round });
            }
            let repair =
                ConsortiumRepair::detect(&self.cfg, &self.consortium, ctx.crashed, Some(self.witness));
            if repair.is_done() {
                self.phase = V20Phase::VoteRequest;
            } else {
                self.repair = Some(repair);
                self.phase = V20Phase::Repair;
            }
        }

        let mut out = Vec::new();
        match self.phase {
            V20Phase::Start | V20Phase::Done => {}
            V20Phase::Repair => {
                let mut repair = self.repair.take().expect("repair set");
                out = repair.emit(&self.cfg, &self.consortium, ctx)?;
                self.repair = Some(repair);
            }
            V20Phase::VoteRequest => {
                let coordinator = self.witness_primary();
                if ctx.crashed.contains(&coordinator) {
                    return Err(ProtocolError::CoordinatorBlocked { ledger: self.witness, round: ctx.round });
                }
                for dst in self.ledger_primaries() {
                    out.push(Envelope::new(ctx.round, coordinator, dst, Phase::TwoPcVote, Body::Proposal(Vote::Commit)));
                }
            }
            V20Phase::VotePbft | V20Phase::DecidePbft => {
                for instance in self.instances.values_mut() {
                    if !instance.complete() {
                        out.extend(instance.emit(ctx)?);
                    }
                }
            }
            V20Phase::VoteCollect => {
                let coordinator = self.witness_primary();
                for (&ledger, instance) in &self.instances {
                    let _ = ledger;
                    if let Some(v) = instance.agreed() {
                        out.push(Envelope::new(ctx.round, instance.primary(), coordinator, Phase::TwoPcVote, Body::Decision(v)));
                    }
                }
            }
            V20Phase::DecideSend => {
                let coordinator = self.witness_primary();
                if ctx.crashed.contains(&coordinator) {
                    return Err(ProtocolError::CoordinatorBlocked { ledger: self.witness, round: ctx.round });
                }
                let all_commit = (0..self.cfg.k)
                    .all(|l| self.collected_votes.get(&l) == Some(&Vote::Commit));
                let decision = if all_commit { Vote::Commit } else { Vote::Rollback };
                self.global_decision = Some(decision);
                for dst in self.ledger_primaries() {
                    out.push(Envelope::new(ctx.round, coordinator, dst, Phase::TwoPcDecide, Body::Decision(decision)));
                }
            }
            V20Phase::AckCollect => {
                let coordinator = self.witness_primary();
                for instance in self.instances.values() {
                    if let Some(v) = instance.agreed() {
                        out.push(Envelope::new(ctx.round, instance.primary(), coordinator, Phase::TwoPcDecide, Body::Decision(v)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn deliver(&mut self, ctx: &RoundCtx<'_>, delivered: &[Envelope]) -> Result<(), ProtocolError> {
        match self.phase {
            V20Phase::Start | V20Phase::Done => {}
            V20Phase::Repair => {
                let mut repair = self.repair.take().expect("repair set");
                repair.deliver(&mut self.consortium, delivered);
                if repair.is_done() {
                    self.repair = None;
                    self.phase = V20Phase::VoteRequest;
                } else {
                    self.repair = Some(repair);
                }
            }
            V20Phase::VoteRequest => {
                // a ledger joins the vote phase once its primary holds the
                // request; view changes hand pending requests to the next
                // primary, so ledger-level knowledge survives a rotation
                let mut any = false;
                for env in delivered {
                    if env.phase == Phase::TwoPcVote && !ctx.crashed.contains(&env.dst) {
                        let ledger = env.dst.ledger;
                        let proposal = self.ledger_votes.get(&ledger).copied().unwrap_or(Vote::Commit);
                        let view = self.consortium.views[ledger as usize];
                        self.instances
                            .entry(ledger)
                            .or_insert_with(|| PbftInstance::new(&self.cfg, ledger, view, proposal));
                        any = true;
                    }
                }
                if !any {
                    return Err(ProtocolError::CoordinatorBlocked { ledger: self.witness, round: ctx.round });
                }
                self.phase = V20Phase::VotePbft;
            }
            V20Phase::VotePbft => {
                self.route_to_instances(ctx, delivered);
                if self.all_instances_complete() {
                    self.phase = V20Phase::VoteCollect;
                }
            }
            V20Phase::VoteCollect => {
                let coordinator = self.witness_primary();
                for env in delivered {
                    if env.phase == Phase::TwoPcVote && env.dst == coordinator {
                        if let Body::Decision(v) = env.body {
                            self.collected_votes.insert(env.src.ledger, v);
                        }
                    }
                }
                self.phase = V20Phase::DecideSend;
            }
            V20Phase::DecideSend => {
                let decision = self.global_decision.expect("decision fixed in DecideSend");
                let mut fresh: BTreeMap<u32, PbftInstance> = BTreeMap::new();
                for env in delivered {
                    if env.phase == Phase::TwoPcDecide && !ctx.crashed.contains(&env.dst) {
                        let ledger = env.dst.ledger;
                        let view = self.consortium.views[ledger as usize];
                        fresh
                            .entry(ledger)
                            .or_insert_with(|| PbftInstance::new(&self.cfg, ledger, view, decision));
                    }
                }
                if fresh.is_empty() {
                    return Err(ProtocolError::CoordinatorBlocked { ledger: self.witness, round: ctx.round });
                }
                self.instances = fresh;
                self.phase = V20Phase::DecidePbft;
            }
            V20Phase::DecidePbft => {
                self.route_to_instances(ctx, delivered);
                if self.all_instances_complete() {
                    for instance in self.instances.values() {
                        for (&node, &d) in instance.decided() {
                            self.decisions.insert(node, d);
                        }
                    }
                    self.phase = V20Phase::AckCollect;
                }
            }
            V20Phase::AckCollect => {
                self.phase = V20Phase::Done;
            }
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.phase == V20Phase::Done
    }

    fn phase_label(&self) -> &'static str {
        match self.phase {
            V20Phase::Start => "start",
            V20Phase::Repair => "repair",
            V20Phase::VoteRequest => "2pc-vote-request",
            // surface the inner consensus stage so the stall detector sees
            // progress even in rounds where a crippled ledger emits nothing
            V20Phase::VotePbft | V20Phase::DecidePbft => self
                .instances
                .values()
                .find(|i| !i.complete())
                .map(|i| i.stage_label())
                .unwrap_or("consensus-complete"),
            V20Phase::VoteCollect => "2pc-vote-collect",
            V20Phase::DecideSend => "2pc-decide-send",
            V20Phase::AckCollect => "2pc-ack-collect",
            V20Phase::Done => "done",
        }
    }

    fn decisions(&self) -> &BTreeMap<NodeId, Decision> {
        &self.decisions
    }

    fn consortium(&self) -> &ConsortiumState {
        &self.consortium
    }
}

/// Deterministic coordinator choice: ledger 0 unless overridden.
pub fn choose_witness(_cfg: &ClusterConfig) -> u32 {
    0
}
