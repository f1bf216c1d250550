//! Ring-traversal atomic swap with per-hop timelocks.
//!
//! The k ledgers form a ring in ascending index order. The traversal runs
//! 2k two-party swaps: k forward hops locking each ledger in turn, then k
//! backward hops unwinding the ring and finalizing the commit. Each swap
//! is one hop round (a request and a receipt between the adjacent
//! primaries, 2 messages) followed by one intra-ledger consensus execution
//! in the receiving ledger, so a failure-free run takes `2k * (1 + 4) =
//! 10k` rounds and `2k * (2n^2 + 2n + 2)` messages.
//!
//! Every swap carries a timelock. If a swap does not complete within the
//! budget, the traversal aborts: ledgers that already finalized on the
//! backward path keep their commit, everyone else reclaims and rolls back
//! locally. That reclaim path is the protocol's atomicity hazard, and the
//! test suite pins a schedule that reproduces it.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::ClusterConfig;
use crate::netsim::{ConsortiumState, Protocol, ProtocolEngine, ProtocolError, RoundCtx};
use crate::pbft::{ConsortiumRepair, PbftInstance};
use crate::types::{Body, Decision, Envelope, NodeId, Phase, Vote};

/// Default per-swap timeout: two consensus executions' worth of rounds.
pub const DEFAULT_TIMELOCK_ROUNDS: u64 = 8;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum P18Phase {
    Start,
    Repair,
    Hop,
    Consensus,
    Done,
}

/// Direction and endpoints of one swap on the ring.
pub fn swap_route(swap: u32, k: u32) -> (u32, u32, Phase) {
    assert!(swap < 2 * k);
    if swap < k {
        (swap, (swap + 1) % k, Phase::HopFwd)
    } else {
        let j = swap - k;
        let src = (k - j) % k;
        let dst = (k - j + k - 1) % k;
        (src, dst, Phase::HopBwd)
    }
}

pub struct Podc18Engine {
    cfg: ClusterConfig,
    consortium: ConsortiumState,
    timelock_rounds: u64,
    phase: P18Phase,
    repair: Option<ConsortiumRepair>,
    swap: u32,
    swap_start: u64,
    instance: Option<PbftInstance>,
    locked: BTreeSet<u32>,
    finalized: BTreeMap<u32, Vote>,
    decisions: BTreeMap<NodeId, Decision>,
    expired_at_swap: Option<u32>,
}

impl Podc18Engine {
    pub fn new(cfg: ClusterConfig, consortium: ConsortiumState, _txn: &crate::types::Transaction) -> Self {
        Podc18Engine {
            cfg,
            consortium,
            timelock_rounds: DEFAULT_TIMELOCK_ROUNDS,
            phase: P18Phase::Start,
            repair: None,
            swap: 0,
            swap_start: 0,
            instance: None,
            locked: BTreeSet::new(),
            finalized: BTreeMap::new(),
            decisions: BTreeMap::new(),
            expired_at_swap: None,
        }
    }

    pub fn with_timelock_rounds(mut self, rounds: u64) -> Self {
        self.timelock_rounds = rounds;
        self
    }

    /// The swap whose timelock expired, if the traversal aborted.
    pub fn expired_at_swap(&self) -> Option<u32> {
        self.expired_at_swap
    }

    pub fn ledger_outcomes(&self) -> &BTreeMap<u32, Vote> {
        &self.finalized
    }

    /// Ledgers locked on the forward path so far.
    pub fn locked_ledgers(&self) -> &BTreeSet<u32> {
        &self.locked
    }

    fn hop_messages(&self, ctx: &RoundCtx<'_>) -> Vec<Envelope> {
        let (src_l, dst_l, tag) = swap_route(self.swap, self.cfg.k);
        let src = self.consortium.primary_of(src_l, self.cfg.n);
        let dst = self.consortium.primary_of(dst_l, self.cfg.n);
        let body = if tag == Phase::HopFwd {
            Body::Proposal(Vote::Commit)
        } else {
            Body::Decision(Vote::Commit)
        };
        vec![
            Envelope::new(ctx.round, src, dst, tag, body),
            Envelope::new(ctx.round, dst, src, tag, body),
        ]
    }

    /// Timelock check: the swap must finish within `timelock_rounds` of
    /// its first round.
    fn timelock_exceeded(&self, round: u64) -> bool {
        round - self.swap_start + 1 >= self.timelock_rounds
    }

    fn expire(&mut self, crashed: &BTreeSet<NodeId>) {
        self.expired_at_swap = Some(self.swap);
        // unwind: finalized ledgers cannot take their commit back; every
        // other ledger reclaims locally and rolls back
        for ledger in 0..self.cfg.k {
            if self.finalized.contains_key(&ledger) {
                continue;
            }
            self.finalized.insert(ledger, Vote::Rollback);
            for node in self.cfg.ledger_nodes(ledger) {
                if !crashed.contains(&node) {
                    self.decisions.insert(node, Decision { value: Vote::Rollback, backing: 1 });
                }
            }
        }
        self.phase = P18Phase::Done;
    }

    fn advance_swap(&mut self, ctx: &RoundCtx<'_>) {
        self.swap += 1;
        self.instance = None;
        if self.swap == 2 * self.cfg.k {
            self.phase = P18Phase::Done;
        } else {
            self.phase = P18Phase::Hop;
            self.swap_start = ctx.round + 1;
        }
    }
}

impl ProtocolEngine for Podc18Engine {
    fn protocol(&self) -> Protocol {
        Protocol::Podc18
    }

    fn emit(&mut self, ctx: &RoundCtx<'_>) -> Result<Vec<Envelope>, ProtocolError> {
        if self.phase == P18Phase::Start {
            let repair = ConsortiumRepair::detect(&self.cfg, &self.consortium, ctx.crashed, None);
            if repair.is_done() {
                self.phase = P18Phase::Hop;
                self.swap_start = ctx.round;
            } else {
                self.repair = Some(repair);
                self.phase = P18Phase::Repair;
            }
        }

        match self.phase {
            P18Phase::Start | P18Phase::Done => Ok(Vec::new()),
            P18Phase::Repair => {
                let mut repair = self.repair.take().expect("repair set");
                let out = repair.emit(&self.cfg, &self.consortium, ctx)?;
                self.repair = Some(repair);
                Ok(out)
            }
            P18Phase::Hop => Ok(self.hop_messages(ctx)),
            P18Phase::Consensus => {
                let instance = self.instance.as_mut().expect("instance set in Consensus");
                instance.emit(ctx)
            }
        }
    }

    fn deliver(&mut self, ctx: &RoundCtx<'_>, delivered: &[Envelope]) -> Result<(), ProtocolError> {
        match self.phase {
            P18Phase::Start | P18Phase::Done => {}
            P18Phase::Repair => {
                let mut repair = self.repair.take().expect("repair set");
                repair.deliver(&mut self.consortium, delivered);
                if repair.is_done() {
                    self.repair = None;
                    self.phase = P18Phase::Hop;
                    self.swap_start = ctx.round + 1;
                } else {
                    self.repair = Some(repair);
                }
            }
            P18Phase::Hop => {
                let (_, dst_l, tag) = swap_route(self.swap, self.cfg.k);
                let dst_primary = self.consortium.primary_of(dst_l, self.cfg.n);
                let received = delivered
                    .iter()
                    .any(|e| e.phase == tag && e.dst == dst_primary && !ctx.crashed.contains(&e.dst));
                if received {
                    let proposal = Vote::Commit;
                    let view = self.consortium.views[dst_l as usize];
                    self.instance = Some(PbftInstance::new(&self.cfg, dst_l, view, proposal));
                    self.phase = P18Phase::Consensus;
                } else if self.timelock_exceeded(ctx.round) {
                    // the receiving primary never took the hop; the swap
                    // cannot complete and the timelock fires
                    self.expire(ctx.crashed);
                }
                // otherwise the sender retries the hop next round
            }
            P18Phase::Consensus => {
                let (_, dst_l, _) = swap_route(self.swap, self.cfg.k);
                {
                    let instance = self.instance.as_mut().expect("instance set in Consensus");
                    instance.deliver(ctx, delivered);
                }
                let complete = self.instance.as_ref().is_some_and(|i| i.complete());
                if complete {
                    let instance = self.instance.as_ref().unwrap();
                    self.consortium.views[dst_l as usize] = instance.view();
                    if self.swap < self.cfg.k {
                        self.locked.insert(dst_l);
                    } else {
                        self.finalized.insert(dst_l, Vote::Commit);
                        for (&node, &d) in instance.decided() {
                            self.decisions.insert(node, d);
                        }
                    }
                    self.advance_swap(ctx);
                } else if self.timelock_exceeded(ctx.round) {
                    self.expire(ctx.crashed);
                }
            }
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.phase == P18Phase::Done
    }

    fn phase_label(&self) -> &'static str {
        match self.phase {
            P18Phase::Start => "start",
            P18Phase::Repair => "repair",
            P18Phase::Hop => "hop",
            P18Phase::Consensus => {
                self.instance.as_ref().map(|i| i.stage_label()).unwrap_or("swap-consensus")
            }
            P18Phase::Done => "done",
        }
    }

    fn decisions(&self) -> &BTreeMap<NodeId, Decision> {
        &self.decisions
    }

    fn consortium(&self) -> &ConsortiumState {
        &self.consortium
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::FaultPlan;
    use crate::netsim::{run_protocol, Simulation};
    use crate::types::Transaction;

    fn run_one(cfg: &ClusterConfig) -> crate::netsim::RunMetrics {
        run_protocol(Protocol::Podc18, cfg, &[Transaction::spanning_all(0, cfg.k)]).unwrap()
    }

    #[test]
    fn routes_traverse_the_ring_forward_then_unwind() {
        // k = 3: forward 0->1->2->0, backward retraces in reverse
        let fwd: Vec<_> = (0..3).map(|s| swap_route(s, 3)).collect();
        assert_eq!(fwd, vec![(0, 1, Phase::HopFwd), (1, 2, Phase::HopFwd), (2, 0, Phase::HopFwd)]);
        let bwd: Vec<_> = (3..6).map(|s| swap_route(s, 3)).collect();
        assert_eq!(bwd, vec![(0, 2, Phase::HopBwd), (2, 1, Phase::HopBwd), (1, 0, Phase::HopBwd)]);
    }

    #[test]
    fn failure_free_run_is_10k_rounds_with_exact_counts() {
        let cfg = ClusterConfig::new(3, 4);
        let metrics = run_one(&cfg);
        assert_eq!(metrics.rounds, 30);
        assert_eq!(metrics.messages_total, 252); // 2k(2n^2 + 2n + 2) at k=3, n=4
        assert_eq!(
            metrics.phase_count(Phase::HopFwd) + metrics.phase_count(Phase::HopBwd),
            12 // 2 messages x 2k swaps
        );
        assert_eq!(metrics.decisions.len(), 12);
        assert!(metrics.decisions.values().all(|d| d.value == Vote::Commit));
    }

    #[test]
    fn rounds_scale_linearly_in_k() {
        let metrics = run_one(&ClusterConfig::new(2, 4));
        assert_eq!(metrics.rounds, 20);
        let metrics = run_one(&ClusterConfig::new(4, 4));
        assert_eq!(metrics.rounds, 40);
    }

    #[test]
    fn default_timelock_absorbs_a_view_change() {
        // crash the primary of ledger 1 right before the first swap's
        // consensus: the view change costs 2 rounds, swap takes 7 <= 8
        let cfg = ClusterConfig::new(2, 4)
            .with_fault_plan(FaultPlan::default().with_crash(NodeId::new(1, 0), 2));
        let mut sim = Simulation::new(cfg.clone());
        let txn = Transaction::spanning_all(0, cfg.k);
        let mut engine = Podc18Engine::new(cfg.clone(), ConsortiumState::new(&cfg), &txn);
        sim.run_transaction(0, &mut engine).unwrap();
        assert_eq!(engine.expired_at_swap(), None);
        assert_eq!(sim.metrics().rounds, 22); // 20 + one view change
        let values: BTreeSet<Vote> = sim
            .metrics()
            .decisions
            .iter()
            .filter(|(n, _)| **n != NodeId::new(1, 0))
            .map(|(_, d)| d.value)
            .collect();
        assert_eq!(values.len(), 1);
    }

    #[test]
    fn tight_timelock_with_late_crash_splits_the_ledgers() {
        // committed atomicity-violation schedule at k=2, n=4:
        // swaps run rounds 1-5, 6-10, 11-15 (ledger 1 finalizes COMMIT),
        // 16-... ; crashing A0 at round 17 stalls the last swap's
        // consensus into a view change, blowing a 6-round timelock.
        // Ledger 0 reclaims and rolls back while ledger 1 keeps COMMIT.
        let cfg = ClusterConfig::new(2, 4)
            .with_fault_plan(FaultPlan::default().with_crash(NodeId::new(0, 0), 17));
        let mut sim = Simulation::new(cfg.clone());
        let txn = Transaction::spanning_all(0, cfg.k);
        let mut engine = Podc18Engine::new(cfg.clone(), ConsortiumState::new(&cfg), &txn)
            .with_timelock_rounds(6);
        sim.run_transaction(0, &mut engine).unwrap();
        assert!(engine.expired_at_swap().is_some());
        assert_eq!(engine.ledger_outcomes()[&1], Vote::Commit);
        assert_eq!(engine.ledger_outcomes()[&0], Vote::Rollback);
        let honest_values: BTreeSet<Vote> = sim
            .metrics()
            .decisions
            .iter()
            .filter(|(n, _)| **n != NodeId::new(0, 0))
            .map(|(_, d)| d.value)
            .collect();
        assert_eq!(honest_values.len(), 2, "honest nodes in different ledgers disagree");
    }

    #[test]
    fn crashed_primary_at_start_is_repaired_before_the_ring_runs() {
        let cfg = ClusterConfig::new(2, 4)
            .with_fault_plan(FaultPlan::default().with_crash(NodeId::new(1, 0), 0));
        let mut sim = Simulation::new(cfg.clone());
        let txn = Transaction::spanning_all(0, cfg.k);
        let mut engine = Podc18Engine::new(cfg.clone(), ConsortiumState::new(&cfg), &txn);
        sim.run_transaction(0, &mut engine).unwrap();
        assert_eq!(sim.metrics().rounds, 22); // 2 repair rounds + 10k
        assert_eq!(engine.expired_at_swap(), None);
        let values: BTreeSet<Vote> = sim
            .metrics()
            .decisions
            .iter()
            .filter(|(n, _)| **n != NodeId::new(1, 0))
            .map(|(_, d)| d.value)
            .collect();
        assert_eq!(values, [Vote::Commit].into_iter().collect());
    }
}
