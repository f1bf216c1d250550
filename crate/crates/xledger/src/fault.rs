//! Fault plans and the message-level fault filter.
//!
//! Engines always emit honest behavior for every node; the adversary is a
//! transformation applied to each round's outbox. Crashed and silent
//! senders contribute nothing, omission drops envelopes to a target set,
//! and vote corruption rewrites `Vote` bodies only. `Proposal` and
//! `Decision` bodies model originator-signed content and pass through
//! unmodified, so the filter can never forge a signed command.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::{Body, Envelope, NodeId};

/// How a Byzantine node misbehaves, applied uniformly to its emissions.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ByzantineStrategy {
    /// Emits nothing at all.
    #[serde(rename = "SILENT")]
    Silent,
    /// Inverts every vote it sends.
    #[serde(rename = "WRONG_VOTE")]
    WrongVote,
    /// Splits each round's receivers into two halves (ascending NodeId,
    /// first half rounded up) that get opposite vote values.
    #[serde(rename = "EQUIVOCATE")]
    Equivocate,
    /// Drops every envelope addressed to a node in `targets`.
    #[serde(rename = "OMIT")]
    Omit { targets: BTreeSet<NodeId> },
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineAssignment {
    pub node: NodeId,
    pub strategy: ByzantineStrategy,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashAssignment {
    pub node: NodeId,
    /// The node is dead from this round onward: emissions at `round` or
    /// later are dropped and it processes nothing.
    pub round: u64,
}

/// The failure schedule of a run: which nodes are Byzantine and how, which
/// nodes crash and when, and an optional round at which the initial
/// initiator fails.
///
/// For the modeled guarantees to hold, each ledger's faulty nodes
/// (Byzantine plus crashed) must stay within the budget `f`; the plan is
/// not rejected when they do not, so over-budget regimes stay observable.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultPlan {
    pub byzantine: Vec<ByzantineAssignment>,
    pub crash_at: Vec<CrashAssignment>,
    pub initiator_fails_at: Option<u64>,
}

impl FaultPlan {
    pub fn is_empty(&self) -> bool {
        self.byzantine.is_empty() && self.crash_at.is_empty() && self.initiator_fails_at.is_none()
    }

    pub fn with_byzantine(mut self, node: NodeId, strategy: ByzantineStrategy) -> Self {
        self.byzantine.push(ByzantineAssignment { node, strategy });
        self
    }

    pub fn with_crash(mut self, node: NodeId, round: u64) -> Self {
        self.crash_at.push(CrashAssignment { node, round });
        self
    }

    pub fn with_initiator_failure(mut self, round: u64) -> Self {
        self.initiator_fails_at = Some(round);
        self
    }

    pub fn strategy_of(&self, node: NodeId) -> Option<&ByzantineStrategy> {
        self.byzantine.iter().find(|a| a.node == node).map(|a| &a.strategy)
    }

    pub fn crash_round_of(&self, node: NodeId) -> Option<u64> {
        self.crash_at.iter().filter(|a| a.node == node).map(|a| a.round).min()
    }

    /// Nodes dead as of `round` (crash round at or before it).
    pub fn crashed_as_of(&self, round: u64) -> BTreeSet<NodeId> {
        self.crash_at.iter().filter(|a| a.round <= round).map(|a| a.node).collect()
    }

    /// Nodes that are faulty in any way (for honest/faulty bookkeeping).
    pub fn faulty_nodes(&self) -> BTreeSet<NodeId> {
        self.byzantine
            .iter()
            .map(|a| a.node)
            .chain(self.crash_at.iter().map(|a| a.node))
            .collect()
    }
}

/// Applies the fault plan to one round's outbox.
///
/// Returns `(delivered, dropped)`. Every input envelope lands in exactly
/// one of the two lists; envelopes from honest senders are never perturbed.
pub fn apply_faults(
    outbox: Vec<Envelope>,
    plan: &FaultPlan,
    round: u64,
) -> (Vec<Envelope>, Vec<Envelope>) {
    // Receiver halves for each equivocating sender: first half (ascending
    // dst, rounded up) keeps the original vote, the rest get the inverse.
    let mut inverted_targets: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for assignment in &plan.byzantine {
        if assignment.strategy != ByzantineStrategy::Equivocate {
            continue;
        }
        let receivers: BTreeSet<NodeId> = outbox
            .iter()
            .filter(|e| e.src == assignment.node && matches!(e.body, Body::Vote(_)))
            .map(|e| e.dst)
            .collect();
        let keep = receivers.len().div_ceil(2);
        inverted_targets
            .insert(assignment.node, receivers.into_iter().skip(keep).collect());
    }

    let mut delivered = Vec::with_capacity(outbox.len());
    let mut dropped = Vec::new();
    for mut env in outbox {
        if plan.crash_round_of(env.src).is_some_and(|r| round >= r) {
            dropped.push(env);
            continue;
        }
        match plan.strategy_of(env.src) {
            None => delivered.push(env),
            Some(ByzantineStrategy::Silent) => dropped.push(env),
            Some(ByzantineStrategy::Omit { targets }) => {
                if targets.contains(&env.dst) {
                    dropped.push(env);
                } else {
                    delivered.push(env);
                }
            }
            Some(ByzantineStrategy::WrongVote) => {
                if let Body::Vote(v) = env.body {
                    env.body = Body::Vote(v.invert());
                }
                delivered.push(env);
            }
            Some(ByzantineStrategy::Equivocate) => {
                if let Body::Vote(v) = env.body {
                    if inverted_targets
                        .get(&env.src)
                        .is_some_and(|half| half.contains(&env.dst))
                    {
                        env.body = Body::Vote(v.invert());
                    }
                }
                delivered.push(env);
            }
        }
    }
    (delivered, dropped)
}
