//! Shared domain types: node identities, votes, decisions, transactions,
//! attributed message envelopes, phase tags, and the quorum arithmetic used
//! by every protocol engine.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of one node in the consortium.
///
/// `ledger` selects the chain, `rank` the node within it. Rank 0 is the
/// ledger's primary in view 0; after a view change the primary rotates to
/// `view mod n`. The total node universe of a cluster has exactly `k * n`
/// members.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeId {
    pub ledger: u32,
    pub rank: u32,
}

impl NodeId {
    pub const fn new(ledger: u32, rank: u32) -> Self {
        NodeId { ledger, rank }
    }
}

impl fmt::Display for NodeId {
    /// Ledgers 0..25 render as letters, so node (0,0) is `A0`, (1,3) is `B3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ledger < 26 {
            let c = (b'A' + self.ledger as u8) as char;
            write!(f, "{}{}", c, self.rank)
        } else {
            write!(f, "L{}.{}", self.ledger, self.rank)
        }
    }
}

/// A two-valued vote. The derived total order puts `Commit` above
/// `Rollback`, which gives every aggregation a deterministic tie-break.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Vote {
    Rollback,
    Commit,
}

impl Vote {
    pub fn invert(self) -> Vote {
        match self {
            Vote::Commit => Vote::Rollback,
            Vote::Rollback => Vote::Commit,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Vote::Commit => "COMMIT",
            Vote::Rollback => "ROLLBACK",
        }
    }
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A node-level finalization record: the value plus the number of matching
/// attestations that backed it.
///
/// Protocol paths only finalize with `backing >= 2f+1`; a client-side
/// confirmation needs `f+1` matching replies. The ring protocol's timeout
/// path can finalize with less, which is exactly the inconsistency the
/// regression suite pins down.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Decision {
    pub value: Vote,
    pub backing: u32,
}

/// One cross-ledger transaction. The payload tag is opaque: execution cost
/// is out of scope, only message passing is accounted.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub touched_ledgers: BTreeSet<u32>,
    pub payload_tag: String,
}

impl Transaction {
    /// A transaction touching every ledger of a `k`-ledger cluster.
    pub fn spanning_all(id: u64, k: u32) -> Self {
        Transaction {
            id,
            touched_ledgers: (0..k).collect(),
            payload_tag: format!("txn{id}"),
        }
    }
}

/// Wire-level phase tag. Tags appear verbatim in traces, metrics and CSV.
///
/// `Commit` is shared by the five-phase protocol's last phase and the
/// intra-ledger BFT commit wave; within any single protocol run the tag is
/// unambiguous.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Phase {
    VoteReq,
    VotePrep,
    Ready,
    CommitReq,
    Commit,
    PrePrepare,
    Prepare,
    Reply,
    ViewChange,
    NewView,
    TwoPcVote,
    TwoPcDecide,
    HopFwd,
    HopBwd,
    Elect,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::VoteReq => "VOTE-REQ",
            Phase::VotePrep => "VOTE-PREP",
            Phase::Ready => "READY",
            Phase::CommitReq => "COMMIT-REQ",
            Phase::Commit => "COMMIT",
            Phase::PrePrepare => "PRE-PREPARE",
            Phase::Prepare => "PREPARE",
            Phase::Reply => "REPLY",
            Phase::ViewChange => "VIEW-CHANGE",
            Phase::NewView => "NEW-VIEW",
            Phase::TwoPcVote => "2PC-VOTE",
            Phase::TwoPcDecide => "2PC-DECIDE",
            Phase::HopFwd => "HOP-FWD",
            Phase::HopBwd => "HOP-BWD",
            Phase::Elect => "ELECT",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Message payload variants.
///
/// `Proposal` and `Decision` bodies model content signed by their
/// originator: the fault filter never rewrites them, mirroring the
/// unforgeability assumption. Only `Vote` bodies can be corrupted by a
/// Byzantine sender.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Body {
    Proposal(Vote),
    Vote(Vote),
    Decision(Vote),
    ViewChange(u64),
    NewView(u64),
    Elect(NodeId),
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Proposal(v) => write!(f, "PROPOSAL:{v}"),
            Body::Vote(v) => write!(f, "VOTE:{v}"),
            Body::Decision(v) => write!(f, "DECISION:{v}"),
            Body::ViewChange(view) => write!(f, "VIEW-CHANGE:{view}"),
            Body::NewView(view) => write!(f, "NEW-VIEW:{view}"),
            Body::Elect(node) => write!(f, "ELECT:{node}"),
        }
    }
}

/// One attributed protocol message.
///
/// `src` is the attribution: it is bound to the body and unforgeable. The
/// fault filter may drop or (for `Vote` bodies) rewrite a faulty sender's
/// envelopes, but it never changes `src`, so a faulty node cannot speak in
/// another node's name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Envelope {
    pub round: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub phase: Phase,
    pub body: Body,
}

impl Envelope {
    pub fn new(round: u64, src: NodeId, dst: NodeId, phase: Phase, body: Body) -> Self {
        Envelope { round, src, dst, phase, body }
    }

    pub fn is_self_message(&self) -> bool {
        self.src == self.dst
    }

    /// Tab-separated trace line: round, src, dst, phase, body.
    pub fn trace_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.round, self.src, self.dst, self.phase, self.body)
    }
}

/// Attestation count required for a node-level decision: `2f + 1`.
pub fn quorum_size(f: u32) -> u32 {
    2 * f + 1
}

/// Largest fault budget a ledger of `n` nodes tolerates: the biggest `f`
/// with `n >= 3f + 1`.
pub fn max_faulty(n: u32) -> u32 {
    debug_assert!(n >= 1);
    (n - 1) / 3
}

/// Two envelopes from one sender, in the same phase and round, carrying
/// different bodies are detectable equivocation.
pub fn detect_equivocation(a: &Envelope, b: &Envelope) -> bool {
    a.src == b.src && a.phase == b.phase && a.round == b.round && a.body != b.body
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quorum_size_values() {
        assert_eq!(quorum_size(0), 1);
        assert_eq!(quorum_size(1), 3);
        // direct evaluation of 2f+1 at f=5
        assert_eq!(quorum_size(5), 2 * 5 + 1);
    }

    /// Independent oracle: largest f with 3f+1 <= n, by enumeration.
    fn max_faulty_oracle(n: u32) -> u32 {
        (0..=n).filter(|f| 3 * f < n).max().unwrap()
    }

    #[test]
    fn max_faulty_values() {
        assert_eq!(max_faulty(4), 1);
        assert_eq!(max_faulty(1), 0);
        assert_eq!(max_faulty(10), max_faulty_oracle(10));
        assert_eq!(max_faulty(10), 3);
    }

    proptest! {
        #[test]
        fn max_faulty_bound_holds(n in 1u32..=2000) {
            let f = max_faulty(n);
            prop_assert!(3 * f < n);
            prop_assert!(n < 3 * (f + 1) + 1);
            prop_assert_eq!(f, max_faulty_oracle(n));
        }

        #[test]
        fn quorum_intersection_identity(f in 0u32..=100) {
            // two quorums overlap in at least f+1 nodes
            prop_assert_eq!(2 * quorum_size(f) - (3 * f + 1), f + 1);
        }
    }

    fn env(src: NodeId, phase: Phase, round: u64, body: Body) -> Envelope {
        Envelope::new(round, src, NodeId::new(0, 1), phase, body)
    }

    #[test]
    fn equivocation_full_key_match_with_body_mismatch() {
        let a0 = NodeId::new(0, 0);
        let a = env(a0, Phase::VotePrep, 2, Body::Vote(Vote::Commit));
        let b = env(a0, Phase::VotePrep, 2, Body::Vote(Vote::Rollback));
        assert!(detect_equivocation(&a, &b));
    }

    #[test]
    fn equivocation_identical_message_is_not() {
        let a0 = NodeId::new(0, 0);
        let a = env(a0, Phase::VotePrep, 2, Body::Vote(Vote::Commit));
        assert!(!detect_equivocation(&a, &a.clone()));
    }

    #[test]
    fn equivocation_requires_all_key_fields_to_match() {
        // enumerate every combination of (same src, same phase, same round)
        // with differing bodies; only the full-key match detects.
        let srcs = [NodeId::new(0, 0), NodeId::new(1, 0)];
        let phases = [Phase::VotePrep, Phase::Ready];
        let rounds = [2u64, 3u64];
        let a = env(srcs[0], phases[0], rounds[0], Body::Vote(Vote::Commit));
        for &src in &srcs {
            for &phase in &phases {
                for &round in &rounds {
                    let b = env(src, phase, round, Body::Vote(Vote::Rollback));
                    let expect = src == srcs[0] && phase == phases[0] && round == rounds[0];
                    assert_eq!(detect_equivocation(&a, &b), expect);
                }
            }
        }
    }

    #[test]
    fn node_display_uses_ledger_letters() {
        assert_eq!(NodeId::new(0, 0).to_string(), "A0");
        assert_eq!(NodeId::new(1, 3).to_string(), "B3");
        assert_eq!(NodeId::new(2, 3).to_string(), "C3");
        assert_eq!(NodeId::new(30, 1).to_string(), "L30.1");
    }

    #[test]
    fn vote_order_prefers_commit() {
        assert!(Vote::Commit > Vote::Rollback);
        assert_eq!(Vote::Commit.invert(), Vote::Rollback);
    }
}
