//! Simplicial complexes induced by per-phase communication graphs:
//! dimension, skeletons, face queries and connected components.
//!
//! Graphs are extracted from actual failure-free traces, never re-derived
//! from protocol structure, so every topological claim about a phase is
//! checkable against what the simulator really sent. Self-messages are
//! counted in metrics but excluded here: a 1-simplex needs two distinct
//! vertices, and a vertex is its own 0-simplex anyway.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::ClusterConfig;
use crate::netsim::{Protocol, SimError, Simulation};
use crate::types::{Envelope, NodeId, Phase, Transaction};

/// Directed communication graph of one phase: oriented 1-simplices.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CommGraph {
    pub vertices: BTreeSet<NodeId>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl CommGraph {
    pub fn new(vertices: BTreeSet<NodeId>, edges: BTreeSet<(NodeId, NodeId)>) -> Self {
        let edges = edges.into_iter().filter(|(a, b)| a != b).collect();
        CommGraph { vertices, edges }
    }

    /// Edge set from the envelopes of one phase in a trace, over the full
    /// node universe of `cfg` (isolated vertices stay in the graph).
    pub fn from_trace(trace: &[Envelope], phase: Phase, cfg: &ClusterConfig) -> Self {
        let vertices: BTreeSet<NodeId> = cfg.nodes().collect();
        let edges = trace
            .iter()
            .filter(|e| e.phase == phase && !e.is_self_message())
            .map(|e| (e.src, e.dst))
            .collect();
        CommGraph::new(vertices, edges)
    }

    /// The graph with every edge orientation reversed.
    pub fn reversed(&self) -> CommGraph {
        CommGraph {
            vertices: self.vertices.clone(),
            edges: self.edges.iter().map(|&(a, b)| (b, a)).collect(),
        }
    }

    /// Undirected support: canonically ordered vertex pairs.
    pub fn undirected_support(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges
            .iter()
            .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect()
    }

    /// Connected components of the undirected support, isolated vertices
    /// included.
    pub fn components(&self) -> usize {
        let index: BTreeMap<NodeId, usize> =
            self.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..parent.len()).map(|i| find(&mut parent, i)).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, PartialEq, Eq, Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("protocol {protocol} has no phase {phase} in its failure-free trace")]
    UnknownPhase { protocol: Protocol, phase: Phase },
    #[error("clique enumeration is limited to {limit} vertices, graph has {vertices}")]
    ScaleExceeded { vertices: usize, limit: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Exact maximal-clique enumeration is restricted to desk scale; larger
/// graphs report structural lower bounds instead.
pub const CLIQUE_SCALE_LIMIT: usize = 64;

/// A face-closed union of simplices, stored by its maximal simplices.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CommComplex {
    pub vertices: BTreeSet<NodeId>,
    pub maximal_simplices: Vec<BTreeSet<NodeId>>,
}

impl CommComplex {
    /// Dimension of the highest-dimensional maximal simplex.
    pub fn dimension(&self) -> usize {
        self.maximal_simplices.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0)
    }

    /// Face closure query: a nonempty vertex set is a face iff it is a
    /// subset of some maximal simplex.
    pub fn contains_face(&self, face: &BTreeSet<NodeId>) -> bool {
        !face.is_empty() && self.maximal_simplices.iter().any(|s| face.is_subset(s))
    }

    /// All faces of dimension exactly `d` (enumerated; desk scale only).
    pub fn faces_of_dim(&self, d: usize) -> BTreeSet<BTreeSet<NodeId>> {
        let mut out = BTreeSet::new();
        for simplex in &self.maximal_simplices {
            if simplex.len() > d {
                let members: Vec<NodeId> = simplex.iter().copied().collect();
                subsets_of_size(&members, d + 1, &mut out);
            }
        }
        out
    }

    /// Connected components of the 1-skeleton.
    pub fn components(&self) -> usize {
        let edges = self
            .maximal_simplices
            .iter()
            .flat_map(|s| {
                let members: Vec<NodeId> = s.iter().copied().collect();
                let mut pairs = Vec::new();
                for i in 0..members.len() {
                    for j in i + 1..members.len() {
                        pairs.push((members[i], members[j]));
                    }
                }
                pairs
            })
            .collect();
        CommGraph::new(self.vertices.clone(), edges).components()
    }
}

fn subsets_of_size(members: &[NodeId], size: usize, out: &mut BTreeSet<BTreeSet<NodeId>>) {
    let mut stack: Vec<(usize, BTreeSet<NodeId>)> = vec![(0, BTreeSet::new())];
    while let Some((start, current)) = stack.pop() {
        if current.len() == size {
            out.insert(current);
            continue;
        }
        let needed = size - current.len();
        for i in start..members.len() {
            if members.len() - i < needed {
                break;
            }
            let mut next = current.clone();
            next.insert(members[i]);
            stack.push((i + 1, next));
        }
    }
}

/// The clique complex of a graph's undirected support: maximal cliques
/// become maximal simplices, isolated vertices become 0-simplices.
pub fn clique_complex(graph: &CommGraph) -> Result<CommComplex, TopologyError> {
    if graph.vertices.len() > CLIQUE_SCALE_LIMIT {
        return Err(TopologyError::ScaleExceeded {
            vertices: graph.vertices.len(),
            limit: CLIQUE_SCALE_LIMIT,
        });
    }
    let vertices: Vec<NodeId> = graph.vertices.iter().copied().collect();
    let index: BTreeMap<NodeId, usize> =
        vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut adjacency = vec![0u64; vertices.len()];
    for &(a, b) in &graph.undirected_support() {
        let (ia, ib) = (index[&a], index[&b]);
        adjacency[ia] |= 1 << ib;
        adjacency[ib] |= 1 << ia;
    }

    let full: u64 = if vertices.len() == 64 { u64::MAX } else { (1u64 << vertices.len()) - 1 };
    let mut cliques: Vec<u64> = Vec::new();
    bron_kerbosch(0, full, 0, &adjacency, &mut cliques);

    let mut maximal: Vec<BTreeSet<NodeId>> = cliques
        .into_iter()
        .map(|mask| {
            (0..vertices.len()).filter(|&i| mask & (1 << i) != 0).map(|i| vertices[i]).collect()
        })
        .collect();
    maximal.sort();
    Ok(CommComplex { vertices: graph.vertices.clone(), maximal_simplices: maximal })
}

/// Bron-Kerbosch with pivoting over u64 bitsets.
fn bron_kerbosch(r: u64, mut p: u64, mut x: u64, adjacency: &[u64], out: &mut Vec<u64>) {
    if p == 0 && x == 0 {
        out.push(r);
        return;
    }
    let pivot = {
        let pool = p | x;
        (0..adjacency.len())
            .filter(|&i| pool & (1 << i) != 0)
            .max_by_key(|&i| (p & adjacency[i]).count_ones())
            .expect("pool is nonempty")
    };
    let mut candidates = p & !adjacency[pivot];
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        let bit = 1u64 << v;
        bron_kerbosch(r | bit, p & adjacency[v], x & adjacency[v], adjacency, out);
        p &= !bit;
        x |= bit;
        candidates &= !bit;
    }
}

/// The `d`-skeleton: all faces of dimension at most `d`, re-expressed by
/// its maximal simplices.
pub fn skeleton(complex: &CommComplex, d: usize) -> CommComplex {
    let mut kept: BTreeSet<BTreeSet<NodeId>> = BTreeSet::new();
    for simplex in &complex.maximal_simplices {
        if simplex.len() <= d + 1 {
            kept.insert(simplex.clone());
        } else {
            let members: Vec<NodeId> = simplex.iter().copied().collect();
            subsets_of_size(&members, d + 1, &mut kept);
        }
    }
    // drop anything contained in another kept simplex
    let candidates: Vec<BTreeSet<NodeId>> = kept.into_iter().collect();
    let maximal: Vec<BTreeSet<NodeId>> = candidates
        .iter()
        .filter(|c| !candidates.iter().any(|other| other.len() > c.len() && c.is_subset(other)))
        .cloned()
        .collect();
    CommComplex { vertices: complex.vertices.clone(), maximal_simplices: maximal }
}

/// Number of connected components of a complex's 1-skeleton.
pub fn components(complex: &CommComplex) -> usize {
    complex.components()
}

/// The exact directed edge set a phase emits in a failure-free run,
/// extracted from a simulated trace.
pub fn phase_graph(
    protocol: Protocol,
    phase: Phase,
    cfg: &ClusterConfig,
) -> Result<CommGraph, TopologyError> {
    let trace = failure_free_trace(protocol, cfg)?;
    if !trace.iter().any(|e| e.phase == phase) {
        return Err(TopologyError::UnknownPhase { protocol, phase });
    }
    Ok(CommGraph::from_trace(&trace, phase, cfg))
}

/// Full delivered trace of one failure-free transaction.
pub fn failure_free_trace(
    protocol: Protocol,
    cfg: &ClusterConfig,
) -> Result<Vec<Envelope>, TopologyError> {
    let mut clean = cfg.clone();
    clean.fault_plan = Default::default();
    let mut sim = Simulation::new(clean.clone()).with_trace();
    let consortium = crate::netsim::ConsortiumState::new(&clean);
    let txn = Transaction::spanning_all(0, clean.k);
    let mut engine = crate::netsim::build_engine(protocol, &clean, consortium, &txn);
    sim.run_transaction(0, engine.as_mut())?;
    Ok(sim.trace().unwrap_or(&[]).to_vec())
}

/// Phase tags a protocol emits in failure-free runs.
pub fn protocol_phases(protocol: Protocol) -> &'static [Phase] {
    match protocol {
        Protocol::Xlpn22 => {
            &[Phase::VoteReq, Phase::VotePrep, Phase::Ready, Phase::CommitReq, Phase::Commit]
        }
        Protocol::Vldb20 => &[
            Phase::TwoPcVote,
            Phase::TwoPcDecide,
            Phase::PrePrepare,
            Phase::Prepare,
            Phase::Commit,
            Phase::Reply,
        ],
        Protocol::Podc18 => &[
            Phase::HopFwd,
            Phase::HopBwd,
            Phase::PrePrepare,
            Phase::Prepare,
            Phase::Commit,
            Phase::Reply,
        ],
        Protocol::Pbft => &[Phase::PrePrepare, Phase::Prepare, Phase::Commit, Phase::Reply],
    }
}

/// Per-phase topology report row for the CLI: exact at desk scale, with a
/// per-ledger clique lower bound beyond it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PhaseTopology {
    pub phase: Phase,
    pub vertices: usize,
    pub edges: usize,
    pub dimension: usize,
    pub dimension_is_lower_bound: bool,
    pub components: usize,
}

pub fn phase_topology(
    protocol: Protocol,
    phase: Phase,
    cfg: &ClusterConfig,
) -> Result<PhaseTopology, TopologyError> {
    let graph = phase_graph(protocol, phase, cfg)?;
    let (dimension, lower_bound) = match clique_complex(&graph) {
        Ok(complex) => (complex.dimension(), false),
        Err(TopologyError::ScaleExceeded { .. }) => (structural_dimension_bound(&graph, cfg), true),
        Err(e) => return Err(e),
    };
    Ok(PhaseTopology {
        phase,
        vertices: graph.vertices.len(),
        edges: graph.edges.len(),
        dimension,
        dimension_is_lower_bound: lower_bound,
        components: graph.components(),
    })
}

/// Dimension lower bound from known structure: a ledger whose intra
/// clique is fully present contributes dimension `n - 1`; any edge at all
/// contributes at least 1.
fn structural_dimension_bound(graph: &CommGraph, cfg: &ClusterConfig) -> usize {
    let support = graph.undirected_support();
    let mut bound = 0usize;
    if !support.is_empty() {
        bound = 1;
    }
    for ledger in 0..cfg.k {
        let members: Vec<NodeId> = cfg.ledger_nodes(ledger).collect();
        let complete = members.iter().enumerate().all(|(i, &a)| {
            members[i + 1..].iter().all(|&b| support.contains(&(a, b)))
        });
        if complete {
            bound = bound.max(cfg.n as usize - 1);
        }
    }
    bound
}
