//! Cluster configuration: shape of the consortium plus the fault plan,
//! deserializable from JSON with unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::fault::FaultPlan;
use crate::types::max_faulty;

/// The consortium shape: `k` ledgers of `n` nodes each, a per-ledger fault
/// budget `f`, a deterministic seed, and the fault plan for the run.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct ClusterConfig {
    pub k: u32,
    pub n: u32,
    pub f: u32,
    pub seed: u64,
    pub fault_plan: FaultPlan,
}

impl ClusterConfig {
    /// Failure-free config with `f = max_faulty(n)` and seed 0.
    pub fn new(k: u32, n: u32) -> Self {
        ClusterConfig {
            k,
            n,
            f: max_faulty(n.max(1)),
            seed: 0,
            fault_plan: FaultPlan::default(),
        }
    }

    pub fn with_f(mut self, f: u32) -> Self {
        self.f = f;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_fault_plan(mut self, plan: FaultPlan) -> Self {
        self.fault_plan = plan;
        self
    }

    pub fn node_count(&self) -> u64 {
        self.k as u64 * self.n as u64
    }

    /// All node ids of the cluster in ascending order.
    pub fn nodes(&self) -> impl Iterator<Item = crate::types::NodeId> + '_ {
        let n = self.n;
        (0..self.k).flat_map(move |l| (0..n).map(move |r| crate::types::NodeId::new(l, r)))
    }

    /// Nodes of one ledger in ascending rank order.
    pub fn ledger_nodes(&self, ledger: u32) -> impl Iterator<Item = crate::types::NodeId> {
        let n = self.n;
        (0..n).map(move |r| crate::types::NodeId::new(ledger, r))
    }

    /// Parse and validate a JSON document with keys `k`, `n` and optional
    /// `f`, `seed`, `fault_plan`. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDoc = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("json", e.to_string()))?;
        let cfg = ClusterConfig {
            k: doc.k,
            n: doc.n,
            f: doc.f.unwrap_or_else(|| max_faulty(doc.n.max(1))),
            seed: doc.seed.unwrap_or(0),
            fault_plan: doc.fault_plan.unwrap_or_default(),
        };
        validate_config(&cfg)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_config(self)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    k: u32,
    n: u32,
    #[serde(default)]
    f: Option<u32>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    fault_plan: Option<FaultPlan>,
}

/// A violated configuration bound.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError { field, reason: reason.into() }
    }
}

/// Accepts iff `k >= 2`, `n >= 4` and `f <= max_faulty(n)`.
///
/// Fault plans are deliberately not budget-checked here: over-budget plans
/// are allowed to run so that broken regimes stay observable; safety is
/// asserted on the run's outcome instead.
pub fn validate_config(cfg: &ClusterConfig) -> Result<(), ConfigError> {
    if cfg.k < 2 {
        return Err(ConfigError::new(
            "k",
            format!("need at least 2 ledgers for a cross-ledger transaction, got {}", cfg.k),
        ));
    }
    if cfg.n < 4 {
        return Err(ConfigError::new(
            "n",
            format!("need at least 4 nodes per ledger, got {}", cfg.n),
        ));
    }
    let max_f = max_faulty(cfg.n);
    if cfg.f > max_f {
        return Err(ConfigError::new(
            "f",
            format!("fault budget {} exceeds max {} for n = {} (3f+1 <= n)", cfg.f, max_f, cfg.n),
        ));
    }
    Ok(())
}
