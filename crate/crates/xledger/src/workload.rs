//! Deterministic generation of cross-ledger transaction workloads and the
//! three benchmark grids.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::types::Transaction;

/// How many ledgers each generated transaction touches.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum LedgersPerTxn {
    /// Every transaction spans all k ledgers (matches the cost model,
    /// where every ledger participates in every commit).
    All,
    /// Touched-set size drawn uniformly from `min..=max`.
    Uniform { min: u32, max: u32 },
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub txn_count: u64,
    pub k: u32,
    pub ledgers_per_txn: LedgersPerTxn,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn all_ledgers(txn_count: u64, k: u32, seed: u64) -> Self {
        WorkloadSpec { txn_count, k, ledgers_per_txn: LedgersPerTxn::All, seed }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(ConfigError::new("k", "need at least 2 ledgers"));
        }
        if let LedgersPerTxn::Uniform { min, max } = self.ledgers_per_txn {
            if min < 2 {
                return Err(ConfigError::new("ledgers_per_txn", "min touched ledgers is 2"));
            }
            if max < min || max > self.k {
                return Err(ConfigError::new(
                    "ledgers_per_txn",
                    format!("need min <= max <= k, got {min}..{max} with k = {}", self.k),
                ));
            }
        }
        Ok(())
    }
}

/// Generate exactly `txn_count` transactions with ids `0..txn_count`.
/// Pure function of the spec: the same seed yields the same list.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Transaction>, ConfigError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut txns = Vec::with_capacity(spec.txn_count as usize);
    for id in 0..spec.txn_count {
        let touched: BTreeSet<u32> = match spec.ledgers_per_txn {
            LedgersPerTxn::All => (0..spec.k).collect(),
            LedgersPerTxn::Uniform { min, max } => {
                let size = rng.gen_range(min..=max);
                let mut ledgers: Vec<u32> = (0..spec.k).collect();
                ledgers.shuffle(&mut rng);
                ledgers.into_iter().take(size as usize).collect()
            }
        };
        txns.push(Transaction { id, touched_ledgers: touched, payload_tag: format!("txn{id}") });
    }
    Ok(txns)
}

/// One benchmark grid: the cartesian product of its axis values.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExperimentGrid {
    pub name: &'static str,
    pub txn_counts: Vec<u64>,
    pub k_values: Vec<u32>,
    pub n_values: Vec<u32>,
}

/// One cell of a grid.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GridCell {
    pub txns: u64,
    pub k: u32,
    pub n: u32,
}

impl ExperimentGrid {
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &txns in &self.txn_counts {
            for &k in &self.k_values {
                for &n in &self.n_values {
                    out.push(GridCell { txns, k, n });
                }
            }
        }
        out
    }

    /// Largest transaction count on the grid's txn axis.
    pub fn max_txns(&self) -> u64 {
        self.txn_counts.iter().copied().max().unwrap_or(0)
    }

    /// The same grid with every cell's transaction count scaled so the
    /// largest cell runs `target` transactions (integer-proportional,
    /// at least 1). Keeps axis shape intact for trend checks.
    pub fn scaled_to(&self, target: u64) -> ExperimentGrid {
        let max = self.max_txns().max(1);
        ExperimentGrid {
            name: self.name,
            txn_counts: self
                .txn_counts
                .iter()
                .map(|&t| (t * target / max).max(1))
                .collect(),
            k_values: self.k_values.clone(),
            n_values: self.n_values.clone(),
        }
    }
}

/// The three benchmark grids: transaction count sweep, ledger-size sweep
/// and ledger-count sweep, with the unvaried axes at their defaults
/// (5,000 transactions, 4 ledgers, 32 or 16 nodes as noted).
pub fn paper_grids() -> Vec<ExperimentGrid> {
    vec![
        ExperimentGrid {
            name: "txn",
            txn_counts: vec![1000, 2000, 4000, 5000, 8000, 16000],
            k_values: vec![4],
            n_values: vec![32],
        },
        ExperimentGrid {
            name: "node",
            txn_counts: vec![5000],
            k_values: vec![4],
            n_values: vec![8, 16, 24, 32],
        },
        ExperimentGrid {
            name: "ledger",
            txn_counts: vec![5000],
            k_values: vec![2, 4, 6, 8],
            n_values: vec![16],
        },
    ]
}

pub fn grid_by_name(name: &str) -> Option<ExperimentGrid> {
    paper_grids().into_iter().find(|g| g.name == name)
}
