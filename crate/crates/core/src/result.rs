//! Attack output shared by every engine, plus the per-session bookkeeping
//! the engines use to build it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ElementId};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleResponse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub parent_size: usize,
    pub parent_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_sum: Option<u64>,
    pub left_count: usize,
    pub right_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_sum: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_sum: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub query: Vec<ElementId>,
    pub cardinality: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRecord>,
    /// Surviving candidate combinations for the left and right child (PSI-SUM).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combos: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub algo: String,
    pub seed: u64,
    pub tau: usize,
    pub queries_used: usize,
    pub z_pos: Vec<ElementId>,
    pub z_neg: Vec<ElementId>,
    pub trace: Vec<TraceEntry>,
}

impl AttackResult {
    /// Number of elements given a label.
    pub fn leakage(&self) -> usize {
        self.z_pos.len() + self.z_neg.len()
    }
}

/// Labels and trace for one attack session over positions of `X`.
pub(crate) struct Recorder<'a> {
    dataset: &'a Dataset,
    labels: Vec<Option<bool>>,
    pub trace: Vec<TraceEntry>,
    pub queries: usize,
}

impl<'a> Recorder<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Recorder {
            dataset,
            labels: vec![None; dataset.len()],
            trace: Vec::new(),
            queries: 0,
        }
    }

    pub fn label(&mut self, positions: &[usize], positive: bool) {
        for &p in positions {
            debug_assert!(self.labels[p].is_none_or(|l| l == positive));
            self.labels[p] = Some(positive);
        }
    }

    pub fn record(&mut self, positions: &[usize], resp: &OracleResponse) -> &mut TraceEntry {
        self.queries += 1;
        self.trace.push(TraceEntry {
            query: positions.iter().map(|&p| self.dataset.id(p).clone()).collect(),
            cardinality: resp.cardinality,
            sum: resp.sum,
            split: None,
            combos: None,
            note: None,
        });
        self.trace.last_mut().unwrap()
    }

    pub fn finish(self, algo: &str, seed: u64, tau: usize) -> AttackResult {
        let mut z_pos = Vec::new();
        let mut z_neg = Vec::new();
        for (p, l) in self.labels.iter().enumerate() {
            match l {
                Some(true) => z_pos.push(self.dataset.id(p).clone()),
                Some(false) => z_neg.push(self.dataset.id(p).clone()),
                None => {}
            }
        }
        AttackResult {
            algo: algo.to_string(),
            seed,
            tau,
            queries_used: self.queries,
            z_pos,
            z_neg,
            trace: self.trace,
        }
    }
}

/// Attack randomness, on its own ChaCha stream so that reusing a data or
/// noise seed does not correlate the attack with the instance.
pub(crate) fn attack_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Common preconditions of the attack entry points.
pub(crate) fn check_session(oracle: &Oracle<'_>, x: &Dataset, tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::Argument("attack budget tau must be at least 1".into()));
    }
    if oracle.dataset().elements() != x.elements() {
        return Err(Error::Domain("oracle was registered with a different attacker set".into()));
    }
    Ok(())
}

/// Maps an oracle error to "stop here": budget exhaustion ends the session
/// and keeps the partial result, anything else propagates.
pub(crate) fn stop_on_budget<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::BudgetExhausted) => Ok(None),
        Err(e) => Err(e),
    }
}
