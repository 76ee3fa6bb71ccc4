//! Deterministic PSI-CA attacks.
//!
//! Both engines only ever label a node once its count is `0` or equal to its
//! size, so on a noiseless oracle every emitted label is correct.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::planner::MemoTables;
use crate::result::{attack_rng, check_session, stop_on_budget, AttackResult, Recorder, SplitRecord};

/// Max-heap entry; equal priorities pop in insertion order.
struct Queued {
    priority: f64,
    seq: u64,
    node: Vec<usize>,
    count: usize,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct WorkQueue {
    heap: BinaryHeap<Queued>,
    seq: u64,
}

impl WorkQueue {
    fn push(&mut self, node: Vec<usize>, count: usize, priority: f64) {
        self.seq += 1;
        self.heap.push(Queued {
            priority,
            seq: self.seq,
            node,
            count,
        });
    }

    fn pop(&mut self) -> Option<(Vec<usize>, usize)> {
        self.heap.pop().map(|q| (q.node, q.count))
    }
}

fn refuse_noise(oracle: &Oracle<'_>) -> Result<()> {
    if oracle.is_noisy() {
        return Err(Error::Config(
            "deterministic attacks require exact counts; use the statistical attack under noise".into(),
        ));
    }
    Ok(())
}

/// Queries the whole set and returns its count, or `None` if the oracle is out of budget.
fn root_query(oracle: &mut Oracle<'_>, rec: &mut Recorder<'_>, all: &[usize]) -> Result<Option<usize>> {
    let Some(resp) = stop_on_budget(oracle.psi_ca_at(all))? else {
        return Ok(None);
    };
    rec.record(all, &resp);
    Ok(Some(resp.cardinality))
}

/// Hierarchical baseline: even halving of randomly ordered nodes, sibling
/// counts deduced from the parent, unfinished subtrees explored greedily by
/// their positive ratio.
pub fn guo_attack(oracle: &mut Oracle<'_>, x: &Dataset, tau: usize, seed: u64) -> Result<AttackResult> {
    check_session(oracle, x, tau)?;
    refuse_noise(oracle)?;
    let mut rng = attack_rng(seed);
    let mut rec = Recorder::new(x);
    let all: Vec<usize> = (0..x.len()).collect();

    let Some(root) = root_query(oracle, &mut rec, &all)? else {
        return Ok(rec.finish("guo", seed, tau));
    };
    let mut queue = WorkQueue::default();
    let mut current = Some((all, root));
    let ratio = |node: &[usize], count: usize| count as f64 / node.len() as f64;

    loop {
        let (mut node, count) = match current.take().or_else(|| queue.pop()) {
            Some(w) => w,
            None => break,
        };
        if count == 0 || count == node.len() {
            rec.label(&node, count > 0);
            continue;
        }
        if rec.queries >= tau {
            queue.push(node, count, 0.0);
            break;
        }
        node.shuffle(&mut rng);
        let right = node.split_off(node.len() / 2);
        let left = node;
        let Some(resp) = stop_on_budget(oracle.psi_ca_at(&left))? else {
            break;
        };
        let cl = resp.cardinality;
        let cr = count - cl;
        rec.record(&left, &resp).split = Some(SplitRecord {
            parent_size: left.len() + right.len(),
            parent_count: count,
            parent_sum: None,
            left_count: cl,
            right_count: cr,
            left_sum: None,
            right_sum: None,
        });

        let mut open = Vec::with_capacity(2);
        for (child, c) in [(left, cl), (right, cr)] {
            if c == 0 || c == child.len() {
                rec.label(&child, c > 0);
            } else {
                open.push((child, c));
            }
        }
        // Continue depth-first into the child with the higher positive ratio.
        if open.len() == 2 && ratio(&open[1].0, open[1].1) > ratio(&open[0].0, open[0].1) {
            open.swap(0, 1);
        }
        let mut open = open.into_iter();
        current = open.next();
        if let Some((n, c)) = open.next() {
            let p = ratio(&n, c);
            queue.push(n, c, p);
        }
    }
    // Resolved nodes still queued are labelled at no cost.
    while let Some((node, count)) = queue.pop() {
        if count == 0 || count == node.len() {
            rec.label(&node, count > 0);
        }
    }
    Ok(rec.finish("guo", seed, tau))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DypathOptions {
    /// Use this partition size at every split instead of the planned one.
    pub k_override: Option<usize>,
    /// Hand budget that a sub-plan did not need to its sibling and to queued nodes.
    /// With `false` the attack follows the planned budget split exactly.
    pub reclaim: bool,
}

impl Default for DypathOptions {
    fn default() -> Self {
        DypathOptions {
            k_override: None,
            reclaim: true,
        }
    }
}

/// DP-guided attack with default options.
pub fn dypathblazer(
    oracle: &mut Oracle<'_>,
    x: &Dataset,
    tau: usize,
    tables: &MemoTables,
    seed: u64,
) -> Result<AttackResult> {
    dypathblazer_with(oracle, x, tau, tables, seed, &DypathOptions::default())
}

/// DP-guided attack.
///
/// After the root query every node is split with the tabled partition size for
/// its allotted budget. Once the left count is observed, the child with the
/// larger expected leakage becomes the focus. A focus child the tables say is
/// resolvable gets exactly its resolution budget and the sibling the rest;
/// otherwise the focus child takes the whole allotment and the sibling is
/// queued. Nodes outside the tables fall back to an even split.
pub fn dypathblazer_with(
    oracle: &mut Oracle<'_>,
    x: &Dataset,
    tau: usize,
    tables: &MemoTables,
    seed: u64,
    opts: &DypathOptions,
) -> Result<AttackResult> {
    check_session(oracle, x, tau)?;
    refuse_noise(oracle)?;
    let mut rec = Recorder::new(x);
    let all: Vec<usize> = (0..x.len()).collect();
    let Some(root) = root_query(oracle, &mut rec, &all)? else {
        return Ok(rec.finish("dypath", seed, tau));
    };
    let mut run = DypathRun {
        oracle,
        tables,
        opts,
        rng: attack_rng(seed),
        rec,
        pending: WorkQueue::default(),
        tau,
        stopped: false,
    };
    run.explore(all, root, tau - 1)?;
    if opts.reclaim {
        while !run.stopped && run.left() > 0 {
            let Some((node, count)) = run.pending.pop() else {
                break;
            };
            let alloc = run.left();
            run.explore(node, count, alloc)?;
        }
    }
    Ok(run.rec.finish("dypath", seed, tau))
}

struct DypathRun<'a, 'o, 'd> {
    oracle: &'a mut Oracle<'o>,
    tables: &'a MemoTables,
    opts: &'a DypathOptions,
    rng: ChaCha8Rng,
    rec: Recorder<'d>,
    pending: WorkQueue,
    tau: usize,
    stopped: bool,
}

impl DypathRun<'_, '_, '_> {
    fn left(&self) -> usize {
        self.tau - self.rec.queries
    }

    fn phi(&self, n: usize, c: usize) -> Option<usize> {
        if c == 0 || c == n {
            return Some(0);
        }
        if !self.tables.covers(n, 0) {
            return None;
        }
        self.tables.phi(n, c).ok().flatten()
    }

    fn defer(&mut self, node: Vec<usize>, count: usize) {
        let budget = self.left().min(self.tables.tau_max());
        let priority = self.tables.gamma(node.len(), count, budget).unwrap_or(0.0);
        self.pending.push(node, count, priority);
    }

    /// Works on `node` with at most `alloc` queries; returns the queries spent.
    fn explore(&mut self, mut node: Vec<usize>, count: usize, alloc: usize) -> Result<usize> {
        let n = node.len();
        if count == 0 || count == n {
            self.rec.label(&node, count > 0);
            return Ok(0);
        }
        let alloc = alloc.min(self.left());
        if alloc == 0 || self.stopped {
            self.defer(node, count);
            return Ok(0);
        }

        let planned = self.tables.covers(n, alloc);
        let (k, fallback) = match (self.opts.k_override, planned) {
            (Some(k), _) => (k.clamp(1, n - 1), false),
            (None, true) => match self.tables.theta(n, count, alloc)? {
                Some(k) => (k, false),
                None => (n / 2, true),
            },
            (None, false) => (n / 2, true),
        };

        node.shuffle(&mut self.rng);
        let right = node.split_off(k);
        let left = node;
        let resp = match stop_on_budget(self.oracle.psi_ca_at(&left))? {
            Some(r) => r,
            None => {
                self.stopped = true;
                return Ok(0);
            }
        };
        let cl = resp.cardinality;
        let cr = count - cl;
        let entry = self.rec.record(&left, &resp);
        entry.split = Some(SplitRecord {
            parent_size: n,
            parent_count: count,
            parent_sum: None,
            left_count: cl,
            right_count: cr,
            left_sum: None,
            right_sum: None,
        });
        if fallback {
            entry.note = Some(format!("state ({n}, {count}, {alloc}) outside tables: even split"));
        }

        let rest = alloc - 1;
        let focus_left = if self.tables.covers(n, rest) {
            let (fl, fr) = self.tables.focus_values(n, count, k, cl, rest)?;
            fl >= fr
        } else {
            // Outside the tables: prefer whichever child is already finished.
            !(cr == 0 || cr == right.len())
        };
        let ((f, fc), (s, sc)) = if focus_left {
            ((left, cl), (right, cr))
        } else {
            ((right, cr), (left, cl))
        };

        let mut used = 1;
        match self.phi(f.len(), fc) {
            Some(phi) if phi <= rest => {
                let u = self.explore(f, fc, phi)?;
                used += u;
                let sibling = if self.opts.reclaim { rest - u } else { rest - phi };
                used += self.explore(s, sc, sibling)?;
            }
            _ => {
                let u = self.explore(f, fc, rest)?;
                used += u;
                let sibling = if self.opts.reclaim { rest - u } else { 0 };
                used += self.explore(s, sc, sibling)?;
            }
        }
        Ok(used)
    }
}
