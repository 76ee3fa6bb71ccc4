//! PSI-SUM attack: subset-sum enumeration over a pool plus a split loop that
//! queries one candidate combination at a time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, Protocol};
use crate::result::{attack_rng, check_session, stop_on_budget, AttackResult, Recorder, SplitRecord};

pub const DEFAULT_COMBO_CAP: usize = 1_000_000;
pub const DEFAULT_POOL_SIZE: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumProblem {
    pub payloads: Vec<u64>,
    pub target_count: usize,
    pub target_sum: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Index subsets of the pool, each sorted ascending.
    pub combos: Vec<Vec<usize>>,
    /// Set when more than `combo_cap` combinations exist; `combos` then holds the first `combo_cap`.
    pub truncated: bool,
}

impl CandidateSet {
    pub fn is_unique(&self) -> bool {
        !self.truncated && self.combos.len() == 1
    }
}

/// Expected leakage per remaining candidate.
pub fn priority(pool_size: usize, candidates: &CandidateSet) -> f64 {
    pool_size as f64 / candidates.combos.len().max(1) as f64
}

/// Enumerates every subset of `target_count` pool entries whose payloads sum to
/// `target_sum`. Entries with equal payloads are distinct.
pub fn nsum_solve(problem: &SumProblem, combo_cap: usize) -> Result<CandidateSet> {
    if combo_cap == 0 {
        return Err(Error::Argument("combo_cap must be at least 1".into()));
    }
    let n = problem.payloads.len();
    if problem.target_count > n {
        return Err(Error::Argument(format!(
            "target count {} exceeds pool size {n}",
            problem.target_count
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (problem.payloads[i], i));
    let vals: Vec<u128> = order.iter().map(|&i| problem.payloads[i] as u128).collect();
    let mut prefix = vec![0u128; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + vals[i];
    }
    let mut s = Solver {
        vals: &vals,
        prefix: &prefix,
        limit: combo_cap + 1,
        stack: Vec::with_capacity(problem.target_count),
        found: Vec::new(),
    };
    s.search(0, problem.target_count, problem.target_sum as u128);

    let truncated = s.found.len() > combo_cap;
    let mut combos: Vec<Vec<usize>> = s
        .found
        .into_iter()
        .take(combo_cap)
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|p| order[p]).collect();
            c.sort_unstable();
            c
        })
        .collect();
    combos.sort();
    Ok(CandidateSet { combos, truncated })
}

struct Solver<'a> {
    vals: &'a [u128],
    prefix: &'a [u128],
    limit: usize,
    stack: Vec<usize>,
    found: Vec<Vec<usize>>,
}

impl Solver<'_> {
    fn full(&self) -> bool {
        self.found.len() >= self.limit
    }

    fn emit(&mut self, extra: &[usize]) {
        let mut c = self.stack.clone();
        c.extend_from_slice(extra);
        self.found.push(c);
    }

    /// Picks `k` sorted positions from `start..` summing to `target`.
    fn search(&mut self, start: usize, k: usize, target: u128) {
        let n = self.vals.len();
        if self.full() {
            return;
        }
        if k == 0 {
            if target == 0 {
                self.emit(&[]);
            }
            return;
        }
        if n - start < k {
            return;
        }
        // Smallest and largest sums reachable with k picks from start..n.
        if self.prefix[start + k] - self.prefix[start] > target || self.prefix[n] - self.prefix[n - k] < target {
            return;
        }
        match k {
            1 => {
                for p in start..n {
                    if self.vals[p] == target {
                        self.emit(&[p]);
                        if self.full() {
                            return;
                        }
                    } else if self.vals[p] > target {
                        break;
                    }
                }
            }
            2 => self.two_pointer(start, target),
            _ => {
                for p in start..=n - k {
                    if self.vals[p] > target || self.full() {
                        break;
                    }
                    self.stack.push(p);
                    self.search(p + 1, k - 1, target - self.vals[p]);
                    self.stack.pop();
                }
            }
        }
    }

    fn two_pointer(&mut self, start: usize, target: u128) {
        let (mut i, mut j) = (start, self.vals.len() - 1);
        while i < j && !self.full() {
            let s = self.vals[i] + self.vals[j];
            match s.cmp(&target) {
                Ordering::Less => i += 1,
                Ordering::Greater => j -= 1,
                Ordering::Equal if self.vals[i] == self.vals[j] => {
                    // A run of equal values: every pair inside it matches.
                    for a in i..j {
                        for b in a + 1..=j {
                            if self.full() {
                                return;
                            }
                            self.emit(&[a, b]);
                        }
                    }
                    return;
                }
                Ordering::Equal => {
                    let mut i2 = i;
                    while self.vals[i2] == self.vals[i] {
                        i2 += 1;
                    }
                    let mut j2 = j;
                    while self.vals[j2] == self.vals[j] {
                        j2 -= 1;
                    }
                    for a in i..i2 {
                        for b in j2 + 1..=j {
                            if self.full() {
                                return;
                            }
                            self.emit(&[a, b]);
                        }
                    }
                    i = i2;
                    j = j2;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSumOptions {
    pub combo_cap: usize,
    /// Elements per working pool; `None` means `min(|X|, 24)`.
    pub pool_size: Option<usize>,
}

impl Default for TreeSumOptions {
    fn default() -> Self {
        TreeSumOptions {
            combo_cap: DEFAULT_COMBO_CAP,
            pool_size: None,
        }
    }
}

/// A pool region with known count and sum.
struct Node {
    positions: Vec<usize>,
    count: usize,
    sum: u64,
    cands: CandidateSet,
}

struct Queued {
    priority: f64,
    seq: u64,
    node: Node,
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

pub fn treesum_explorer(
    oracle: &mut Oracle<'_>,
    x: &Dataset,
    tau: usize,
    combo_cap: usize,
    seed: u64,
) -> Result<AttackResult> {
    let opts = TreeSumOptions {
        combo_cap,
        pool_size: None,
    };
    treesum_explorer_with(oracle, x, tau, seed, &opts)
}

/// PSI-SUM explorer. `X` is shuffled and cut into pools; each pool costs one
/// query, after which candidate combinations drive the splits. A node whose
/// candidate set is unique is classified without further queries.
pub fn treesum_explorer_with(
    oracle: &mut Oracle<'_>,
    x: &Dataset,
    tau: usize,
    seed: u64,
    opts: &TreeSumOptions,
) -> Result<AttackResult> {
    check_session(oracle, x, tau)?;
    if oracle.config().protocol != Protocol::Sum {
        return Err(Error::Config("treesum needs a PSI-SUM oracle".into()));
    }
    if oracle.is_noisy() {
        return Err(Error::Config("treesum needs exact sums".into()));
    }
    if opts.combo_cap == 0 {
        return Err(Error::Argument("combo_cap must be at least 1".into()));
    }
    let payloads = x
        .payloads()
        .ok_or_else(|| Error::Config("treesum needs attacker-side payloads for X".into()))?;
    let pool_size = opts.pool_size.unwrap_or(DEFAULT_POOL_SIZE.min(x.len())).max(1);

    let mut rng = attack_rng(seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng);

    let mut ex = Explorer {
        oracle,
        payloads,
        combo_cap: opts.combo_cap,
        rec: Recorder::new(x),
        queue: BinaryHeap::new(),
        seq: 0,
        tau,
    };
    'pools: for pool in order.chunks(pool_size) {
        if ex.rec.queries >= tau {
            break;
        }
        let Some(resp) = stop_on_budget(ex.oracle.psi_sum_at(pool))? else {
            break;
        };
        let sum = resp.sum.unwrap_or(0);
        let node = ex.solve(pool.to_vec(), resp.cardinality, sum)?;
        ex.rec.record(pool, &resp).combos = Some([node.cands.combos.len(), 0]);

        let mut current = Some(node);
        loop {
            let Some(node) = current.take().or_else(|| ex.queue.pop().map(|q| q.node)) else {
                break;
            };
            if ex.settle(&node) {
                continue;
            }
            if ex.rec.queries >= tau {
                ex.enqueue(node);
                break 'pools;
            }
            match ex.split(node)? {
                Some(next) => current = Some(next),
                None => break 'pools,
            }
        }
    }
    // Anything already determined but still queued costs nothing to label.
    while let Some(q) = ex.queue.pop() {
        ex.settle(&q.node);
    }
    Ok(ex.rec.finish("treesum", seed, tau))
}

struct Explorer<'a, 'o, 'd> {
    oracle: &'a mut Oracle<'o>,
    payloads: &'a [u64],
    combo_cap: usize,
    rec: Recorder<'d>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    tau: usize,
}

impl Explorer<'_, '_, '_> {
    fn solve(&self, positions: Vec<usize>, count: usize, sum: u64) -> Result<Node> {
        let problem = SumProblem {
            payloads: positions.iter().map(|&p| self.payloads[p]).collect(),
            target_count: count,
            target_sum: sum,
        };
        let cands = nsum_solve(&problem, self.combo_cap)?;
        if cands.combos.is_empty() {
            return Err(Error::Domain(format!(
                "no {count} of {} pool elements sum to {sum}; attacker payloads disagree with the oracle",
                positions.len()
            )));
        }
        Ok(Node {
            positions,
            count,
            sum,
            cands,
        })
    }

    /// Labels the node if its membership is determined.
    fn settle(&mut self, node: &Node) -> bool {
        if node.count == 0 || node.count == node.positions.len() {
            self.rec.label(&node.positions, node.count > 0);
            return true;
        }
        if node.cands.is_unique() {
            let combo = &node.cands.combos[0];
            let mut pos = Vec::with_capacity(combo.len());
            let mut neg = Vec::new();
            let mut it = combo.iter().peekable();
            for (i, &p) in node.positions.iter().enumerate() {
                if it.peek() == Some(&&i) {
                    it.next();
                    pos.push(p);
                } else {
                    neg.push(p);
                }
            }
            self.rec.label(&pos, true);
            self.rec.label(&neg, false);
            return true;
        }
        false
    }

    fn enqueue(&mut self, node: Node) {
        self.seq += 1;
        self.queue.push(Queued {
            priority: priority(node.positions.len(), &node.cands),
            seq: self.seq,
            node,
        });
    }

    /// Queries one side of an undetermined node and returns the branch to
    /// continue with; the other branch is queued. `None` once the budget is gone.
    fn split(&mut self, node: Node) -> Result<Option<Node>> {
        debug_assert!(self.rec.queries < self.tau);
        let n = node.positions.len();
        let (left, right, note): (Vec<usize>, Vec<usize>, Option<String>) = if node.cands.truncated {
            let half = n / 2;
            (
                node.positions[..half].to_vec(),
                node.positions[half..].to_vec(),
                Some(format!(
                    "candidate list capped at {}: even split",
                    self.combo_cap
                )),
            )
        } else {
            let combo = &node.cands.combos[0];
            let mut l = Vec::with_capacity(combo.len());
            let mut r = Vec::with_capacity(n - combo.len());
            let mut it = combo.iter().peekable();
            for (i, &p) in node.positions.iter().enumerate() {
                if it.peek() == Some(&&i) {
                    it.next();
                    l.push(p);
                } else {
                    r.push(p);
                }
            }
            (l, r, None)
        };
        let Some(resp) = stop_on_budget(self.oracle.psi_sum_at(&left))? else {
            self.enqueue(node);
            return Ok(None);
        };
        let cl = resp.cardinality;
        let sl = resp.sum.unwrap_or(0);
        let (cr, sr) = match (node.count.checked_sub(cl), node.sum.checked_sub(sl)) {
            (Some(c), Some(s)) => (c, s),
            _ => return Err(Error::Domain("child observation exceeds its parent".into())),
        };
        let l = self.solve(left, cl, sl)?;
        let r = self.solve(right, cr, sr)?;
        let entry = self.rec.record(&l.positions, &resp);
        entry.split = Some(SplitRecord {
            parent_size: n,
            parent_count: node.count,
            parent_sum: Some(node.sum),
            left_count: cl,
            right_count: cr,
            left_sum: Some(sl),
            right_sum: Some(sr),
        });
        entry.combos = Some([l.cands.combos.len(), r.cands.combos.len()]);
        entry.note = note;

        let lp = priority(l.positions.len(), &l.cands);
        let rp = priority(r.positions.len(), &r.cands);
        // Equal priority keeps the queried side.
        let (go, park) = if rp > lp { (r, l) } else { (l, r) };
        self.enqueue(park);
        Ok(Some(go))
    }
}
