//! Offline dynamic program over attack states `(n, c, tau)`.
//!
//! For a node of `n` unresolved elements known to hold `c` positives and a
//! remaining budget of `tau` queries, the tables record
//!
//! * `gamma`: the best expected number of elements resolved from the node,
//! * `theta`: the partition size `K` achieving it (smallest on ties),
//! * `phi`:   the least budget with which the node is always fully resolved.
//!
//! A split queries the first `K` elements of a shuffled node, which costs one
//! query, and reveals the left count `C_L ~ Hypergeom(n, c, K)`. For each
//! realized outcome the attacker then focuses on one child. If that child is
//! fully resolvable within the remaining budget it is resolved with exactly
//! `phi(child)` queries and the sibling continues with the rest; otherwise the
//! whole remaining budget goes to the child. The focus child is chosen per
//! outcome, which is when the attacker actually observes `C_L`.
//!
//! Tables are dense `(n, c, tau)` arrays, `O(n_max^2 * tau_max)` cells.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MEMO_MAGIC: &[u8; 4] = b"APSI";
pub const MEMO_VERSION: u32 = 1;
const PHI_UNRESOLVABLE: i32 = -1;
/// Slack when testing `gamma >= n` in floating point.
pub const RESOLVED_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackState {
    pub n: usize,
    pub c: usize,
    pub tau: usize,
}

impl AttackState {
    pub fn new(n: usize, c: usize, tau: usize) -> Result<Self> {
        if n == 0 || c > n {
            return Err(Error::Argument(format!("invalid state ({n}, {c}, {tau})")));
        }
        Ok(AttackState { n, c, tau })
    }

    /// All-positive or all-negative nodes need no further queries.
    pub fn is_resolved(&self) -> bool {
        self.c == 0 || self.c == self.n
    }
}

/// `P(C_L = c_left)` when `k` of `state_n` elements, `state_c` of them
/// positive, are drawn without replacement.
pub fn hypergeom_pmf(c_left: usize, state_n: usize, state_c: usize, k: usize) -> Result<f64> {
    if state_c > state_n || k > state_n {
        return Err(Error::Argument(format!(
            "hypergeometric arguments out of range: n={state_n}, c={state_c}, k={k}"
        )));
    }
    if c_left > k || c_left > state_c || k - c_left > state_n - state_c {
        return Ok(0.0);
    }
    Ok(LnFact::new(state_n).pmf(c_left, state_n, state_c, k))
}

/// Cached log-factorials for the table builder's hot loop.
struct LnFact(Vec<f64>);

impl LnFact {
    fn new(n: usize) -> Self {
        let mut v = Vec::with_capacity(n + 1);
        let mut acc = 0.0f64;
        v.push(acc);
        for i in 1..=n {
            acc += (i as f64).ln();
            v.push(acc);
        }
        LnFact(v)
    }

    fn choose(&self, a: usize, b: usize) -> f64 {
        self.0[a] - self.0[b] - self.0[a - b]
    }

    fn pmf(&self, cl: usize, n: usize, c: usize, k: usize) -> f64 {
        (self.choose(c, cl) + self.choose(n - c, k - cl) - self.choose(n, k)).exp()
    }
}

/// Support of `C_L` for a split of size `k`.
pub fn left_count_support(n: usize, c: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    k.saturating_sub(n - c)..=k.min(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoTables {
    n_max: usize,
    tau_max: usize,
    gamma: Vec<f64>,
    theta: Vec<i32>,
    phi: Vec<i32>,
}

#[derive(Serialize, Deserialize)]
struct MemoHeader {
    n_max: usize,
    tau_max: usize,
}

impl MemoTables {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    pub fn covers(&self, n: usize, tau: usize) -> bool {
        n >= 1 && n <= self.n_max && tau <= self.tau_max
    }

    fn cell(&self, n: usize, c: usize, tau: usize) -> usize {
        (n * (self.n_max + 1) + c) * (self.tau_max + 1) + tau
    }

    fn pair(&self, n: usize, c: usize) -> usize {
        n * (self.n_max + 1) + c
    }

    fn check(&self, n: usize, c: usize, tau: usize) -> Result<()> {
        if n == 0 || c > n {
            return Err(Error::Argument(format!("invalid state ({n}, {c}, {tau})")));
        }
        if !self.covers(n, tau) {
            return Err(Error::OutOfRange(format!(
                "state ({n}, {c}, {tau}) outside tables (n_max={}, tau_max={})",
                self.n_max, self.tau_max
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, n: usize, c: usize, tau: usize) -> Result<f64> {
        self.check(n, c, tau)?;
        Ok(self.gamma[self.cell(n, c, tau)])
    }

    /// Optimal partition size, `None` for resolved states or zero budget.
    pub fn theta(&self, n: usize, c: usize, tau: usize) -> Result<Option<usize>> {
        self.check(n, c, tau)?;
        let k = self.theta[self.cell(n, c, tau)];
        Ok((k > 0).then_some(k as usize))
    }

    /// Least budget that always resolves the node, `None` if above `tau_max`.
    pub fn phi(&self, n: usize, c: usize) -> Result<Option<usize>> {
        self.check(n, c, 0)?;
        let p = self.phi[self.pair(n, c)];
        Ok((p >= 0).then_some(p as usize))
    }

    fn gamma_raw(&self, n: usize, c: usize, tau: usize) -> f64 {
        self.gamma[self.cell(n, c, tau)]
    }

    fn phi_raw(&self, n: usize, c: usize) -> Option<usize> {
        let p = self.phi[self.pair(n, c)];
        (p >= 0).then_some(p as usize)
    }

    /// Value of focusing on child `(a_n, a_c)` with sibling `(b_n, b_c)`
    /// and `rest` queries left after the split.
    fn focus_raw(&self, a_n: usize, a_c: usize, b_n: usize, b_c: usize, rest: usize) -> f64 {
        match self.phi_raw(a_n, a_c) {
            Some(p) if p <= rest => a_n as f64 + self.gamma_raw(b_n, b_c, rest - p),
            _ => self.gamma_raw(a_n, a_c, rest),
        }
    }

    /// Expected leakage of focusing left and right after observing `c_left`
    /// on a split of size `k` of state `(n, c)` with `rest` queries left.
    pub fn focus_values(&self, n: usize, c: usize, k: usize, c_left: usize, rest: usize) -> Result<(f64, f64)> {
        self.check(n, c, rest)?;
        if k == 0 || k >= n || !left_count_support(n, c, k).contains(&c_left) {
            return Err(Error::Argument(format!("split k={k}, c_left={c_left} invalid for ({n}, {c})")));
        }
        let (b_n, b_c) = (n - k, c - c_left);
        Ok((
            self.focus_raw(k, c_left, b_n, b_c, rest),
            self.focus_raw(b_n, b_c, k, c_left, rest),
        ))
    }

    /// `Gamma_K(n, c, tau)`: expected leakage of splitting with size `k`.
    pub fn split_value(&self, n: usize, c: usize, k: usize, tau: usize) -> Result<f64> {
        self.check(n, c, tau)?;
        if tau == 0 || k == 0 || k >= n {
            return Err(Error::Argument(format!("no split of size {k} for ({n}, {c}, {tau})")));
        }
        let lf = LnFact::new(n);
        Ok(split_value_raw(self, &lf, n, c, k, tau - 1))
    }

    /// Builds all tables bottom-up for `n <= n_max`, `tau <= tau_max`.
    pub fn build(n_max: usize, tau_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Argument("n_max must be at least 1".into()));
        }
        let cells = (n_max + 1) * (n_max + 1) * (tau_max + 1);
        let mut t = MemoTables {
            n_max,
            tau_max,
            gamma: vec![0.0; cells],
            theta: vec![0; cells],
            phi: vec![PHI_UNRESOLVABLE; (n_max + 1) * (n_max + 1)],
        };
        let lf = LnFact::new(n_max);
        for n in 1..=n_max {
            // Children are strictly smaller than n, so a whole layer is independent.
            let layer: Vec<(usize, usize, f64, i32)> = (0..=n)
                .into_par_iter()
                .flat_map_iter(|c| (0..=tau_max).map(move |tau| (c, tau)))
                .map(|(c, tau)| {
                    let (g, k) = solve_state(&t, &lf, n, c, tau);
                    (c, tau, g, k)
                })
                .collect();
            for (c, tau, g, k) in layer {
                let i = t.cell(n, c, tau);
                t.gamma[i] = g;
                t.theta[i] = k;
            }
            for c in 0..=n {
                let phi = (0..=tau_max).find(|&tau| t.gamma_raw(n, c, tau) >= n as f64 - RESOLVED_TOL);
                let i = t.pair(n, c);
                t.phi[i] = phi.map_or(PHI_UNRESOLVABLE, |p| p as i32);
            }
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&MemoHeader {
            n_max: self.n_max,
            tau_max: self.tau_max,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + self.gamma.len() * 12 + self.phi.len() * 4);
        out.extend_from_slice(MEMO_MAGIC);
        out.extend_from_slice(&MEMO_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for g in &self.gamma {
            out.extend_from_slice(&g.to_le_bytes());
        }
        for k in &self.theta {
            out.extend_from_slice(&k.to_le_bytes());
        }
        for p in &self.phi {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |len: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < len {
                return Err(Error::Format(format!("truncated file while reading {what}")));
            }
            let (head, tail) = cur.split_at(len);
            cur = tail;
            Ok(head)
        };
        if take(4, "magic")? != MEMO_MAGIC {
            return Err(Error::Format("bad magic header".into()));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != MEMO_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}, expected {MEMO_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(take(4, "header length")?.try_into().unwrap()) as usize;
        let header: MemoHeader = serde_json::from_slice(take(header_len, "header")?)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let (n_max, tau_max) = (header.n_max, header.tau_max);
        if n_max == 0 {
            return Err(Error::Format("n_max must be at least 1".into()));
        }
        let cells = (n_max + 1)
            .checked_mul(n_max + 1)
            .and_then(|x| x.checked_mul(tau_max + 1))
            .ok_or_else(|| Error::Format("table dimensions overflow".into()))?;
        let pairs = (n_max + 1) * (n_max + 1);
        let gamma = take(cells * 8, "gamma")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let theta = take(cells * 4, "theta")?
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let phi = take(pairs * 4, "phi")?
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cur.len())));
        }
        Ok(MemoTables {
            n_max,
            tau_max,
            gamma,
            theta,
            phi,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn split_value_raw(t: &MemoTables, lf: &LnFact, n: usize, c: usize, k: usize, rest: usize) -> f64 {
    left_count_support(n, c, k)
        .map(|cl| {
            let (b_n, b_c) = (n - k, c - cl);
            let left = t.focus_raw(k, cl, b_n, b_c, rest);
            let right = t.focus_raw(b_n, b_c, k, cl, rest);
            lf.pmf(cl, n, c, k) * left.max(right)
        })
        .sum()
}

fn solve_state(t: &MemoTables, lf: &LnFact, n: usize, c: usize, tau: usize) -> (f64, i32) {
    if c == 0 || c == n {
        return (n as f64, 0);
    }
    if tau == 0 {
        return (0.0, 0);
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 1..=n.div_ceil(2) {
        let v = split_value_raw(t, lf, n, c, k, tau - 1);
        if v > best.0 + 1e-12 {
            best = (v, k as i32);
        }
    }
    best
}

/// `Theta(state)`, ties already broken toward the smallest `K`.
pub fn optimal_k(state: AttackState, tables: &MemoTables) -> Result<usize> {
    if state.is_resolved() {
        return Err(Error::Argument(format!(
            "state ({}, {}, {}) is already resolved",
            state.n, state.c, state.tau
        )));
    }
    if state.tau == 0 {
        return Err(Error::Argument("no budget left to split".into()));
    }
    tables
        .theta(state.n, state.c, state.tau)?
        .ok_or_else(|| Error::OutOfRange("no partition recorded".into()))
}
