#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use num_rational::Ratio;
use psi_leakage::data::{generate_synthetic, Dataset, ElementId, PayloadSpec, TargetSet};
use psi_leakage::result::AttackResult;

pub type Q = Ratio<i128>;

/// Exhaustive search over hierarchical policies with exact arithmetic.
///
/// The left-count distribution comes from enumerating every subset of a
/// concrete node, every partition size `1..n` is tried, and after each
/// observation both children are tried as the focus. A child counts as
/// resolvable once its optimal value equals its size exactly.
pub struct PolicyOracle {
    gamma: HashMap<(usize, usize, usize), Q>,
    dist: HashMap<(usize, usize, usize), Vec<(usize, Q)>>,
}

impl PolicyOracle {
    pub fn new() -> Self {
        PolicyOracle {
            gamma: HashMap::new(),
            dist: HashMap::new(),
        }
    }

    /// Distribution of positives among `k` of `n` elements with `c` positives,
    /// by counting subsets of `{0..n}` where `{0..c}` are the positives.
    fn left_dist(&mut self, n: usize, c: usize, k: usize) -> Vec<(usize, Q)> {
        if let Some(d) = self.dist.get(&(n, c, k)) {
            return d.clone();
        }
        let pos_mask: u32 = (1u32 << c) - 1;
        let mut counts = vec![0i128; k + 1];
        let mut total = 0i128;
        for m in 0u32..(1u32 << n) {
            if m.count_ones() as usize == k {
                counts[(m & pos_mask).count_ones() as usize] += 1;
                total += 1;
            }
        }
        let d: Vec<(usize, Q)> = counts
            .into_iter()
            .enumerate()
            .filter(|&(_, x)| x > 0)
            .map(|(cl, x)| (cl, Q::new(x, total)))
            .collect();
        self.dist.insert((n, c, k), d.clone());
        d
    }

    pub fn gamma(&mut self, n: usize, c: usize, tau: usize) -> Q {
        if c == 0 || c == n {
            return Q::from_integer(n as i128);
        }
        if tau == 0 {
            return Q::from_integer(0);
        }
        if let Some(v) = self.gamma.get(&(n, c, tau)) {
            return *v;
        }
        let mut best = Q::from_integer(0);
        for k in 1..n {
            let mut e = Q::from_integer(0);
            for (cl, p) in self.left_dist(n, c, k) {
                let l = (k, cl);
                let r = (n - k, c - cl);
                let a = self.focus(l, r, tau - 1);
                let b = self.focus(r, l, tau - 1);
                e += p * a.max(b);
            }
            best = best.max(e);
        }
        self.gamma.insert((n, c, tau), best);
        best
    }

    /// Smallest budget that resolves `(n, c)` for sure, searched up to `limit`.
    pub fn phi(&mut self, n: usize, c: usize, limit: usize) -> Option<usize> {
        (0..=limit).find(|&t| self.gamma(n, c, t) == Q::from_integer(n as i128))
    }

    fn focus(&mut self, a: (usize, usize), b: (usize, usize), r: usize) -> Q {
        match self.phi(a.0, a.1, r) {
            Some(p) => Q::from_integer(a.0 as i128) + self.gamma(b.0, b.1, r - p),
            None => self.gamma(a.0, a.1, r),
        }
    }
}

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

pub fn instance(n: usize, positives: usize, payload: PayloadSpec, seed: u64) -> (Dataset, TargetSet) {
    let (x, y, _) = generate_synthetic(n, positives, payload, seed).unwrap();
    (x, y)
}

/// Number of labels that disagree with the target set.
pub fn wrong_labels(r: &AttackResult, y: &TargetSet) -> usize {
    let members: &HashSet<ElementId> = y.members();
    r.z_pos.iter().filter(|e| !members.contains(*e)).count() + r.z_neg.iter().filter(|e| members.contains(*e)).count()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}
