//! Worst-case leakage bounds and evaluation metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::actbayes::PosteriorVector;
use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::planner::{left_count_support, AttackState, MemoTables, RESOLVED_TOL};
use crate::result::AttackResult;

/// Rates with a zero denominator are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_leakage_pct: Option<f64>,
    pub pos_leakage_pct: Option<f64>,
    pub neg_leakage_pct: Option<f64>,
    pub type1: Option<f64>,
    pub type2: Option<f64>,
    pub misclass: Option<f64>,
    pub tp_rate: Option<f64>,
    pub fp_rate: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn evaluate(result: &AttackResult, truth: &GroundTruth) -> Metrics {
    let tp = result.z_pos.iter().filter(|e| truth.positives.contains(*e)).count();
    let fp = result.z_pos.len() - tp;
    let fneg = result.z_neg.iter().filter(|e| truth.positives.contains(*e)).count();
    let tn = result.z_neg.len() - fneg;
    let classified = result.z_pos.len() + result.z_neg.len();
    Metrics {
        total_leakage_pct: ratio(tp + tn, truth.len()),
        pos_leakage_pct: ratio(tp, truth.positives.len()),
        neg_leakage_pct: ratio(tn, truth.negatives.len()),
        type1: ratio(fneg, result.z_neg.len()),
        type2: ratio(fp, result.z_pos.len()),
        // type1 * Pr(neg label) + type2 * Pr(pos label), both over labelled elements.
        misclass: ratio(fneg + fp, classified),
        tp_rate: ratio(tp, truth.positives.len()),
        fp_rate: ratio(fp, truth.negatives.len()),
    }
}

/// Upper bound on the misclassification rate of threshold stopping.
pub fn misclass_bound(theta_u: f64, theta_l: f64) -> f64 {
    1.0 - theta_u + theta_l
}

/// Real-valued worst-case left count `c·k/n`.
pub fn worst_case_cl_real(n: usize, c: usize, k: usize) -> f64 {
    c as f64 * k as f64 / n as f64
}

/// Integers adjacent to `c·k/n` that the left count can actually take.
fn cl_candidates(n: usize, c: usize, k: usize) -> Vec<usize> {
    let lo = c * k / n;
    let hi = (c * k).div_ceil(n);
    let support = left_count_support(n, c, k);
    let mut v: Vec<usize> = [lo, hi].into_iter().filter(|x| support.contains(x)).collect();
    v.dedup();
    if v.is_empty() {
        // Rounding fell outside the support; take the nearest feasible count.
        v.push(lo.clamp(*support.start(), *support.end()));
    }
    v
}

/// Worst-case left count for splitting off `k` elements with `state.tau`
/// queries left: among the integers next to `c·k/n`, the one leaving the
/// smaller best continuation according to the tables.
pub fn worst_case_cl(state: AttackState, k: usize, tables: &MemoTables) -> Result<usize> {
    let (n, c) = (state.n, state.c);
    if state.is_resolved() {
        return Err(Error::Argument(format!("state ({n}, {c}) is already resolved")));
    }
    if k == 0 || k >= n {
        return Err(Error::Argument(format!("partition size {k} outside [1, {})", n)));
    }
    let cands = cl_candidates(n, c, k);
    if cands.len() == 1 {
        return Ok(cands[0]);
    }
    if state.tau == 0 {
        return Err(Error::Argument("no budget left to evaluate a split".into()));
    }
    let mut best = (f64::INFINITY, cands[0]);
    for cl in cands {
        let (fl, fr) = tables.focus_values(n, c, k, cl, state.tau - 1)?;
        let v = fl.max(fr);
        if v < best.0 - 1e-12 {
            best = (v, cl);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dypath,
    EvenBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub strategy: Strategy,
    pub n: usize,
    pub c: usize,
    pub points: Vec<(usize, f64)>,
}

/// Worst-case leakage for each budget `1..=tau_max` (the first query is the
/// root count).
///
/// This is the planning recursion with the expectation over the left count
/// replaced by the worst realizable count next to `c·k/n`. The planned attack
/// maximizes over the partition size; the baseline always halves.
pub fn lower_bound(n: usize, c: usize, tau_max: usize, strategy: Strategy) -> Result<BoundCurve> {
    if n == 0 || c > n {
        return Err(Error::Argument(format!("invalid state ({n}, {c})")));
    }
    if tau_max == 0 {
        return Err(Error::Argument("tau_max must be at least 1".into()));
    }
    let table = WorstCase::build(n, tau_max - 1, strategy);
    let points = (1..=tau_max).map(|tau| (tau, table.w(n, c, tau - 1))).collect();
    Ok(BoundCurve {
        strategy,
        n,
        c,
        points,
    })
}

/// Worst-case analogue of the planner tables, for one strategy.
struct WorstCase {
    n_max: usize,
    tau_max: usize,
    w: Vec<f64>,
    phi: Vec<Option<usize>>,
}

impl WorstCase {
    fn idx(&self, n: usize, c: usize, tau: usize) -> usize {
        (n * (self.n_max + 1) + c) * (self.tau_max + 1) + tau
    }

    fn w(&self, n: usize, c: usize, tau: usize) -> f64 {
        self.w[self.idx(n, c, tau)]
    }

    fn phi(&self, n: usize, c: usize) -> Option<usize> {
        self.phi[n * (self.n_max + 1) + c]
    }

    /// Leakage when `a` is focused with `r` queries and `b` waits.
    fn focus(&self, a: (usize, usize), b: (usize, usize), r: usize) -> f64 {
        match self.phi(a.0, a.1) {
            Some(p) if p <= r => a.0 as f64 + self.w(b.0, b.1, r - p),
            _ => self.w(a.0, a.1, r),
        }
    }

    fn split(&self, n: usize, c: usize, k: usize, tau: usize) -> f64 {
        let rest = tau - 1;
        cl_candidates(n, c, k)
            .into_iter()
            .map(|cl| {
                let l = (k, cl);
                let r = (n - k, c - cl);
                self.focus(l, r, rest).max(self.focus(r, l, rest))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn build(n_max: usize, tau_max: usize, strategy: Strategy) -> Self {
        let side = n_max + 1;
        let mut t = WorstCase {
            n_max,
            tau_max,
            w: vec![0.0; side * side * (tau_max + 1)],
            phi: vec![None; side * side],
        };
        for n in 0..=n_max {
            for c in 0..=n {
                if c == 0 || c == n {
                    for tau in 0..=tau_max {
                        let i = t.idx(n, c, tau);
                        t.w[i] = n as f64;
                    }
                    t.phi[n * side + c] = Some(0);
                    continue;
                }
                for tau in 1..=tau_max {
                    let v = match strategy {
                        Strategy::Dypath => (1..=n.div_ceil(2))
                            .map(|k| t.split(n, c, k, tau))
                            .fold(0.0, f64::max),
                        Strategy::EvenBaseline => t.split(n, c, n / 2, tau),
                    };
                    let i = t.idx(n, c, tau);
                    t.w[i] = v;
                }
                t.phi[n * side + c] = (0..=tau_max).find(|&tau| t.w(n, c, tau) >= n as f64 - RESOLVED_TOL);
            }
        }
        t
    }
}

pub fn write_bound_csv(curves: &[BoundCurve], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tau".to_string()];
    header.extend(curves.iter().map(|c| match c.strategy {
        Strategy::Dypath => "dypath".to_string(),
        Strategy::EvenBaseline => "even_baseline".to_string(),
    }));
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    let rows = curves.iter().map(|c| c.points.len()).min().unwrap_or(0);
    for i in 0..rows {
        let mut rec = vec![curves[0].points[i].0.to_string()];
        rec.extend(curves.iter().map(|c| format!("{}", c.points[i].1)));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: Option<f64>,
    pub tpr: Option<f64>,
}

/// Evenly spaced thresholds `0, 1/steps, ..., 1`.
pub fn threshold_grid(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Labels `p >= threshold` positive at each grid value.
pub fn roc_sweep(posterior: &PosteriorVector, truth: &GroundTruth, grid: &[f64]) -> Result<Vec<RocPoint>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Argument("threshold grid must be strictly increasing within [0, 1]".into()));
    }
    let scored: Vec<(f64, bool)> = posterior
        .ids
        .iter()
        .zip(&posterior.p)
        .map(|(id, &p)| (p, truth.is_positive(id)))
        .collect();
    let npos = scored.iter().filter(|s| s.1).count();
    let nneg = scored.len() - npos;
    Ok(grid
        .iter()
        .map(|&t| {
            let tp = scored.iter().filter(|&&(p, y)| y && p >= t).count();
            let fp = scored.iter().filter(|&&(p, y)| !y && p >= t).count();
            RocPoint {
                threshold: t,
                fpr: ratio(fp, nneg),
                tpr: ratio(tp, npos),
            }
        })
        .collect())
}

/// Trapezoid area under the curve, closed with (0,0) and (1,1).
/// `None` when either axis is undefined.
pub fn auc(points: &[RocPoint]) -> Option<f64> {
    let mut xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| Some((p.fpr?, p.tpr?)))
        .collect::<Option<_>>()?;
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Some(xy.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum())
}

pub fn write_roc_csv(points: &[RocPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fpr", "tpr"])
        .map_err(|e| Error::Format(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        w.write_record([p.threshold.to_string(), opt(p.fpr), opt(p.tpr)])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
