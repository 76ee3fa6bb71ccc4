//! Statistical PSI-CA attack: per-element membership beliefs refined by
//! actively chosen queries, with threshold stopping. Works on noisy oracles.

use std::io::Write;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ElementId};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, Protocol};
use crate::result::{attack_rng, check_session, stop_on_budget, AttackResult, Recorder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatParams {
    pub theta_u: f64,
    pub theta_l: f64,
    pub tol: f64,
    pub r: f64,
    pub tau: usize,
    pub seed: u64,
}

impl Default for StatParams {
    fn default() -> Self {
        StatParams {
            theta_u: 0.9,
            theta_l: 0.1,
            tol: 0.1,
            r: 0.5,
            tau: 20,
            seed: 0,
        }
    }
}

impl StatParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if !(self.theta_u > 0.5 && self.theta_u <= 1.0) {
            return bad("theta_u must lie in (0.5, 1]");
        }
        if !(self.theta_l >= 0.0 && self.theta_l < 0.5) {
            return bad("theta_l must lie in [0, 0.5)");
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad("tol must be a finite non-negative number");
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad("sampling rate r must lie in (0, 1]");
        }
        if self.tau == 0 {
            return bad("tau must be at least 1");
        }
        Ok(())
    }
}

/// Belief that each element of `X` is in the target set, in dataset order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector {
    pub ids: Vec<ElementId>,
    pub p: Vec<f64>,
    /// Classified elements keep their last belief.
    #[serde(skip)]
    pub frozen: Vec<bool>,
}

impl PosteriorVector {
    pub fn uniform(x: &Dataset) -> Self {
        PosteriorVector {
            ids: x.elements().to_vec(),
            p: vec![0.5; x.len()],
            frozen: vec![false; x.len()],
        }
    }

    pub fn get(&self, id: &ElementId) -> Option<f64> {
        self.ids.iter().position(|e| e == id).map(|i| self.p[i])
    }

    /// CSV with header `id,posterior,label`; label is `1`, `0` or empty.
    pub fn write_csv(&self, result: &AttackResult, out: impl Write) -> Result<()> {
        let pos: std::collections::HashSet<&ElementId> = result.z_pos.iter().collect();
        let neg: std::collections::HashSet<&ElementId> = result.z_neg.iter().collect();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "posterior", "label"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for (id, p) in self.ids.iter().zip(&self.p) {
            let label = if pos.contains(id) {
                "1"
            } else if neg.contains(id) {
                "0"
            } else {
                ""
            };
            w.write_record([id.as_str(), &format!("{p}"), label])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationLedger {
    /// Queried position sets (sorted) with the observed count.
    pub facts: Vec<(Vec<usize>, usize)>,
}

impl ObservationLedger {
    /// Most recent strictly larger queried set containing all of `s`.
    pub fn containing(&self, s: &[usize]) -> Option<&(Vec<usize>, usize)> {
        self.facts
            .iter()
            .rev()
            .find(|(set, _)| set.len() > s.len() && s.iter().all(|e| set.binary_search(e).is_ok()))
    }
}

/// Records `(s, o)` and refreshes beliefs: members of `s` get `o / |s|`, the
/// rest of the most recent containing set gets `(O_tot - o) / |complement|`.
pub fn update_posteriors(
    ledger: &mut ObservationLedger,
    posterior: &mut PosteriorVector,
    s: &[usize],
    o: usize,
) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Argument("query set is empty".into()));
    }
    if o > s.len() {
        return Err(Error::Argument(format!("count {o} exceeds query size {}", s.len())));
    }
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    let ratio = o as f64 / s.len() as f64;
    for &i in &sorted {
        if !posterior.frozen[i] {
            posterior.p[i] = ratio;
        }
    }
    if let Some((sup, total)) = ledger.containing(&sorted) {
        let rest = sup.len() - sorted.len();
        let q = ((*total as f64 - o as f64) / rest as f64).clamp(0.0, 1.0);
        for &i in sup {
            if sorted.binary_search(&i).is_err() && !posterior.frozen[i] {
                posterior.p[i] = q;
            }
        }
    }
    ledger.facts.push((sorted, o));
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub s_u: Vec<usize>,
    pub s_l: Vec<usize>,
    pub d_u: f64,
    pub d_l: f64,
}

impl Candidates {
    /// The set nearer its threshold; ties go to the upper set.
    pub fn choice(&self) -> &[usize] {
        if self.d_u <= self.d_l {
            &self.s_u
        } else {
            &self.s_l
        }
    }
}

pub fn select_candidates(
    posterior: &PosteriorVector,
    params: &StatParams,
    pool: &[usize],
    rng: &mut impl rand::Rng,
) -> Result<Candidates> {
    select_with_tol(posterior, params, params.tol, pool, rng)
}

fn select_with_tol(
    posterior: &PosteriorVector,
    params: &StatParams,
    tol: f64,
    pool: &[usize],
    rng: &mut impl rand::Rng,
) -> Result<Candidates> {
    if pool.is_empty() {
        return Err(Error::Argument("candidate pool is empty".into()));
    }
    let mut pick = |theta: f64| {
        let d: Vec<f64> = pool.iter().map(|&i| (posterior.p[i] - theta).abs()).collect();
        let (arg, min) = d
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let mut set = Vec::new();
        let mut total = 0.0;
        for (j, &dj) in d.iter().enumerate() {
            if dj - min <= tol && rng.random_bool(params.r) {
                set.push(pool[j]);
                total += dj;
            }
        }
        if set.is_empty() {
            set.push(pool[arg]);
            total = min;
        }
        let mean = total / set.len() as f64;
        (set, mean)
    };
    let (s_u, d_u) = pick(params.theta_u);
    let (s_l, d_l) = pick(params.theta_l);
    Ok(Candidates { s_u, s_l, d_u, d_l })
}

/// Runs the attack with `params.tau` queries at most. The first query covers
/// all of `X` so later complements have a known total.
pub fn actbayes_attack(
    oracle: &mut Oracle<'_>,
    x: &Dataset,
    params: &StatParams,
) -> Result<(AttackResult, PosteriorVector)> {
    params.validate()?;
    check_session(oracle, x, params.tau)?;
    if oracle.config().protocol != Protocol::Ca {
        return Err(Error::Config("actbayes expects a PSI-CA oracle".into()));
    }
    let mut rng = attack_rng(params.seed);
    let mut rec = Recorder::new(x);
    let mut post = PosteriorVector::uniform(x);
    let mut ledger = ObservationLedger::default();
    let mut unresolved: Vec<usize> = (0..x.len()).collect();

    let mut last: Option<Vec<usize>> = None;
    let mut boost = false;
    let mut first = true;
    while rec.queries < params.tau && !unresolved.is_empty() {
        let s = if first {
            unresolved.clone()
        } else {
            let tol = if boost { params.tol * 2.0 } else { params.tol };
            boost = false;
            select_with_tol(&post, params, tol, &unresolved, &mut rng)?
                .choice()
                .to_vec()
        };
        first = false;
        let Some(resp) = stop_on_budget(oracle.psi_ca_at(&s))? else {
            break;
        };
        rec.record(&s, &resp);
        let before = post.p.clone();
        update_posteriors(&mut ledger, &mut post, &s, resp.cardinality)?;

        let mut sorted = s;
        sorted.sort_unstable();
        if last.as_ref() == Some(&sorted) && before == post.p {
            boost = true;
        }
        last = Some(sorted);

        let mut pos = Vec::new();
        let mut neg = Vec::new();
        unresolved.retain(|&i| {
            if post.p[i] >= params.theta_u {
                pos.push(i);
            } else if post.p[i] <= params.theta_l {
                neg.push(i);
            } else {
                return true;
            }
            post.frozen[i] = true;
            false
        });
        rec.label(&pos, true);
        rec.label(&neg, false);
    }
    Ok((rec.finish("actbayes", params.seed, params.tau), post))
}
