//! Simulated PSI-CA / PSI-SUM endpoint.
//!
//! The oracle holds the victim set, enforces the query budget and, when an
//! epsilon is configured, perturbs every released cardinality with Laplace
//! noise of scale `sensitivity * budget / epsilon` (basic composition over
//! the whole budget).

use std::io::Write;

use rand::distr::Distribution;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ElementId, TargetSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Ca,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub budget: usize,
    pub epsilon: Option<f64>,
    pub sensitivity: f64,
    pub protocol: Protocol,
    pub noise_seed: u64,
}

impl OracleConfig {
    pub fn noiseless(budget: usize, protocol: Protocol) -> Self {
        OracleConfig {
            budget,
            epsilon: None,
            sensitivity: 1.0,
            protocol,
            noise_seed: 0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64, noise_seed: u64) -> Self {
        self.epsilon = Some(epsilon);
        self.noise_seed = noise_seed;
        self
    }

    /// Per-query Laplace scale, `None` when noiseless.
    pub fn laplace_scale(&self) -> Option<f64> {
        self.epsilon.map(|eps| laplace_scale(self.sensitivity, self.budget, eps))
    }

    fn validate(&self) -> Result<()> {
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return Err(Error::Config(format!("sensitivity must be positive, got {}", self.sensitivity)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
            }
            if self.budget == 0 {
                return Err(Error::Config("noisy oracle needs a positive budget".into()));
            }
            if self.protocol == Protocol::Sum {
                return Err(Error::Config("PSI-SUM is not offered under differential privacy".into()));
            }
            let lambda = self.laplace_scale().unwrap_or(f64::NAN);
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::Config(format!("laplace scale {lambda} is not finite and positive")));
            }
        }
        Ok(())
    }
}

/// `lambda = sensitivity * budget / epsilon`.
pub fn laplace_scale(sensitivity: f64, budget: usize, epsilon: f64) -> f64 {
    sensitivity * budget as f64 / epsilon
}

/// Zero-mean Laplace distribution with the given scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceNoise {
    scale: f64,
}

impl LaplaceNoise {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("laplace scale {scale} is not finite and positive")));
        }
        Ok(LaplaceNoise { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Distribution<f64> for LaplaceNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Exponential magnitude with a fair random sign.
        let v: f64 = 1.0 - rng.random::<f64>();
        let magnitude = -self.scale * v.ln();
        if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Rounds a perturbed count to the nearest integer and clamps it into `[0, size]`.
pub fn clamp_noisy_count(raw: f64, size: usize) -> usize {
    let rounded = raw.round();
    if rounded.is_nan() || rounded <= 0.0 {
        0
    } else {
        (rounded as usize).min(size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub cardinality: usize,
    pub sum: Option<u64>,
    pub query_index: usize,
    /// Un-clamped perturbed count, for calibration checks.
    #[serde(skip)]
    pub raw_noisy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: usize,
    pub size: usize,
    pub cardinality: usize,
    pub sum: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub entries: Vec<LogEntry>,
}

impl QueryLog {
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One attack session against a hidden victim set.
pub struct Oracle<'a> {
    dataset: &'a Dataset,
    member: Vec<bool>,
    payload: Vec<Option<u64>>,
    config: OracleConfig,
    remaining: usize,
    log: QueryLog,
    noise: Option<(LaplaceNoise, ChaCha8Rng)>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl<'a> Oracle<'a> {
    /// Registers the attacker set `x` and hides `target` behind the protocol.
    pub fn new(x: &'a Dataset, target: &TargetSet, config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let member: Vec<bool> = x.elements().iter().map(|id| target.contains(id)).collect();
        let payload: Vec<Option<u64>> = x.elements().iter().map(|id| target.payload(id)).collect();
        if config.protocol == Protocol::Sum
            && member.iter().zip(&payload).any(|(&m, p)| m && p.is_none())
        {
            return Err(Error::Config("PSI-SUM requires a payload for every member".into()));
        }
        let noise = match config.laplace_scale() {
            Some(lambda) => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
                rng.set_stream(2);
                Some((LaplaceNoise::new(lambda)?, rng))
            }
            None => None,
        };
        Ok(Oracle {
            dataset: x,
            member,
            payload,
            remaining: config.budget,
            config,
            log: QueryLog::default(),
            noise,
            stamp: vec![0; x.len()],
            epoch: 0,
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    pub fn remaining_budget(&self) -> usize {
        self.remaining
    }

    pub fn queries_issued(&self) -> usize {
        self.config.budget - self.remaining
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }

    pub fn psi_ca(&mut self, query: &[ElementId]) -> Result<OracleResponse> {
        let positions = self.resolve(query)?;
        self.answer(&positions, false)
    }

    pub fn psi_sum(&mut self, query: &[ElementId]) -> Result<OracleResponse> {
        let positions = self.resolve(query)?;
        self.answer(&positions, true)
    }

    /// PSI-CA on positions into the registered dataset.
    pub fn psi_ca_at(&mut self, positions: &[usize]) -> Result<OracleResponse> {
        self.answer(positions, false)
    }

    /// PSI-SUM on positions into the registered dataset.
    pub fn psi_sum_at(&mut self, positions: &[usize]) -> Result<OracleResponse> {
        self.answer(positions, true)
    }

    fn resolve(&self, query: &[ElementId]) -> Result<Vec<usize>> {
        query
            .iter()
            .map(|id| {
                self.dataset
                    .position(id)
                    .ok_or_else(|| Error::Domain(format!("{id} is not in the registered set")))
            })
            .collect()
    }

    fn answer(&mut self, positions: &[usize], with_sum: bool) -> Result<OracleResponse> {
        if with_sum && self.config.protocol != Protocol::Sum {
            return Err(Error::Config("oracle is not configured for PSI-SUM".into()));
        }
        if self.remaining == 0 {
            return Err(Error::BudgetExhausted);
        }
        if positions.is_empty() {
            return Err(Error::Domain("query must be non-empty".into()));
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        let mut count = 0usize;
        let mut sum = 0u64;
        for &p in positions {
            if p >= self.member.len() {
                return Err(Error::Domain(format!("position {p} outside registered set")));
            }
            if self.stamp[p] == self.epoch {
                return Err(Error::Domain(format!("{} repeated in query", self.dataset.id(p))));
            }
            self.stamp[p] = self.epoch;
            if self.member[p] {
                count += 1;
                if with_sum {
                    let v = self.payload[p].ok_or_else(|| Error::Config("missing payload".into()))?;
                    sum = sum
                        .checked_add(v)
                        .ok_or_else(|| Error::Domain("payload sum overflows u64".into()))?;
                }
            }
        }
        let (cardinality, raw_noisy) = match &mut self.noise {
            Some((dist, rng)) => {
                let raw = count as f64 + dist.sample(rng);
                (clamp_noisy_count(raw, positions.len()), Some(raw))
            }
            None => (count, None),
        };
        let t = self.queries_issued();
        self.remaining -= 1;
        let sum = with_sum.then_some(sum);
        self.log.entries.push(LogEntry {
            t,
            size: positions.len(),
            cardinality,
            sum,
        });
        Ok(OracleResponse {
            cardinality,
            sum,
            query_index: t,
            raw_noisy,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use super::*;

    fn id(s: &str) -> ElementId {
        ElementId::new(s).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<ElementId> {
        v.iter().map(|s| id(s)).collect()
    }

    fn fixture() -> (Dataset, TargetSet) {
        let x = Dataset::new(ids(&["a", "b", "c", "d", "e"])).unwrap();
        let members: HashSet<_> = ids(&["a", "c", "e", "z"]).into_iter().collect();
        let payloads: HashMap<_, _> = [(id("a"), 10), (id("c"), 5), (id("e"), 1), (id("z"), 100)]
            .into_iter()
            .collect();
        (x, TargetSet::new(members, payloads).unwrap())
    }

    #[test]
    fn exact_cardinality() {
        let (x, y) = fixture();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(10, Protocol::Ca)).unwrap();
        let r = o.psi_ca(x.elements()).unwrap();
        assert_eq!(r.cardinality, 3);
        assert_eq!(r.sum, None);
        assert_eq!(o.remaining_budget(), 9);
    }

    #[test]
    fn laplace_scale_from_budget() {
        let cfg = OracleConfig::noiseless(30, Protocol::Ca).with_epsilon(1.0, 0);
        assert_eq!(cfg.laplace_scale(), Some(30.0));
    }

    #[test]
    fn clamp_then_round() {
        assert_eq!(clamp_noisy_count(4.7, 4), 4);
        assert_eq!(clamp_noisy_count(-2.3, 4), 0);
        assert_eq!(clamp_noisy_count(2.4, 4), 2);
        assert_eq!(clamp_noisy_count(2.5, 4), 3);
    }

    #[test]
    fn sum_over_intersection() {
        let (x, y) = fixture();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(10, Protocol::Sum)).unwrap();
        let r = o.psi_sum(&ids(&["a", "b", "c"])).unwrap();
        assert_eq!((r.cardinality, r.sum), (2, Some(15)));
        let r = o.psi_sum(&ids(&["b", "d"])).unwrap();
        assert_eq!((r.cardinality, r.sum), (0, Some(0)));
    }

    #[test]
    fn sum_on_distinct_powers() {
        let x = Dataset::with_payloads(ids(&["p1", "p2", "p4", "p8"]), vec![1, 2, 4, 8]).unwrap();
        let members: HashSet<_> = ids(&["p1", "p8"]).into_iter().collect();
        let payloads: HashMap<_, _> = [(id("p1"), 1), (id("p8"), 8)].into_iter().collect();
        let y = TargetSet::new(members, payloads).unwrap();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(1, Protocol::Sum)).unwrap();
        let r = o.psi_sum(x.elements()).unwrap();
        assert_eq!((r.cardinality, r.sum), (2, Some(9)));
    }

    #[test]
    fn budget_accounting() {
        let (x, y) = fixture();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(10, Protocol::Ca)).unwrap();
        assert_eq!(o.remaining_budget(), 10);
        for _ in 0..3 {
            o.psi_ca(&ids(&["a"])).unwrap();
        }
        assert_eq!(o.remaining_budget(), 7);
        for _ in 0..7 {
            o.psi_ca(&ids(&["b"])).unwrap();
        }
        assert_eq!(o.remaining_budget(), 0);
        assert!(matches!(o.psi_ca(&ids(&["a"])), Err(Error::BudgetExhausted)));
        assert_eq!(o.remaining_budget(), 0);
        assert_eq!(o.log().entries.len(), 10);
    }

    #[test]
    fn domain_errors() {
        let (x, y) = fixture();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(10, Protocol::Ca)).unwrap();
        assert!(matches!(o.psi_ca(&ids(&["z"])), Err(Error::Domain(_))));
        assert!(matches!(o.psi_ca(&[]), Err(Error::Domain(_))));
        assert!(matches!(o.psi_ca(&ids(&["a", "a"])), Err(Error::Domain(_))));
        assert!(matches!(o.psi_sum(&ids(&["a"])), Err(Error::Config(_))));
        // failed queries do not consume budget
        assert_eq!(o.remaining_budget(), 10);
    }

    #[test]
    fn sum_needs_payloads() {
        let x = Dataset::new(ids(&["a", "b"])).unwrap();
        let y = TargetSet::new(ids(&["a"]).into_iter().collect(), HashMap::new()).unwrap();
        assert!(matches!(
            Oracle::new(&x, &y, OracleConfig::noiseless(1, Protocol::Sum)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_epsilon() {
        let (x, y) = fixture();
        for eps in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let cfg = OracleConfig::noiseless(5, Protocol::Ca).with_epsilon(eps, 1);
            assert!(Oracle::new(&x, &y, cfg).is_err());
        }
        let cfg = OracleConfig::noiseless(5, Protocol::Sum).with_epsilon(1.0, 1);
        assert!(Oracle::new(&x, &y, cfg).is_err());
    }

    #[test]
    fn noisy_reproducible_and_clamped() {
        let (x, y) = fixture();
        let cfg = OracleConfig::noiseless(200, Protocol::Ca).with_epsilon(20.0, 42);
        let run = || {
            let mut o = Oracle::new(&x, &y, cfg.clone()).unwrap();
            (0..200)
                .map(|_| o.psi_ca(&ids(&["a", "b", "c"])).unwrap().cardinality)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|&c| c <= 3));
        assert!(a.iter().any(|&c| c != 2));
    }

    #[test]
    fn log_jsonl_shape() {
        let (x, y) = fixture();
        let mut o = Oracle::new(&x, &y, OracleConfig::noiseless(3, Protocol::Sum)).unwrap();
        o.psi_sum(&ids(&["a", "b"])).unwrap();
        o.psi_ca(&ids(&["c"])).unwrap();
        let mut buf = Vec::new();
        o.log().write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], r#"{"t":0,"size":2,"cardinality":1,"sum":10}"#);
        assert_eq!(lines[1], r#"{"t":1,"size":1,"cardinality":1,"sum":null}"#);
    }
}
