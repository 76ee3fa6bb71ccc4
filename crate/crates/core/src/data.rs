//! Attacker and victim sets, payloads, ground truth and dataset I/O.
//!
//! Payloads are unsigned integers. Subset-sum matching needs exact
//! equality, so currency values must be pre-scaled (for example to cents)
//! before they reach this layer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque element identifier, compared by exact string equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Argument("element id must be non-empty".into()));
        }
        Ok(ElementId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The attacker's set `X`, in input order.
///
/// Payloads, when present, are the attacker's own knowledge of the value
/// attached to each element and are what the PSI-SUM attack matches against.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    elements: Vec<ElementId>,
    index: HashMap<ElementId, usize>,
    payloads: Option<Vec<u64>>,
}

impl Dataset {
    pub fn new(elements: Vec<ElementId>) -> Result<Self> {
        Self::build(elements, None)
    }

    pub fn with_payloads(elements: Vec<ElementId>, payloads: Vec<u64>) -> Result<Self> {
        if payloads.len() != elements.len() {
            return Err(Error::Argument(format!(
                "{} payloads for {} elements",
                payloads.len(),
                elements.len()
            )));
        }
        Self::build(elements, Some(payloads))
    }

    fn build(elements: Vec<ElementId>, payloads: Option<Vec<u64>>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Argument("dataset must contain at least one element".into()));
        }
        let mut index = HashMap::with_capacity(elements.len());
        for (i, id) in elements.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate id {id}")));
            }
        }
        Ok(Dataset {
            elements,
            index,
            payloads,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ElementId] {
        &self.elements
    }

    pub fn id(&self, i: usize) -> &ElementId {
        &self.elements[i]
    }

    pub fn position(&self, id: &ElementId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.index.contains_key(id)
    }

    pub fn payloads(&self) -> Option<&[u64]> {
        self.payloads.as_deref()
    }

    /// Restriction to the given positions, preserving payloads.
    pub fn subset(&self, positions: &[usize]) -> Result<Dataset> {
        let elements = positions.iter().map(|&i| self.elements[i].clone()).collect();
        match &self.payloads {
            Some(p) => Dataset::with_payloads(elements, positions.iter().map(|&i| p[i]).collect()),
            None => Dataset::new(elements),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = File::create(path)?;
        match &self.payloads {
            Some(p) => {
                writeln!(out, "id,payload")?;
                for (id, v) in self.elements.iter().zip(p) {
                    writeln!(out, "{id},{v}")?;
                }
            }
            None => {
                writeln!(out, "id")?;
                for id in &self.elements {
                    writeln!(out, "{id}")?;
                }
            }
        }
        Ok(())
    }
}

/// The victim's set `Y` with per-member payloads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetSet {
    members: HashSet<ElementId>,
    payloads: HashMap<ElementId, u64>,
}

impl TargetSet {
    pub fn new(members: HashSet<ElementId>, payloads: HashMap<ElementId, u64>) -> Result<Self> {
        if let Some(stray) = payloads.keys().find(|k| !members.contains(*k)) {
            return Err(Error::Argument(format!("payload for non-member {stray}")));
        }
        Ok(TargetSet { members, payloads })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.members.contains(id)
    }

    pub fn members(&self) -> &HashSet<ElementId> {
        &self.members
    }

    pub fn payload(&self, id: &ElementId) -> Option<u64> {
        self.payloads.get(id).copied()
    }

    /// True when every member carries a payload.
    pub fn has_all_payloads(&self) -> bool {
        self.members.iter().all(|m| self.payloads.contains_key(m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ids: Vec<&ElementId> = self.members.iter().collect();
        ids.sort();
        let mut out = File::create(path)?;
        if self.has_all_payloads() && !self.members.is_empty() {
            writeln!(out, "id,payload")?;
            for id in ids {
                writeln!(out, "{id},{}", self.payloads[id])?;
            }
        } else {
            writeln!(out, "id")?;
            for id in ids {
                writeln!(out, "{id}")?;
            }
        }
        Ok(())
    }
}

/// Membership labels of `X` against `Y`. Owned by the oracle and
/// evaluation layers; attack engines never see it.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub positives: HashSet<ElementId>,
    pub negatives: HashSet<ElementId>,
}

impl GroundTruth {
    pub fn from_sets(x: &Dataset, y: &TargetSet) -> Self {
        let (positives, negatives) = x.elements().iter().cloned().partition(|id| y.contains(id));
        GroundTruth {
            positives,
            negatives,
        }
    }

    pub fn is_positive(&self, id: &ElementId) -> bool {
        self.positives.contains(id)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Attacker,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadedSet {
    Attacker(Dataset),
    Target(TargetSet),
}

/// Reads a CSV with rows `id[,payload]` and an optional `id[,payload]` header.
pub fn load_dataset(path: impl AsRef<Path>, role: Role) -> Result<LoadedSet> {
    let rows = read_rows(path)?;
    match role {
        Role::Attacker => {
            let with_payload = rows.iter().any(|r| r.payload.is_some());
            let mut seen = HashSet::new();
            let mut ids = Vec::with_capacity(rows.len());
            let mut payloads = Vec::with_capacity(rows.len());
            for row in rows {
                if !seen.insert(row.id.clone()) {
                    return Err(Error::parse(row.line, format!("duplicate id {}", row.id)));
                }
                if with_payload {
                    match row.payload {
                        Some(v) => payloads.push(v),
                        None => return Err(Error::parse(row.line, "missing payload")),
                    }
                }
                ids.push(row.id);
            }
            if ids.is_empty() {
                return Err(Error::parse(1, "attacker dataset is empty"));
            }
            let ds = if with_payload {
                Dataset::with_payloads(ids, payloads)?
            } else {
                Dataset::new(ids)?
            };
            Ok(LoadedSet::Attacker(ds))
        }
        Role::Target => {
            let mut members = HashSet::new();
            let mut payloads = HashMap::new();
            for row in rows {
                if !members.insert(row.id.clone()) {
                    return Err(Error::parse(row.line, format!("duplicate id {}", row.id)));
                }
                if let Some(v) = row.payload {
                    payloads.insert(row.id, v);
                }
            }
            Ok(LoadedSet::Target(TargetSet::new(members, payloads)?))
        }
    }
}

pub fn load_attacker(path: impl AsRef<Path>) -> Result<Dataset> {
    match load_dataset(path, Role::Attacker)? {
        LoadedSet::Attacker(d) => Ok(d),
        LoadedSet::Target(_) => unreachable!(),
    }
}

pub fn load_target(path: impl AsRef<Path>) -> Result<TargetSet> {
    match load_dataset(path, Role::Target)? {
        LoadedSet::Target(t) => Ok(t),
        LoadedSet::Attacker(_) => unreachable!(),
    }
}

struct Row {
    line: usize,
    id: ElementId,
    payload: Option<u64>,
}

fn read_rows(path: impl AsRef<Path>) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.get(0) == Some("id") {
            continue;
        }
        if record.len() > 2 {
            return Err(Error::parse(line, format!("expected at most 2 columns, got {}", record.len())));
        }
        let id = ElementId::new(record.get(0).unwrap_or_default())
            .map_err(|_| Error::parse(line, "empty id"))?;
        let payload = match record.get(1) {
            None | Some("") => None,
            Some(raw) => Some(parse_payload(raw).map_err(|m| Error::parse(line, m))?),
        };
        rows.push(Row { line, id, payload });
    }
    Ok(rows)
}

fn parse_payload(raw: &str) -> std::result::Result<u64, String> {
    match raw.parse::<i128>() {
        Ok(v) if v < 0 => Err(format!("negative payload {v}")),
        Ok(v) => u64::try_from(v).map_err(|_| format!("payload {v} out of range")),
        Err(_) => Err(format!("payload {raw:?} is not an integer")),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

/// How payloads are assigned to synthetic elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadSpec {
    None,
    Uniform { lo: u64, hi: u64 },
    /// Payload `2^rank` under a seeded random ranking; every subset sum is unique.
    DistinctPowers,
}

impl std::str::FromStr for PayloadSpec {
    type Err = Error;

    /// `none`, `powers`, or `uniform:LO:HI`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["none"] => Ok(PayloadSpec::None),
            ["powers"] | ["distinct_powers"] => Ok(PayloadSpec::DistinctPowers),
            ["uniform", lo, hi] => {
                let lo = lo.parse().map_err(|_| Error::Argument(format!("bad lo in {s:?}")))?;
                let hi = hi.parse().map_err(|_| Error::Argument(format!("bad hi in {s:?}")))?;
                Ok(PayloadSpec::Uniform { lo, hi })
            }
            _ => Err(Error::Argument(format!("unknown payload spec {s:?}"))),
        }
    }
}

/// Synthetic instance: `n` attacker elements of which exactly `n_positive`
/// are members of the victim set. Pure function of its arguments.
pub fn generate_synthetic(
    n: usize,
    n_positive: usize,
    payload_spec: PayloadSpec,
    seed: u64,
) -> Result<(Dataset, TargetSet, GroundTruth)> {
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    if n_positive > n {
        return Err(Error::Argument(format!("n_positive {n_positive} exceeds n {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    let ids: Vec<ElementId> = (0..n).map(|i| ElementId(format!("x{i:0width$}"))).collect();

    let payloads = match payload_spec {
        PayloadSpec::None => None,
        PayloadSpec::Uniform { lo, hi } => {
            if lo > hi {
                return Err(Error::Argument(format!("uniform payload lo {lo} > hi {hi}")));
            }
            Some((0..n).map(|_| rng.random_range(lo..=hi)).collect::<Vec<u64>>())
        }
        PayloadSpec::DistinctPowers => {
            if n > 64 {
                return Err(Error::Argument("distinct powers support at most 64 elements".into()));
            }
            let mut ranks: Vec<u32> = (0..n as u32).collect();
            ranks.shuffle(&mut rng);
            Some(ranks.into_iter().map(|r| 1u64 << r).collect())
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let chosen = &order[..n_positive];

    let members: HashSet<ElementId> = chosen.iter().map(|&i| ids[i].clone()).collect();
    let target_payloads: HashMap<ElementId, u64> = match &payloads {
        Some(p) => chosen.iter().map(|&i| (ids[i].clone(), p[i])).collect(),
        None => HashMap::new(),
    };
    let dataset = match payloads {
        Some(p) => Dataset::with_payloads(ids, p)?,
        None => Dataset::new(ids)?,
    };
    let target = TargetSet::new(members, target_payloads)?;
    let truth = GroundTruth::from_sets(&dataset, &target);
    Ok((dataset, target, truth))
}
