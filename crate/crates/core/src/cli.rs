//! `psi-leak` command-line harness.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actbayes::{actbayes_attack, PosteriorVector, StatParams};
use crate::analysis::{self, evaluate, lower_bound, roc_sweep, threshold_grid, Metrics, Strategy};
use crate::attacks::{dypathblazer_with, guo_attack, DypathOptions};
use crate::data::{self, generate_synthetic, Dataset, GroundTruth, PayloadSpec, TargetSet};
use crate::oracle::{Oracle, OracleConfig, Protocol};
use crate::planner::MemoTables;
use crate::result::AttackResult;
use crate::treesum::{treesum_explorer_with, TreeSumOptions, DEFAULT_COMBO_CAP};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "psi-leak", version, about = "Membership leakage experiments against PSI-CA / PSI-SUM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build and save the planner tables.
    BuildMemo {
        #[arg(long)]
        n_max: usize,
        #[arg(long)]
        tau_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic attacker/target pair as CSV.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; receives attacker.csv and target.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run attack trials and write per-trial results plus a summary.
    Attack(AttackArgs),
    /// Worst-case leakage curves for the planned attack and the even-split baseline.
    LowerBound {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        #[arg(long)]
        tau_max: usize,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score saved attack results against a target set.
    Evaluate {
        /// AttackResult JSON, or JSON lines as written by `attack`.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Posterior CSV (`id,posterior,label`) for an ROC curve.
        #[arg(long)]
        posteriors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one statistical-attack parameter around the defaults.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub positives: usize,
    /// none, powers, or uniform:LO:HI
    #[arg(long, default_value = "none")]
    pub payload: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Guo,
    Dypath,
    Treesum,
    Actbayes,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[arg(long)]
    pub tau: usize,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub memo: Option<PathBuf>,
    /// Attacker CSV; synthetic instances are drawn per trial when omitted.
    #[arg(long, requires = "target")]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub target: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMBO_CAP)]
    pub combo_cap: usize,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub k_override: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub theta_u: f64,
    #[arg(long, default_value_t = 0.1)]
    pub theta_l: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rate: f64,
    /// Online mode: `tau` is ignored and each round gets this many queries.
    #[arg(long, requires = "rounds")]
    pub budget_per_round: Option<usize>,
    #[arg(long, requires = "budget_per_round")]
    pub rounds: Option<usize>,
    /// Keep the query trace in trials.jsonl.
    #[arg(long)]
    pub keep_trace: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ThetaU,
    ThetaL,
    Tol,
    Rate,
    Tau,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::ThetaU => "theta_u",
            SweepParam::ThetaL => "theta_l",
            SweepParam::Tol => "tol",
            SweepParam::Rate => "rate",
            SweepParam::Tau => "tau",
        }
    }

    fn apply(self, p: &mut StatParams, v: f64) -> anyhow::Result<()> {
        match self {
            SweepParam::ThetaU => p.theta_u = v,
            SweepParam::ThetaL => p.theta_l = v,
            SweepParam::Tol => p.tol = v,
            SweepParam::Rate => p.r = v,
            SweepParam::Tau => {
                if v < 1.0 || v.fract() != 0.0 {
                    bail!("tau values must be positive integers, got {v}");
                }
                p.tau = v as usize;
            }
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildMemo { n_max, tau_max, out } => build_memo(n_max, tau_max, &out),
        Command::Synth { synth, seed, out } => {
            let (x, y, _) = generate_synthetic(synth.n, synth.positives, synth.payload.parse()?, seed)?;
            fs::create_dir_all(&out)?;
            x.save(out.join("attacker.csv"))?;
            y.save(out.join("target.csv"))?;
            println!("wrote {} attacker and {} target rows to {}", x.len(), y.len(), out.display());
            Ok(())
        }
        Command::Attack(args) => attack(&args).map(|s| {
            println!(
                "{} trials of {:?}: mean leakage {:.4} ({} queries on average)",
                s.trials, args.algo, s.mean_leakage, s.mean_queries
            );
        }),
        Command::LowerBound {
            n,
            c,
            tau_max,
            out,
        } => {
            let curves = [
                lower_bound(n, c, tau_max, Strategy::Dypath)?,
                lower_bound(n, c, tau_max, Strategy::EvenBaseline)?,
            ];
            match out {
                Some(p) => analysis::write_bound_csv(&curves, create(&p)?)?,
                None => analysis::write_bound_csv(&curves, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Evaluate {
            result,
            dataset,
            target,
            posteriors,
            out,
        } => evaluate_cmd(&result, &dataset, &target, posteriors.as_deref(), out.as_deref()),
        Command::Sweep(args) => sweep(&args),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn load_memo(path: &Path) -> anyhow::Result<MemoTables> {
    MemoTables::load(path).with_context(|| format!("loading planner tables from {}", path.display()))
}

fn build_memo(n_max: usize, tau_max: usize, out: &Path) -> anyhow::Result<()> {
    let start = Instant::now();
    let tables = MemoTables::build(n_max, tau_max)?;
    let elapsed = start.elapsed();
    let bytes = tables.to_bytes();
    create(out)?.write_all(&bytes)?;
    let digest = hex(&Sha256::digest(&bytes));
    let reread = fs::read(out)?;
    let reloaded = MemoTables::from_bytes(&reread)?;
    if hex(&Sha256::digest(&reread)) != digest || reloaded.to_bytes() != bytes {
        bail!("{} did not read back identically", out.display());
    }
    println!(
        "tables n<={n_max} tau<={tau_max}: {} entries, built in {:.2?}, {} bytes, sha256 {digest}",
        (n_max + 1) * (n_max + 1) * (tau_max + 1),
        elapsed,
        bytes.len()
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seeds for instance generation, attack randomness and oracle noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub trial: u64,
    pub instance: u64,
    pub attack: u64,
    pub noise: u64,
}

pub fn trial_seeds(seed: u64, trials: usize) -> Vec<TrialSeeds> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let trial = rng.random::<u64>();
            let mut sub = ChaCha8Rng::seed_from_u64(trial);
            TrialSeeds {
                trial,
                instance: sub.random(),
                attack: sub.random(),
                noise: sub.random(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seeds: TrialSeeds,
    pub result: AttackResult,
    pub metrics: Metrics,
    /// Cumulative leakage after each round in online mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub round_leakage: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub spec: AttackArgs,
    pub trials: usize,
    pub mean_leakage: f64,
    pub mean_queries: f64,
    pub metrics: MeanMetrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_round_leakage: Vec<f64>,
    pub trial_seeds: Vec<TrialSeeds>,
}

/// Per-field means over the trials where the rate is defined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub total_leakage_pct: Option<f64>,
    pub pos_leakage_pct: Option<f64>,
    pub neg_leakage_pct: Option<f64>,
    pub type1: Option<f64>,
    pub type2: Option<f64>,
    pub misclass: Option<f64>,
    pub tp_rate: Option<f64>,
    pub fp_rate: Option<f64>,
}

impl MeanMetrics {
    pub fn of(ms: &[Metrics]) -> Self {
        let mean = |f: fn(&Metrics) -> Option<f64>| {
            let v: Vec<f64> = ms.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        MeanMetrics {
            total_leakage_pct: mean(|m| m.total_leakage_pct),
            pos_leakage_pct: mean(|m| m.pos_leakage_pct),
            neg_leakage_pct: mean(|m| m.neg_leakage_pct),
            type1: mean(|m| m.type1),
            type2: mean(|m| m.type2),
            misclass: mean(|m| m.misclass),
            tp_rate: mean(|m| m.tp_rate),
            fp_rate: mean(|m| m.fp_rate),
        }
    }
}

/// Settings shared by every session of an experiment.
struct Engine<'a> {
    algo: Algo,
    epsilon: Option<f64>,
    tables: Option<&'a MemoTables>,
    dypath: DypathOptions,
    treesum: TreeSumOptions,
    stat: StatParams,
}

impl Engine<'_> {
    fn session(
        &self,
        x: &Dataset,
        y: &TargetSet,
        tau: usize,
        seeds: &TrialSeeds,
    ) -> anyhow::Result<(AttackResult, Option<PosteriorVector>)> {
        let protocol = if self.algo == Algo::Treesum { Protocol::Sum } else { Protocol::Ca };
        let mut cfg = OracleConfig::noiseless(tau, protocol);
        if let Some(eps) = self.epsilon {
            cfg = cfg.with_epsilon(eps, seeds.noise);
        }
        let mut oracle = Oracle::new(x, y, cfg)?;
        let out = match self.algo {
            Algo::Guo => (guo_attack(&mut oracle, x, tau, seeds.attack)?, None),
            Algo::Dypath => {
                let tables = self.tables.context("dypath needs --memo")?;
                let r = dypathblazer_with(&mut oracle, x, tau, tables, seeds.attack, &self.dypath)?;
                (r, None)
            }
            Algo::Treesum => (treesum_explorer_with(&mut oracle, x, tau, seeds.attack, &self.treesum)?, None),
            Algo::Actbayes => {
                let params = StatParams {
                    tau,
                    seed: seeds.attack,
                    ..self.stat.clone()
                };
                let (r, p) = actbayes_attack(&mut oracle, x, &params)?;
                (r, Some(p))
            }
        };
        Ok(out)
    }

    /// Online mode: fresh budget each round, later rounds only see what is still unlabelled.
    fn rounds(
        &self,
        x: &Dataset,
        y: &TargetSet,
        budget: usize,
        rounds: usize,
        seeds: &TrialSeeds,
    ) -> anyhow::Result<(AttackResult, Vec<usize>)> {
        let mut z_pos = Vec::new();
        let mut z_neg = Vec::new();
        let mut trace = Vec::new();
        let mut used = 0;
        let mut curve = Vec::with_capacity(rounds);
        let mut open: Vec<usize> = (0..x.len()).collect();
        for round in 0..rounds {
            if !open.is_empty() {
                let sub = x.subset(&open)?;
                let s = TrialSeeds {
                    attack: seeds.attack.wrapping_add(round as u64),
                    noise: seeds.noise.wrapping_add(round as u64),
                    ..*seeds
                };
                let (r, _) = self.session(&sub, y, budget, &s)?;
                used += r.queries_used;
                trace.extend(r.trace);
                open.retain(|&i| {
                    let id = x.id(i);
                    !(r.z_pos.contains(id) || r.z_neg.contains(id))
                });
                z_pos.extend(r.z_pos);
                z_neg.extend(r.z_neg);
            }
            curve.push(z_pos.len() + z_neg.len());
        }
        let order = |v: &mut Vec<data::ElementId>| v.sort_by_key(|id| x.position(id));
        order(&mut z_pos);
        order(&mut z_neg);
        let result = AttackResult {
            algo: format!("{:?}", self.algo).to_lowercase(),
            seed: seeds.attack,
            tau: budget * rounds,
            queries_used: used,
            z_pos,
            z_neg,
            trace,
        };
        Ok((result, curve))
    }
}

fn load_pair(dataset: &Path, target: &Path) -> anyhow::Result<(Dataset, TargetSet)> {
    let x = data::load_attacker(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let y = data::load_target(target).with_context(|| format!("reading {}", target.display()))?;
    Ok((x, y))
}

/// Runs `args.trials` sessions in parallel, writes `trials.jsonl`,
/// `summary.json` and, for actbayes, the first trial's posteriors and ROC.
pub fn attack(args: &AttackArgs) -> anyhow::Result<Summary> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let online = args.budget_per_round.zip(args.rounds);
    if online.is_none() && args.tau == 0 {
        bail!("--tau must be at least 1");
    }
    let tables = match (&args.memo, args.algo) {
        (Some(p), _) => Some(load_memo(p)?),
        (None, Algo::Dypath) => bail!("configuration error: dypath needs planner tables (--memo)"),
        (None, _) => None,
    };
    let payload: PayloadSpec = args.synth.payload.parse()?;
    let fixed = match (&args.dataset, &args.target) {
        (Some(d), Some(t)) => Some(load_pair(d, t)?),
        _ => None,
    };
    if args.algo == Algo::Treesum {
        let has = match &fixed {
            Some((x, _)) => x.payloads().is_some(),
            None => payload != PayloadSpec::None,
        };
        if !has {
            bail!("configuration error: treesum needs attacker payloads");
        }
    }
    let engine = Engine {
        algo: args.algo,
        epsilon: args.epsilon,
        tables: tables.as_ref(),
        dypath: DypathOptions {
            k_override: args.k_override,
            ..DypathOptions::default()
        },
        treesum: TreeSumOptions {
            combo_cap: args.combo_cap,
            pool_size: args.pool_size,
        },
        stat: StatParams {
            theta_u: args.theta_u,
            theta_l: args.theta_l,
            tol: args.tol,
            r: args.rate,
            tau: args.tau.max(1),
            seed: 0,
        },
    };
    if args.algo == Algo::Actbayes {
        engine.stat.validate()?;
    }

    let seeds = trial_seeds(args.seed, args.trials);
    let records: Vec<(TrialRecord, Option<PosteriorVector>, GroundTruth)> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let generated;
            let (x, y) = match &fixed {
                Some((x, y)) => (x, y),
                None => {
                    let (x, y, _) = generate_synthetic(args.synth.n, args.synth.positives, payload, s.instance)?;
                    generated = (x, y);
                    (&generated.0, &generated.1)
                }
            };
            let truth = GroundTruth::from_sets(x, y);
            let (mut result, post, round_leakage) = match online {
                Some((b, r)) => {
                    let (res, curve) = engine.rounds(x, y, b, r, s)?;
                    (res, None, curve)
                }
                None => {
                    let (res, post) = engine.session(x, y, args.tau, s)?;
                    (res, post, Vec::new())
                }
            };
            let metrics = evaluate(&result, &truth);
            if !args.keep_trace {
                result.trace.clear();
            }
            let rec = TrialRecord {
                index,
                seeds: *s,
                result,
                metrics,
                round_leakage,
            };
            Ok((rec, post, truth))
        })
        .collect::<anyhow::Result<_>>()?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = create(&args.out.join("trials.jsonl"))?;
    for (rec, _, _) in &records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    if let Some((rec, Some(post), truth)) = records.first() {
        post.write_csv(&rec.result, create(&args.out.join("posteriors.csv"))?)?;
        let roc = roc_sweep(post, truth, &threshold_grid(100))?;
        analysis::write_roc_csv(&roc, create(&args.out.join("roc.csv"))?)?;
    }

    let n = records.len() as f64;
    let metrics: Vec<Metrics> = records.iter().map(|r| r.0.metrics.clone()).collect();
    let rounds = online.map_or(0, |(_, r)| r);
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        spec: args.clone(),
        trials: records.len(),
        mean_leakage: records.iter().map(|r| r.0.result.leakage() as f64).sum::<f64>() / n,
        mean_queries: records.iter().map(|r| r.0.result.queries_used as f64).sum::<f64>() / n,
        metrics: MeanMetrics::of(&metrics),
        mean_round_leakage: (0..rounds)
            .map(|i| records.iter().map(|r| r.0.round_leakage[i] as f64).sum::<f64>() / n)
            .collect(),
        trial_seeds: seeds,
    };
    let mut w = create(&args.out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(summary)
}

fn evaluate_cmd(
    result: &Path,
    dataset: &Path,
    target: &Path,
    posteriors: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let (x, y) = load_pair(dataset, target)?;
    let truth = GroundTruth::from_sets(&x, &y);
    let text = fs::read_to_string(result).with_context(|| format!("reading {}", result.display()))?;
    let results: Vec<AttackResult> = match serde_json::from_str::<AttackResult>(&text) {
        Ok(r) => vec![r],
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l)?;
                let r = v.get("result").cloned().unwrap_or(v);
                Ok(serde_json::from_value(r)?)
            })
            .collect::<anyhow::Result<_>>()
            .context("expected an AttackResult JSON document or JSON lines")?,
    };
    let per: Vec<Metrics> = results.iter().map(|r| evaluate(r, &truth)).collect();
    let mut report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "results": results.len(),
        "mean": MeanMetrics::of(&per),
        "per_result": per,
    });
    if let Some(p) = posteriors {
        let post = read_posteriors(p)?;
        let roc = roc_sweep(&post, &truth, &threshold_grid(100))?;
        report["auc"] = serde_json::json!(analysis::auc(&roc));
        report["roc"] = serde_json::to_value(&roc)?;
    }
    match out {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn read_posteriors(path: &Path) -> anyhow::Result<PosteriorVector> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = Vec::new();
    let mut p = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 && line.starts_with("id,") {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(id), Some(v)) = (parts.next(), parts.next()) else {
            bail!("{}:{}: expected id,posterior", path.display(), i + 1);
        };
        ids.push(data::ElementId::new(id)?);
        p.push(v.trim().parse::<f64>().with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    let frozen = vec![false; ids.len()];
    Ok(PosteriorVector { ids, p, frozen })
}

/// One sweep row: means over trials of the Table-I columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub tp_pct: Option<f64>,
    pub tn_pct: Option<f64>,
    pub type1: Option<f64>,
    pub type2: Option<f64>,
}

/// Runs the statistical attack on synthetic instances for each grid value.
pub fn sweep_rows(args: &SweepArgs) -> anyhow::Result<Vec<SweepRow>> {
    if args.values.is_empty() || args.trials == 0 {
        bail!("sweep needs at least one value and one trial");
    }
    let seeds = trial_seeds(args.seed, args.trials);
    args.values
        .iter()
        .map(|&v| {
            let mut params = StatParams::default();
            args.param.apply(&mut params, v)?;
            params.validate()?;
            let metrics: Vec<Metrics> = seeds
                .par_iter()
                .map(|s| {
                    let (x, y, truth) =
                        generate_synthetic(args.synth.n, args.synth.positives, PayloadSpec::None, s.instance)?;
                    let mut cfg = OracleConfig::noiseless(params.tau, Protocol::Ca);
                    if let Some(eps) = args.epsilon {
                        cfg = cfg.with_epsilon(eps, s.noise);
                    }
                    let mut oracle = Oracle::new(&x, &y, cfg)?;
                    let p = StatParams {
                        seed: s.attack,
                        ..params.clone()
                    };
                    let (r, _) = actbayes_attack(&mut oracle, &x, &p)?;
                    Ok(evaluate(&r, &truth))
                })
                .collect::<anyhow::Result<_>>()?;
            let m = MeanMetrics::of(&metrics);
            Ok(SweepRow {
                param: args.param.name().to_string(),
                value: v,
                tp_pct: m.pos_leakage_pct,
                tn_pct: m.neg_leakage_pct,
                type1: m.type1,
                type2: m.type2,
            })
        })
        .collect()
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let rows = sweep_rows(args)?;
    let write = |out: &mut dyn Write| -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param", "value", "tp_pct", "tn_pct", "type1", "type2"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &rows {
            w.write_record([
                r.param.clone(),
                r.value.to_string(),
                opt(r.tp_pct),
                opt(r.tn_pct),
                opt(r.type1),
                opt(r.type2),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    match &args.out {
        Some(p) => write(&mut create(p)?),
        None => write(&mut std::io::stdout().lock()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_attack_flags() {
        let cli = Cli::try_parse_from([
            "psi-leak", "attack", "--algo", "dypath", "--tau", "2", "--memo", "m.bin", "--n", "8",
            "--positives", "3", "--trials", "10", "--out", "o", "--k-override", "2",
        ])
        .unwrap();
        let Command::Attack(a) = cli.command else { panic!() };
        assert_eq!((a.algo, a.tau, a.trials, a.k_override), (Algo::Dypath, 2, 10, Some(2)));
        assert_eq!((a.synth.n, a.synth.positives), (8, 3));
    }

    #[test]
    fn rejects_unknown_algo_and_half_online_flags() {
        assert!(Cli::try_parse_from(["psi-leak", "attack", "--algo", "x", "--tau", "1", "--out", "o"]).is_err());
        assert!(Cli::try_parse_from([
            "psi-leak", "attack", "--algo", "guo", "--tau", "1", "--out", "o", "--rounds", "3"
        ])
        .is_err());
    }

    #[test]
    fn seeds_deterministic_and_distinct() {
        let a = trial_seeds(7, 50);
        assert_eq!(a, trial_seeds(7, 50));
        let mut t: Vec<u64> = a.iter().map(|s| s.trial).collect();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 50);
    }

    #[test]
    fn sweep_param_tau_must_be_integer() {
        let mut p = StatParams::default();
        assert!(SweepParam::Tau.apply(&mut p, 2.5).is_err());
        SweepParam::Tau.apply(&mut p, 50.0).unwrap();
        assert_eq!(p.tau, 50);
    }
}
