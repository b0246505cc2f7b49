//! Seeded multi-trial runs, grids over structures and payoffs, and the files
//! they leave behind.

mod config;
pub mod plot;
mod trial;

pub use config::{Environment, ExperimentConfig};
pub use trial::{run_cleanup_trial, run_ipd_trial, CleanupTrial, IpdTrial, PpoPopulation};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cleanup::TrajectoryLog;
use crate::error::{Error, Result};
use crate::incentive::{self, IncentiveEntry, TableOptions};
use crate::ipd::InteractionLog;
use crate::metrics::{
    confidence_interval, cooperation_rates, equality_with_floor, last_quartile_mean, last_quartile_start,
    last_quartile_tally, normalized_reward,
};
use crate::record::{CleanupRecord, IpdRecord};
use crate::team::TeamPartition;

/// Confidence level of every interval the runner reports.
pub const CI_LEVEL: f64 = 0.95;

/// Last-quartile statistics of one dilemma trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IpdSummaryRow {
    pub structure: String,
    pub b: f64,
    pub c: f64,
    pub trial: usize,
    pub seed: u64,
    pub mean_payoff: f64,
    pub normalized_reward: f64,
    pub teammate_coop: Option<f64>,
    pub other_coop: Option<f64>,
}

/// Last-quartile statistics of one Cleanup trial, per episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CleanupSummaryRow {
    pub structure: String,
    pub trial: usize,
    pub seed: u64,
    pub population_reward: f64,
    /// Equality of the agents' team rewards summed over the last quartile.
    pub equality: Option<f64>,
    /// Same, on raw rewards.
    pub raw_equality: Option<f64>,
    pub apples: f64,
    pub cleans: f64,
    pub punishes: f64,
}

/// Cross-trial mean of one metric with its t-interval half width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub structure: String,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub metric: String,
    pub mean: f64,
    /// Missing with fewer than two trials.
    pub half_width: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

/// Results of every trial of one (structure, payoff) condition.
#[derive(Clone, Debug, Default)]
pub struct ConditionReport {
    pub dir: PathBuf,
    pub structure: String,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub ipd: Vec<IpdSummaryRow>,
    pub cleanup: Vec<CleanupSummaryRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<TrialFailure>,
    pub ipd_records: Vec<IpdRecord>,
    pub cleanup_records: Vec<CleanupRecord>,
}

impl ConditionReport {
    pub fn aggregate(&self, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub conditions: Vec<ConditionReport>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.conditions.iter().map(|c| c.failures.len()).sum()
    }
}

fn condition_name(env: Environment, structure: &str, b: f64, c: f64) -> String {
    let s = structure.replace('/', "-");
    match env {
        Environment::Ipd => format!("ipd_{s}_b{b}_c{c}"),
        Environment::Cleanup => format!("cleanup_{s}"),
    }
}

/// Runs every structure of `cfg` at `cfg.benefit`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let partitions = cfg.partitions()?;
    let mut report = RunReport::default();
    for p in &partitions {
        report.conditions.push(run_condition(cfg, p, cfg.benefit)?);
    }
    Ok(report)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    condition: &'a str,
    package_version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    started_unix: u64,
    wall_clock_seconds: f64,
    failures: &'a [TrialFailure],
    files: Vec<ManifestFile>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Lists every file in `dir` (except the manifest) with its hash, and writes
/// the manifest next to them.
fn write_manifest(
    dir: &Path,
    name: &str,
    cfg: &ExperimentConfig,
    started: u64,
    clock: Instant,
    failures: &[TrialFailure],
) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    entries.sort();
    let mut files = Vec::with_capacity(entries.len());
    for p in entries {
        files.push(ManifestFile {
            path: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            sha256: sha256_file(&p)?,
            bytes: fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len(),
        });
    }
    let manifest = Manifest {
        condition: name,
        package_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.config_hash(),
        config: cfg,
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        failures,
        files,
    };
    let path = dir.join("manifest.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::io(&path, e.into()))?;
    w.flush().map_err(|e| Error::io(&path, e))
}

enum TrialOutcome {
    Ipd(Box<IpdRecord>),
    Cleanup(Box<CleanupRecord>),
}

/// Runs all trials of one condition into `<output_dir>/<condition>/`.
pub fn run_condition(cfg: &ExperimentConfig, partition: &TeamPartition, benefit: f64) -> Result<ConditionReport> {
    let started = unix_now();
    let clock = Instant::now();
    let name = condition_name(cfg.environment, &partition.notation(), benefit, cfg.cost);
    let dir = cfg.output_dir.join(&name);
    create_dir(&dir)?;

    let run_one = |k: usize| -> (usize, u64, Result<TrialOutcome>) {
        let seed = cfg.base_seed + k as u64;
        (k, seed, run_trial_files(cfg, partition, benefit, seed, k, &dir))
    };
    let trials: Vec<usize> = (0..cfg.trials).collect();
    let outcomes: Vec<(usize, u64, Result<TrialOutcome>)> = if cfg.threads == 1 {
        trials.into_iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| trials.into_par_iter().map(run_one).collect())
    };

    let mut report = ConditionReport {
        dir: dir.clone(),
        structure: partition.notation(),
        ..Default::default()
    };
    for (k, seed, outcome) in outcomes {
        match outcome {
            Ok(TrialOutcome::Ipd(rec)) => {
                report.ipd.push(ipd_summary(&rec, k));
                report.ipd_records.push(*rec);
            }
            Ok(TrialOutcome::Cleanup(rec)) => {
                report.cleanup.push(cleanup_summary(&rec, k, cfg));
                report.cleanup_records.push(*rec);
            }
            // configuration problems are not trial failures
            Err(e) if e.is_config_error() => return Err(e),
            Err(e) => {
                let failure = TrialFailure {
                    trial: k,
                    seed,
                    error: e.to_string(),
                };
                let path = dir.join(format!("crash_trial_{k}.json"));
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &failure).map_err(|e| Error::io(&path, e.into()))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                report.failures.push(failure);
            }
        }
    }

    match cfg.environment {
        Environment::Ipd => {
            report.b = Some(benefit);
            report.c = Some(cfg.cost);
            write_rows(
                &dir.join("summary.csv"),
                &report.ipd,
                &[
                    "structure",
                    "b",
                    "c",
                    "trial",
                    "seed",
                    "mean_payoff",
                    "normalized_reward",
                    "teammate_coop",
                    "other_coop",
                ],
            )?;
            let col = |f: fn(&IpdSummaryRow) -> Option<f64>| report.ipd.iter().filter_map(f).collect::<Vec<_>>();
            for (metric, samples) in [
                ("normalized_reward", col(|r| Some(r.normalized_reward))),
                ("mean_payoff", col(|r| Some(r.mean_payoff))),
                ("teammate_coop", col(|r| r.teammate_coop)),
                ("other_coop", col(|r| r.other_coop)),
            ] {
                push_aggregate(&mut report, metric, &samples);
            }
        }
        Environment::Cleanup => {
            write_rows(
                &dir.join("summary.csv"),
                &report.cleanup,
                &[
                    "structure",
                    "trial",
                    "seed",
                    "population_reward",
                    "equality",
                    "raw_equality",
                    "apples",
                    "cleans",
                    "punishes",
                ],
            )?;
            let col =
                |f: fn(&CleanupSummaryRow) -> Option<f64>| report.cleanup.iter().filter_map(f).collect::<Vec<_>>();
            for (metric, samples) in [
                ("population_reward", col(|r| Some(r.population_reward))),
                ("equality", col(|r| r.equality)),
                ("raw_equality", col(|r| r.raw_equality)),
                ("apples", col(|r| Some(r.apples))),
                ("cleans", col(|r| Some(r.cleans))),
            ] {
                push_aggregate(&mut report, metric, &samples);
            }
        }
    }
    write_rows(
        &dir.join("summary_ci.csv"),
        &report.aggregates,
        &["structure", "b", "c", "metric", "mean", "half_width", "n"],
    )?;
    write_manifest(&dir, &name, cfg, started, clock, &report.failures)?;
    Ok(report)
}

fn push_aggregate(report: &mut ConditionReport, metric: &str, samples: &[f64]) {
    if samples.is_empty() {
        return;
    }
    let (mean, half_width) = match confidence_interval(samples, CI_LEVEL) {
        Ok((m, h)) => (m, Some(h)),
        Err(_) => (samples.iter().sum::<f64>() / samples.len() as f64, None),
    };
    report.aggregates.push(Aggregate {
        structure: report.structure.clone(),
        b: report.b,
        c: report.c,
        metric: metric.to_string(),
        mean,
        half_width,
        n: samples.len(),
    });
}

pub fn ipd_summary(rec: &IpdRecord, trial: usize) -> IpdSummaryRow {
    let mean_payoff = last_quartile_mean(&rec.mean_payoff_series());
    let last = last_quartile_tally(&rec.tallies);
    let rate = |num: u32, den: u32| (den > 0).then(|| num as f64 / den as f64);
    IpdSummaryRow {
        structure: rec.structure.clone(),
        b: rec.b,
        c: rec.c,
        trial,
        seed: rec.seed,
        mean_payoff,
        normalized_reward: normalized_reward(mean_payoff, rec.b, rec.c),
        teammate_coop: rate(last.teammate_coop, last.teammate_total),
        other_coop: rate(last.other_coop, last.other_total),
    }
}

/// Lowest total reward one agent can receive over `episodes` Cleanup
/// episodes: fined by everybody else and paying for its own beam every step.
pub fn cleanup_reward_floor(cfg: &ExperimentConfig, episodes: usize) -> f64 {
    let per_step = cfg.punish_cost.min(0.0) + (cfg.cleanup_agents.saturating_sub(1)) as f64 * cfg.punish_fine.min(0.0);
    per_step * (cfg.episode_length * episodes) as f64
}

pub fn cleanup_summary(rec: &CleanupRecord, trial: usize, cfg: &ExperimentConfig) -> CleanupSummaryRow {
    let tail = &rec.episodes[last_quartile_start(rec.episodes.len())..];
    let n_agents = rec.episodes.first().map(|e| e.apples.len()).unwrap_or(0);
    let mut team = vec![0.0; n_agents];
    let mut raw = vec![0.0; n_agents];
    for ep in tail {
        for a in 0..n_agents {
            team[a] += ep.team_reward[a];
            raw[a] += ep.raw_reward[a];
        }
    }
    let per_ep = |f: &dyn Fn(&crate::record::CleanupEpisodeStats) -> f64| {
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(f).sum::<f64>() / tail.len() as f64
        }
    };
    let floor = cleanup_reward_floor(cfg, tail.len());
    CleanupSummaryRow {
        structure: rec.structure.clone(),
        trial,
        seed: rec.seed,
        population_reward: per_ep(&|e| e.population_reward()),
        equality: equality_with_floor(&team, floor),
        raw_equality: equality_with_floor(&raw, floor),
        apples: per_ep(&|e| e.apples.iter().sum::<u32>() as f64),
        cleans: per_ep(&|e| e.cleans.iter().sum::<u32>() as f64),
        punishes: per_ep(&|e| e.punishes.iter().sum::<u32>() as f64),
    }
}

/// Column names of the per-trial dilemma series, one row per window.
pub const IPD_SERIES_HEADER: [&str; 7] = [
    "window_start",
    "episodes",
    "mean_payoff",
    "normalized_reward",
    "teammate_coop",
    "other_coop",
    "teammate_share",
];

pub const CLEANUP_SERIES_HEADER: [&str; 8] = [
    "episode",
    "population_reward",
    "equality",
    "apples",
    "cleans",
    "punishes",
    "apples_spawned",
    "waste_spawned",
];

pub const CLEANUP_AGENT_HEADER: [&str; 7] = [
    "episode",
    "agent",
    "apples",
    "cleans",
    "punishes",
    "raw_reward",
    "team_reward",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn run_trial_files(
    cfg: &ExperimentConfig,
    partition: &TeamPartition,
    benefit: f64,
    seed: u64,
    k: usize,
    dir: &Path,
) -> Result<TrialOutcome> {
    match cfg.environment {
        Environment::Ipd => {
            let mut log = if cfg.log_every > 0 {
                Some(InteractionLog::new(create(
                    &dir.join(format!("trial_{k}_interactions.csv")),
                )?)?)
            } else {
                None
            };
            let t = run_ipd_trial(cfg, partition, benefit, seed, log.as_mut())?;
            if let Some(log) = log {
                log.finish()?.flush().map_err(|e| Error::io(dir, e))?;
            }
            write_ipd_series(&dir.join(format!("trial_{k}_series.csv")), &t.record, cfg.coop_window)?;
            let path = dir.join(format!("trial_{k}_qtables.csv"));
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["agent", "state", "action", "value"])?;
            for (agent, q) in t.q_tables.iter().enumerate() {
                let mut buf = Vec::new();
                q.dump_csv(&mut buf)?;
                let mut r = csv::Reader::from_reader(buf.as_slice());
                for row in r.records() {
                    let row = row?;
                    w.write_record(std::iter::once(agent.to_string()).chain(row.iter().map(str::to_string)))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(TrialOutcome::Ipd(Box::new(t.record)))
        }
        Environment::Cleanup => {
            let mut log = if cfg.log_every > 0 {
                Some(TrajectoryLog::new(create(
                    &dir.join(format!("trial_{k}_trajectory.csv")),
                )?)?)
            } else {
                None
            };
            let t = run_cleanup_trial(cfg, partition, seed, log.as_mut())?;
            if let Some(log) = log {
                log.finish()?.flush().map_err(|e| Error::io(dir, e))?;
            }
            write_cleanup_series(dir, k, &t.record, cleanup_reward_floor(cfg, 1))?;
            if cfg.save_checkpoints {
                for (agent, l) in t.population.learners.iter().enumerate() {
                    let path = dir.join(format!("trial_{k}_agent_{agent}.ckpt"));
                    fs::write(&path, l.net.to_checkpoint()).map_err(|e| Error::io(&path, e))?;
                }
            }
            Ok(TrialOutcome::Cleanup(Box::new(t.record)))
        }
    }
}

fn write_ipd_series(path: &Path, rec: &IpdRecord, window: usize) -> Result<()> {
    let (teammate, other) = cooperation_rates(&rec.tallies, window);
    let payoff = rec.mean_payoff_series();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(IPD_SERIES_HEADER)?;
    for (i, chunk) in payoff.chunks(window).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let tallies = &rec.tallies[i * window..i * window + chunk.len()];
        let team_actions: u32 = tallies.iter().map(|t| t.teammate_total).sum();
        let all: u32 = tallies.iter().map(|t| t.total()).sum();
        w.write_record([
            (i * window).to_string(),
            chunk.len().to_string(),
            mean.to_string(),
            normalized_reward(mean, rec.b, rec.c).to_string(),
            opt(teammate[i]),
            opt(other[i]),
            (team_actions as f64 / all.max(1) as f64).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_cleanup_series(dir: &Path, k: usize, rec: &CleanupRecord, episode_floor: f64) -> Result<()> {
    let path = dir.join(format!("trial_{k}_series.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(CLEANUP_SERIES_HEADER)?;
    for (i, ep) in rec.episodes.iter().enumerate() {
        let sum = |v: &[u32]| v.iter().sum::<u32>().to_string();
        w.write_record([
            i.to_string(),
            ep.population_reward().to_string(),
            opt(equality_with_floor(&ep.team_reward, episode_floor)),
            sum(&ep.apples),
            sum(&ep.cleans),
            sum(&ep.punishes),
            ep.apples_spawned.to_string(),
            ep.waste_spawned.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(format!("trial_{k}_agents.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(CLEANUP_AGENT_HEADER)?;
    for (i, ep) in rec.episodes.iter().enumerate() {
        for a in 0..ep.apples.len() {
            w.write_record([
                i.to_string(),
                a.to_string(),
                ep.apples[a].to_string(),
                ep.cleans[a].to_string(),
                ep.punishes[a].to_string(),
                ep.raw_reward[a].to_string(),
                ep.team_reward[a].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// One row of the grid table: the learned outcome next to the closed-form
/// incentive for the same structure and payoffs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub structure: String,
    pub b: f64,
    pub c: f64,
    pub nu: f64,
    pub margin: f64,
    pub incentivized_action: String,
    pub normalized_reward: Option<f64>,
    pub half_width: Option<f64>,
    pub teammate_coop: Option<f64>,
    pub other_coop: Option<f64>,
    pub trials: usize,
}

pub const GRID_HEADER: [&str; 11] = [
    "structure",
    "b",
    "c",
    "nu",
    "margin",
    "incentivized_action",
    "normalized_reward",
    "half_width",
    "teammate_coop",
    "other_coop",
    "trials",
];

#[derive(Clone, Debug, Default)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub run: RunReport,
}

/// Every structure at every benefit value (with the configured cost). For
/// the dilemma the table also carries the incentive analysis of each cell;
/// Cleanup ignores the payoffs and runs each structure once.
pub fn run_grid(cfg: &ExperimentConfig, structures: &[String], benefits: &[f64]) -> Result<GridReport> {
    let mut report = GridReport::default();
    if structures.is_empty() {
        create_dir(&cfg.output_dir)?;
        write_rows(&cfg.output_dir.join("grid_summary.csv"), &report.rows, &GRID_HEADER)?;
        return Ok(report);
    }
    let cfg = ExperimentConfig {
        structures: structures.to_vec(),
        grid_benefits: benefits.to_vec(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let partitions = cfg.partitions()?;
    create_dir(&cfg.output_dir)?;
    match cfg.environment {
        Environment::Cleanup => {
            for p in &partitions {
                report.run.conditions.push(run_condition(&cfg, p, cfg.benefit)?);
            }
        }
        Environment::Ipd => {
            let pairs: Vec<(f64, f64)> = benefits.iter().map(|&b| (b, cfg.cost)).collect();
            let names: Vec<&str> = structures.iter().map(String::as_str).collect();
            let opts = TableOptions {
                n_agents: cfg.n_agents,
                include_bookends: true,
                pairing_mode: cfg.pairing_mode,
                nu_override: None,
            };
            let entries: Vec<IncentiveEntry> = incentive::incentive_table(&names, &pairs, &opts)?;
            for e in &entries {
                let p = crate::team::parse_structure(&e.structure, cfg.n_agents)?;
                let cond = run_condition(&cfg, &p, e.b)?;
                let agg = |m: &str| cond.aggregate(m);
                report.rows.push(GridRow {
                    structure: e.structure.clone(),
                    b: e.b,
                    c: e.c,
                    nu: e.nu,
                    margin: e.margin,
                    incentivized_action: e.incentivized_action.as_str().to_string(),
                    normalized_reward: agg("normalized_reward").map(|a| a.mean),
                    half_width: agg("normalized_reward").and_then(|a| a.half_width),
                    teammate_coop: agg("teammate_coop").map(|a| a.mean),
                    other_coop: agg("other_coop").map(|a| a.mean),
                    trials: cond.ipd.len(),
                });
                report.run.conditions.push(cond);
            }
            incentive::write_csv(&entries, create(&cfg.output_dir.join("incentives.csv"))?)?;
            fs::write(cfg.output_dir.join("incentives.txt"), incentive::render_text(&entries))
                .map_err(|e| Error::io(&cfg.output_dir, e))?;
        }
    }
    write_rows(&cfg.output_dir.join("grid_summary.csv"), &report.rows, &GRID_HEADER)?;
    if cfg.environment == Environment::Ipd {
        fs::write(cfg.output_dir.join("grid_table.txt"), render_grid(&report.rows))
            .map_err(|e| Error::io(&cfg.output_dir, e))?;
    }
    Ok(report)
}

/// Normalized reward per structure (rows) and benefit (columns).
pub fn render_grid(rows: &[GridRow]) -> String {
    let mut structures: Vec<&str> = Vec::new();
    let mut benefits: Vec<f64> = Vec::new();
    for r in rows {
        if !structures.contains(&r.structure.as_str()) {
            structures.push(&r.structure);
        }
        if !benefits.contains(&r.b) {
            benefits.push(r.b);
        }
    }
    let mut out = format!("{:<10}", "structure");
    for b in &benefits {
        out.push_str(&format!("{:>22}", format!("b={b}")));
    }
    out.push('\n');
    for s in structures {
        out.push_str(&format!("{s:<10}"));
        for &b in &benefits {
            let cell = rows
                .iter()
                .find(|r| r.structure == s && r.b == b)
                .map(|r| match (r.normalized_reward, r.half_width) {
                    (Some(m), Some(h)) => format!("{m:.3} +/- {h:.3} ({})", &r.incentivized_action[..1]),
                    (Some(m), None) => format!("{m:.3} ({})", &r.incentivized_action[..1]),
                    _ => "-".to_string(),
                })
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!("{cell:>22}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            episodes: 400,
            trials: 2,
            coop_window: 100,
            output_dir: dir.to_path_buf(),
            threads: 1,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_writes_summaries_and_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = quick(tmp.path());
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.conditions.len(), 1);
        let cond = &report.conditions[0];
        assert_eq!(cond.ipd.len(), 2);
        assert!(cond.aggregate("normalized_reward").unwrap().half_width.is_some());
        for f in [
            "summary.csv",
            "summary_ci.csv",
            "manifest.json",
            "trial_0_series.csv",
            "trial_1_qtables.csv",
        ] {
            assert!(cond.dir.join(f).is_file(), "{f}");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(cond.dir.join("manifest.json")).unwrap()).unwrap();
        let files = manifest["files"].as_array().unwrap();
        assert_eq!(files.len(), 6);
        let series = files.iter().find(|f| f["path"] == "trial_0_series.csv").unwrap();
        assert_eq!(
            series["sha256"],
            sha256_file(&cond.dir.join("trial_0_series.csv")).unwrap().as_str()
        );
        assert_eq!(manifest["config_hash"], cfg.config_hash().as_str());
        // 400 episodes in windows of 100
        let text = fs::read_to_string(cond.dir.join("trial_0_series.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn toml_config_to_summaries_and_charts() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("exp.toml");
        fs::write(
            &path,
            "structures = [\"1/30\", \"6/5\"]\nbenefit = 10.0\nepisodes = 2000\ncoop_window = 250\ntrials = 2\nbase_seed = 11\n",
        )
        .unwrap();
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        cfg.output_dir = tmp.path().join("out");
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.conditions.len(), 2);
        let seeds: Vec<u64> = report.conditions[0].ipd.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![11, 12]);

        let names: Vec<String> = plot::emit_plots(&cfg.output_dir)
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"compare_normalized_reward.svg".to_string()));
        assert_eq!(names.iter().filter(|n| *n == "cooperation.svg").count(), 2);
    }

    #[test]
    fn cleanup_series_equality_stays_in_unit_interval() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            environment: Environment::Cleanup,
            structures: vec!["6/1".into()],
            timesteps: 3000,
            trials: 1,
            output_dir: tmp.path().to_path_buf(),
            threads: 1,
            ..ExperimentConfig::default()
        };
        let cond = run_experiment(&cfg).unwrap().conditions.remove(0);
        // untrained agents punish a lot, so episode rewards are negative
        assert!(cond.cleanup_records[0]
            .episodes
            .iter()
            .any(|e| e.raw_reward.iter().any(|&r| r < 0.0)));
        let t = plot::Table::read(&cond.dir.join("trial_0_series.csv")).unwrap();
        for e in t.numbers("equality").unwrap() {
            assert!((0.0..=1.0).contains(&e), "{e}");
        }
    }

    #[test]
    fn rerun_is_byte_identical_and_thread_independent() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&quick(a.path())).unwrap();
        let parallel = ExperimentConfig {
            threads: 2,
            ..quick(b.path())
        };
        run_experiment(&parallel).unwrap();
        let sub = "ipd_5-6_b5_c1";
        for f in [
            "summary.csv",
            "summary_ci.csv",
            "trial_0_series.csv",
            "trial_1_series.csv",
            "trial_1_qtables.csv",
        ] {
            let x = fs::read(a.path().join(sub).join(f)).unwrap();
            let y = fs::read(b.path().join(sub).join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn invalid_structure_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let cfg = ExperimentConfig {
            structures: vec!["7/4".into()],
            ..quick(&out)
        };
        assert!(run_experiment(&cfg).unwrap_err().is_config_error());
        assert!(!out.exists());
    }

    #[test]
    fn grid_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            episodes: 40,
            trials: 1,
            ..quick(tmp.path())
        };
        let empty = run_grid(&cfg, &[], &[2.0]).unwrap();
        assert!(empty.rows.is_empty());
        let text = fs::read_to_string(tmp.path().join("grid_summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);

        let structures: Vec<String> = ["1/30", "2/15", "3/10", "5/6", "6/5", "10/3", "15/2", "30/1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let grid = run_grid(&cfg, &structures, &[2.0, 5.0, 10.0]).unwrap();
        assert_eq!(grid.rows.len(), 24);
        assert!(tmp.path().join("incentives.csv").is_file());
        assert!(render_grid(&grid.rows).lines().count() == 9);
    }
}
