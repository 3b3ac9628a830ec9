//! Regret experiments: one fresh instance per iteration, every configured
//! mechanism run against the same context sequence and click tape.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{mean_se, RegretCurve};
use crate::allocator::AllocatorKind;
use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceSeeds};
use crate::mechanism::{self, MechanismKind, RoundRecord, RunOptions, RunReport};
use crate::rng::{derive_seed, Stream};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Thread pool with `workers` threads (0 = one per core).
pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("field `workers`: {e}")))
}

/// Instance of iteration `k`.
pub fn iteration_instance(cfg: &ExperimentConfig, k: usize) -> Result<Instance> {
    let mut seeds = InstanceSeeds::derive(cfg.seed, k as u64);
    if cfg.fixed_agents {
        seeds.agents = InstanceSeeds::derive(cfg.seed, 0).agents;
    }
    Instance::generate(cfg.instance_params(), seeds)
}

pub fn iteration_resample_seed(cfg: &ExperimentConfig, k: usize) -> u64 {
    derive_seed(cfg.seed, Stream::Resample, k as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: usize,
    pub seeds: InstanceSeeds,
    pub resample_seed: u64,
    pub runs: Vec<RunReport>,
}

impl IterationOutcome {
    pub fn run(&self, mechanism: MechanismKind) -> Option<&RunReport> {
        let name = mechanism.name();
        self.runs.iter().find(|r| r.mechanism == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub iteration: usize,
    pub mechanism: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSummary {
    pub mechanism: String,
    pub final_regret_mean: f64,
    pub final_regret_se: f64,
    pub center_utility_mean: f64,
    pub social_welfare_mean: f64,
    /// Summed over iterations.
    pub rule_counts: BTreeMap<String, u64>,
    /// Mean clicks per agent index.
    pub clicks_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub curves: Vec<RegretCurve>,
    pub summaries: Vec<MechanismSummary>,
    pub iterations: Vec<IterationOutcome>,
    pub failures: Vec<FailureRecord>,
}

impl ExperimentReport {
    pub fn curve(&self, mechanism: MechanismKind) -> Option<&RegretCurve> {
        let name = mechanism.name();
        self.curves.iter().find(|c| c.mechanism == name)
    }

    pub fn summary(&self, mechanism: MechanismKind) -> Option<&MechanismSummary> {
        let name = mechanism.name();
        self.summaries.iter().find(|c| c.mechanism == name)
    }

    /// Writes `summary.json`, `curves.csv` and `iterations.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;

        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        w.write_record(["mechanism", "t", "mean_regret", "se"])?;
        for c in &self.curves {
            for ((t, m), se) in c.checkpoints.iter().zip(&c.mean).zip(&c.se) {
                w.write_record([c.mechanism.clone(), t.to_string(), m.to_string(), se.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("iterations.csv"))?;
        w.write_record(["iteration", "mechanism", "t", "cumulative_regret"])?;
        for it in &self.iterations {
            for run in &it.runs {
                for (t, r) in &run.regret_checkpoints {
                    w.write_record([
                        it.iteration.to_string(),
                        run.mechanism.clone(),
                        t.to_string(),
                        r.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per round.
pub fn write_rounds_csv(path: &Path, rounds: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "context_index",
        "agent",
        "rule",
        "click",
        "payment",
        "regret",
        "cumulative_regret",
    ])?;
    for r in rounds {
        w.write_record([
            r.round.to_string(),
            r.context_index.to_string(),
            r.agent.to_string(),
            r.rule.as_str().to_string(),
            (r.click as u8).to_string(),
            r.payment.to_string(),
            r.regret.to_string(),
            r.cumulative_regret.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_iteration(
    cfg: &ExperimentConfig,
    k: usize,
    given: Option<&Instance>,
    rounds_dir: Option<&Path>,
) -> std::result::Result<IterationOutcome, FailureRecord> {
    let fail = |mechanism: &str, e: Error| FailureRecord {
        iteration: k,
        mechanism: mechanism.to_string(),
        message: e.to_string(),
    };
    let generated;
    let instance = match given {
        Some(inst) => inst,
        None => {
            generated = iteration_instance(cfg, k).map_err(|e| fail("instance", e))?;
            &generated
        }
    };
    let resample_seed = iteration_resample_seed(cfg, k);
    let mech_cfg = cfg.mechanism_config();
    let options = RunOptions {
        record_rounds: rounds_dir.is_some(),
        disable_resampling: false,
    };
    let mut runs = Vec::with_capacity(cfg.mechanisms.len());
    for &kind in &cfg.mechanisms {
        let name = kind.name();
        let mut report = mechanism::run(kind, instance, &mech_cfg, resample_seed, options)
            .map_err(|e| fail(&name, e))?;
        if let Some(dir) = rounds_dir {
            let path = dir.join(format!("{name}_iter{k:03}.csv"));
            write_rounds_csv(&path, &report.rounds).map_err(|e| fail(&name, e))?;
            report.rounds = Vec::new();
        }
        runs.push(report);
    }
    Ok(IterationOutcome {
        iteration: k,
        seeds: instance.seeds,
        resample_seed,
        runs,
    })
}

/// Runs every iteration and aggregates. When `out` is given, per-round CSVs
/// (if enabled) and the summary artifacts are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    run_experiment_on(cfg, None, out)
}

/// Like [`run_experiment`], but iteration `k` uses `instances[k]` when given.
/// The number of iterations and the instance shape then come from the files.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    instances: Option<&[Instance]>,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    if let Some(list) = instances {
        let first = list
            .first()
            .ok_or_else(|| Error::Config("no instance files given".into()))?;
        cfg.iterations = list.len();
        cfg.agents = first.num_agents();
        cfg.dim = first.dim();
        cfg.horizon = first.horizon();
        if let Some(bad) = list.iter().find(|i| {
            (i.num_agents(), i.dim(), i.horizon()) != (cfg.agents, cfg.dim, cfg.horizon)
        }) {
            return Err(Error::MalformedInstance(format!(
                "instance shapes differ: n={} d={} T={} vs n={} d={} T={}",
                bad.num_agents(),
                bad.dim(),
                bad.horizon(),
                cfg.agents,
                cfg.dim,
                cfg.horizon
            )));
        }
    }
    let cfg = &cfg;
    cfg.validate()?;
    let rounds_dir = match out {
        Some(dir) if cfg.write_rounds => {
            let d = dir.join("rounds");
            fs::create_dir_all(&d)?;
            Some(d)
        }
        _ => None,
    };
    let pool = build_pool(cfg.workers)?;
    let results: Vec<_> = pool.install(|| {
        (0..cfg.iterations)
            .into_par_iter()
            .map(|k| run_iteration(cfg, k, instances.map(|l| &l[k]), rounds_dir.as_deref()))
            .collect()
    });

    let mut iterations = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(it) => iterations.push(it),
            Err(f) => failures.push(f),
        }
    }

    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    if !iterations.is_empty() {
        for (m, kind) in cfg.mechanisms.iter().enumerate() {
            let runs: Vec<&RunReport> = iterations.iter().map(|it| &it.runs[m]).collect();
            let name = kind.name();
            let points: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| r.regret_checkpoints.clone()).collect();
            let curve = RegretCurve::aggregate(&name, &points);
            let finals = curve.final_values();
            let (final_regret_mean, final_regret_se) = mean_se(&finals);
            let k = runs.len() as f64;
            let mut rule_counts = BTreeMap::new();
            let mut clicks_mean = vec![0.0; cfg.agents];
            for r in &runs {
                for (rule, c) in &r.rule_counts {
                    *rule_counts.entry(rule.clone()).or_insert(0) += c;
                }
                for (acc, c) in clicks_mean.iter_mut().zip(&r.clicks) {
                    *acc += *c as f64 / k;
                }
            }
            summaries.push(MechanismSummary {
                mechanism: name,
                final_regret_mean,
                final_regret_se,
                center_utility_mean: runs.iter().map(|r| r.center_utility).sum::<f64>() / k,
                social_welfare_mean: runs.iter().map(|r| r.social_welfare).sum::<f64>() / k,
                rule_counts,
                clicks_mean,
            });
            curves.push(curve);
        }
    }

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        curves,
        summaries,
        iterations,
        failures,
    };
    if let Some(dir) = out {
        report.write_artifacts(dir)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSweepPoint {
    pub batch_size: usize,
    pub final_regret_mean: f64,
    pub final_regret_se: f64,
    pub final_regrets: Vec<f64>,
}

/// Batch sizes of the default sweep.
pub const DEFAULT_BATCH_SIZES: [usize; 9] = [1, 5, 10, 25, 50, 75, 100, 125, 150];

/// Final regret of the batched mechanism for each batch size; every size
/// sees the same instances and resampling seeds.
pub fn sweep_bs(cfg: &ExperimentConfig, sizes: &[usize], out: Option<&Path>) -> Result<Vec<BatchSweepPoint>> {
    let mut points = Vec::with_capacity(sizes.len());
    for &bs in sizes {
        let mut c = cfg.clone();
        c.allocator.batch_size = bs;
        c.mechanisms = vec![MechanismKind::Allocator(AllocatorKind::ELinUcbSB)];
        c.write_rounds = false;
        let report = run_experiment(&c, None)?;
        if let Some(f) = report.failures.first() {
            return Err(Error::RunFailed {
                iteration: f.iteration,
                mechanism: f.mechanism.clone(),
                source: Box::new(Error::Config(f.message.clone())),
            });
        }
        let curve = &report.curves[0];
        points.push(BatchSweepPoint {
            batch_size: bs,
            final_regret_mean: curve.final_mean(),
            final_regret_se: curve.final_se(),
            final_regrets: curve.final_values(),
        });
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep_bs.csv"))?;
        w.write_record(["batch_size", "mean_regret", "se"])?;
        for p in &points {
            w.write_record([
                p.batch_size.to_string(),
                p.final_regret_mean.to_string(),
                p.final_regret_se.to_string(),
            ])?;
        }
        w.flush()?;
        fs::write(dir.join("sweep_bs.json"), serde_json::to_string_pretty(&points)?)?;
    }
    Ok(points)
}
