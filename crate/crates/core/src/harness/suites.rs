//! Property grids: ex-post monotonicity of allocation rules, and incentive
//! compatibility / individual rationality of the resampled mechanisms.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SuiteConfig};
use super::experiment::build_pool;
use super::metrics::mean_se;
use crate::allocator::{AllocationDecision, AllocatorKind, AllocatorParams};
use crate::error::Result;
use crate::instance::{ClickTape, Instance, InstanceFile, InstanceParams, InstanceSeeds};
use crate::mechanism::{run_mechanism, MechanismConfig, RunOptions};
use crate::rng::{derive_seed, Stream};

/// Runs an allocation rule over an instance with the given bids, without
/// resampling.
pub fn allocation_trace(
    kind: AllocatorKind,
    params: &AllocatorParams,
    instance: &Instance,
    bids: &[f64],
) -> Result<Vec<AllocationDecision>> {
    let mut alloc = kind.build(params, &instance.agents, bids, instance.dim(), instance.horizon())?;
    let mut out = Vec::with_capacity(instance.horizon());
    for t in 1..=instance.horizon() {
        out.push(alloc.step(t, instance.context(t), &instance.tape)?);
    }
    alloc.finish();
    Ok(out)
}

/// `prefix[t-1]` = clicks of `agent` over rounds `1..=t`.
pub fn prefix_clicks(trace: &[AllocationDecision], tape: &ClickTape, agent: usize) -> Vec<u32> {
    let row = tape.row(agent);
    let mut acc = 0u32;
    trace
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if d.agent == agent {
                acc += row[k] as u32;
            }
            acc
        })
        .collect()
}

/// First round at which `high` has fewer cumulative clicks than `low`.
pub fn first_prefix_violation(low: &[u32], high: &[u32]) -> Option<usize> {
    low.iter().zip(high).position(|(l, h)| h < l).map(|k| k + 1)
}

fn grid_instance(suite: &SuiteConfig, base: u64, k: usize, horizon: usize) -> Result<Instance> {
    let n = suite.agents[k % suite.agents.len()];
    let d = suite.dims[(k / suite.agents.len()) % suite.dims.len()];
    let params = InstanceParams {
        agents: n,
        dim: d,
        values_per_feature: suite.values_per_feature,
        horizon,
    };
    Instance::generate(params, InstanceSeeds::derive(base, k as u64))
}

fn suite_params(cfg: &ExperimentConfig) -> AllocatorParams {
    AllocatorParams {
        batch_size: cfg.suites.batch_size,
        ..cfg.allocator
    }
}

/// Instance `k` of the monotonicity grid.
pub fn monotonicity_instance(cfg: &ExperimentConfig, k: usize) -> Result<Instance> {
    grid_instance(&cfg.suites, derive_seed(cfg.seed, Stream::Instance, 0), k, cfg.suites.horizon)
}

/// Instance `k` of the EPIC/EPIR grid.
pub fn epic_instance(cfg: &ExperimentConfig, k: usize) -> Result<Instance> {
    grid_instance(&cfg.suites, derive_seed(cfg.seed, Stream::Instance, 1), k, cfg.suites.epic_horizon)
}

/// Everything needed to replay one violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionBundle {
    pub allocator: AllocatorKind,
    pub params: AllocatorParams,
    pub agent: usize,
    pub bid_low: f64,
    pub bid_high: f64,
    pub first_round: usize,
    /// Instance with the agent bidding `bid_low`.
    pub instance: InstanceFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub instance: usize,
    pub seeds: InstanceSeeds,
    pub num_agents: usize,
    pub dim: usize,
    pub allocator: AllocatorKind,
    pub agent: usize,
    pub bid_low: f64,
    pub bid_high: f64,
    pub first_round: usize,
    pub clicks_low: u32,
    pub clicks_high: u32,
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub instances: usize,
    pub horizon: usize,
    /// Adjacent bid pairs compared, per allocator.
    pub comparisons: BTreeMap<String, u64>,
    pub violations_by_allocator: BTreeMap<String, u64>,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

/// Bundles written per suite run at most.
const MAX_BUNDLES: usize = 50;

fn check_instance(
    cfg: &ExperimentConfig,
    allocators: &[AllocatorKind],
    k: usize,
) -> Result<(Vec<(AllocatorKind, u64)>, Vec<(MonotonicityViolation, Instance)>)> {
    let instance = monotonicity_instance(cfg, k)?;
    let params = suite_params(cfg);
    let grid = &cfg.suites.bid_grid;
    let truthful = instance.bids();
    let mut comparisons = Vec::new();
    let mut found = Vec::new();
    for &kind in allocators {
        let mut compared = 0u64;
        for agent in 0..instance.num_agents() {
            let mut prev: Option<(f64, Vec<u32>)> = None;
            for &level in grid {
                let mut bids = truthful.clone();
                bids[agent] = level;
                let trace = allocation_trace(kind, &params, &instance, &bids)?;
                let clicks = prefix_clicks(&trace, &instance.tape, agent);
                if let Some((low, low_clicks)) = &prev {
                    compared += 1;
                    if let Some(t) = first_prefix_violation(low_clicks, &clicks) {
                        let mut low_bids = truthful.clone();
                        low_bids[agent] = *low;
                        found.push((
                            MonotonicityViolation {
                                instance: k,
                                seeds: instance.seeds,
                                num_agents: instance.num_agents(),
                                dim: instance.dim(),
                                allocator: kind,
                                agent,
                                bid_low: *low,
                                bid_high: level,
                                first_round: t,
                                clicks_low: low_clicks[t - 1],
                                clicks_high: clicks[t - 1],
                                bundle: None,
                            },
                            instance.with_bids(&low_bids)?,
                        ));
                    }
                }
                prev = Some((level, clicks));
            }
        }
        comparisons.push((kind, compared));
    }
    Ok((comparisons, found))
}

/// Coupled replays over the bid grid for every grid instance, allocator and
/// agent; any adjacent bid pair where the higher bid has fewer cumulative
/// clicks at some round is a violation. Bundles go to `out/bundles`.
pub fn monotonicity_suite(
    cfg: &ExperimentConfig,
    allocators: &[AllocatorKind],
    out: Option<&Path>,
) -> Result<MonotonicityReport> {
    cfg.validate()?;
    let pool = build_pool(cfg.workers)?;
    let results: Vec<_> = pool.install(|| {
        (0..cfg.suites.instances)
            .into_par_iter()
            .map(|k| check_instance(cfg, allocators, k))
            .collect()
    });

    let mut report = MonotonicityReport {
        instances: cfg.suites.instances,
        horizon: cfg.suites.horizon,
        comparisons: allocators.iter().map(|k| (k.to_string(), 0)).collect(),
        violations_by_allocator: allocators.iter().map(|k| (k.to_string(), 0)).collect(),
        violations: Vec::new(),
    };
    let params = suite_params(cfg);
    for r in results {
        let (comparisons, found) = r?;
        for (kind, c) in comparisons {
            *report.comparisons.get_mut(kind.as_str()).unwrap() += c;
        }
        for (mut v, instance) in found {
            *report.violations_by_allocator.get_mut(v.allocator.as_str()).unwrap() += 1;
            if let Some(dir) = out {
                if report.violations.len() < MAX_BUNDLES {
                    let bundles = dir.join("bundles");
                    fs::create_dir_all(&bundles)?;
                    let path = bundles.join(format!(
                        "{}_inst{:03}_agent{}_bid{:.2}.json",
                        v.allocator, v.instance, v.agent, v.bid_low
                    ));
                    let bundle = ReproductionBundle {
                        allocator: v.allocator,
                        params,
                        agent: v.agent,
                        bid_low: v.bid_low,
                        bid_high: v.bid_high,
                        first_round: v.first_round,
                        instance: instance.to_file(),
                    };
                    fs::write(&path, serde_json::to_string(&bundle)?)?;
                    v.bundle = Some(path);
                }
            }
            report.violations.push(v);
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("monotonicity.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Replays a bundle; returns the first violating round if it still fails.
pub fn replay_bundle(bundle: &ReproductionBundle) -> Result<Option<usize>> {
    let instance = Instance::from_file(bundle.instance.clone())?;
    let mut bids = instance.bids();
    let low = allocation_trace(bundle.allocator, &bundle.params, &instance, &bids)?;
    bids[bundle.agent] = bundle.bid_high;
    let high = allocation_trace(bundle.allocator, &bundle.params, &instance, &bids)?;
    Ok(first_prefix_violation(
        &prefix_clicks(&low, &instance.tape, bundle.agent),
        &prefix_clicks(&high, &instance.tape, bundle.agent),
    ))
}

/// One instance × allocator × deviation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpicCell {
    pub instance: usize,
    pub allocator: AllocatorKind,
    pub agent: usize,
    pub valuation: f64,
    pub multiplier: f64,
    pub deviant_bid: f64,
    pub truthful_mean: f64,
    pub deviant_mean: f64,
    /// Mean and standard error of the per-seed difference truthful − deviant.
    pub difference_mean: f64,
    pub difference_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpicReport {
    pub instances: usize,
    pub horizon: usize,
    pub resample_seeds: usize,
    pub delta: f64,
    pub cells: Vec<EpicCell>,
    /// Truthful agents' runs inspected for individual rationality.
    pub epir_agent_runs: u64,
    /// Truthful agent-runs with a negative single-round utility.
    pub epir_violations: u64,
    pub epir_min_round_utility: f64,
}

impl EpicReport {
    pub fn epic_failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.pass).count()
    }
}

/// Which halves of [`epic_epir_suite`] to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpicMode {
    /// Truthful runs and every deviation.
    Full,
    /// Truthful runs only.
    EpirOnly,
}

struct EpirTally {
    runs: u64,
    violations: u64,
    min: f64,
}

impl EpirTally {
    fn absorb(&mut self, utilities: &[f64], skip: Option<usize>) {
        for (j, &u) in utilities.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            self.runs += 1;
            self.violations += (u < 0.0) as u64;
            self.min = self.min.min(u);
        }
    }
}

fn epic_instance_cells(
    cfg: &ExperimentConfig,
    mode: EpicMode,
    k: usize,
) -> Result<(Vec<EpicCell>, EpirTally)> {
    let instance = epic_instance(cfg, k)?;
    let suites = &cfg.suites;
    let n = instance.num_agents();
    let agent = k % n;
    let valuation = instance.agents[agent].valuation;
    let mech = MechanismConfig {
        allocator: AllocatorParams {
            batch_size: suites.batch_size,
            ..cfg.allocator
        },
        ..cfg.mechanism_config()
    };
    let seeds: Vec<u64> = (0..suites.resample_seeds)
        .map(|s| derive_seed(cfg.seed, Stream::Resample, (k * suites.resample_seeds + s) as u64))
        .collect();
    let options = RunOptions::default();
    let mut tally = EpirTally {
        runs: 0,
        violations: 0,
        min: 0.0,
    };
    let mut cells = Vec::new();
    for &kind in &suites.epic_allocators {
        let mut truthful = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let r = run_mechanism(kind, &instance, &mech, seed, options)?;
            tally.absorb(&r.min_round_utility, None);
            truthful.push(r.utilities[agent]);
        }
        if mode == EpicMode::EpirOnly {
            continue;
        }
        for &m in &suites.deviations {
            let deviant_bid = (m * valuation).min(1.0);
            let mut bids = instance.bids();
            bids[agent] = deviant_bid;
            let deviant_instance = instance.with_bids(&bids)?;
            let mut deviant = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let r = run_mechanism(kind, &deviant_instance, &mech, seed, options)?;
                tally.absorb(&r.min_round_utility, Some(agent));
                deviant.push(r.utilities[agent]);
            }
            let diffs: Vec<f64> = truthful.iter().zip(&deviant).map(|(t, d)| t - d).collect();
            let (difference_mean, difference_se) = mean_se(&diffs);
            cells.push(EpicCell {
                instance: k,
                allocator: kind,
                agent,
                valuation,
                multiplier: m,
                deviant_bid,
                truthful_mean: mean_se(&truthful).0,
                deviant_mean: mean_se(&deviant).0,
                difference_mean,
                difference_se,
                pass: difference_mean >= -3.0 * difference_se,
            });
        }
    }
    Ok((cells, tally))
}

/// For every grid instance one agent (instance index mod `n`) is tested. Its
/// total utility under truthful bidding and under each deviation is averaged
/// over the same resampling seeds; a cell passes when the truthful mean is at
/// least the deviant mean minus three standard errors of the paired
/// difference. Every truthful agent's per-round utility is checked to be
/// nonnegative along the way.
pub fn epic_epir_suite(cfg: &ExperimentConfig, mode: EpicMode, out: Option<&Path>) -> Result<EpicReport> {
    cfg.validate()?;
    let pool = build_pool(cfg.workers)?;
    let results: Vec<_> = pool.install(|| {
        (0..cfg.suites.epic_instances)
            .into_par_iter()
            .map(|k| epic_instance_cells(cfg, mode, k))
            .collect()
    });
    let mut report = EpicReport {
        instances: cfg.suites.epic_instances,
        horizon: cfg.suites.epic_horizon,
        resample_seeds: cfg.suites.resample_seeds,
        delta: cfg.delta,
        cells: Vec::new(),
        epir_agent_runs: 0,
        epir_violations: 0,
        epir_min_round_utility: 0.0,
    };
    for r in results {
        let (cells, tally) = r?;
        report.cells.extend(cells);
        report.epir_agent_runs += tally.runs;
        report.epir_violations += tally.violations;
        report.epir_min_round_utility = report.epir_min_round_utility.min(tally.min);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let name = match mode {
            EpicMode::Full => "epic.json",
            EpicMode::EpirOnly => "epir.json",
        };
        fs::write(dir.join(name), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("ci").unwrap();
        cfg.workers = 1;
        cfg.suites.instances = 4;
        cfg.suites.horizon = 300;
        cfg.suites.epic_instances = 2;
        cfg.suites.epic_horizon = 200;
        cfg.suites.resample_seeds = 20;
        cfg.suites.deviations = vec![0.5, 1.5];
        cfg
    }

    #[test]
    fn prefix_violation_detection() {
        assert_eq!(first_prefix_violation(&[0, 1, 1], &[0, 1, 2]), None);
        assert_eq!(first_prefix_violation(&[0, 1, 1], &[0, 0, 2]), Some(2));
    }

    #[test]
    fn oracle_is_monotone() {
        let report = monotonicity_suite(&small(), &[AllocatorKind::Oracle], None).unwrap();
        assert_eq!(report.violation_count(), 0);
        assert!(report.comparisons["oracle"] > 0);
    }

    #[test]
    fn grid_cycles_shapes() {
        let cfg = small();
        let shapes: Vec<(usize, usize)> = (0..8)
            .map(|k| {
                let i = monotonicity_instance(&cfg, k).unwrap();
                (i.num_agents(), i.dim())
            })
            .collect();
        assert_eq!(shapes[0], (2, 2));
        assert_eq!(shapes[3], (5, 2));
        assert_eq!(shapes[4], (2, 4));
    }

    #[test]
    fn epic_small_grid_runs() {
        let report = epic_epir_suite(&small(), EpicMode::Full, None).unwrap();
        assert_eq!(report.cells.len(), 2 * 3 * 2);
        assert_eq!(report.epir_violations, 0);
        let epir = epic_epir_suite(&small(), EpicMode::EpirOnly, None).unwrap();
        assert!(epir.cells.is_empty());
        assert_eq!(epir.epir_violations, 0);
    }
}
