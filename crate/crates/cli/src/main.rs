//! `conmab`: generate instances, run regret experiments and property suites.
//!
//! Every command prints one summary line to stdout:
//!
//! ```text
//! <command>: key=value key=value ...
//! ```
//!
//! Exit status is 0 on success, 1 on configuration or runtime errors, and 2
//! when a property suite finds a violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use conmab_core::harness::experiment::{iteration_instance, ExperimentReport};
use conmab_core::harness::{
    epic_epir_suite, monotonicity_suite, run_experiment_on, sweep_bs, EpicMode, ExperimentConfig,
    DEFAULT_BATCH_SIZES,
};
use conmab_core::mechanism::MechanismKind;
use conmab_core::{AllocatorKind, Instance};

#[derive(Parser, Debug)]
#[command(name = "conmab", version, about = "Truthful contextual-bandit ad auction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: paper-full, paper-desk or ci.
    #[arg(long)]
    preset: Option<String>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, env = "CONMAB_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Allocation rule or mechanism; repeatable.
    #[arg(long = "allocator")]
    allocators: Vec<String>,
    /// Resampling probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Batch size of the batched elimination rule.
    #[arg(long)]
    bs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the instance of one iteration to a JSON file.
    GenInstance {
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the regret experiment.
    Run {
        /// Pre-generated instance files used instead of fresh draws.
        #[arg(long = "instance")]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Regret of the batched mechanism across batch sizes.
    SweepBs {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Ex-post monotonicity grid.
    SuiteMonotone {
        #[command(flatten)]
        common: Common,
    },
    /// Incentive-compatibility grid (also checks individual rationality).
    SuiteEpic {
        #[command(flatten)]
        common: Common,
    },
    /// Individual-rationality grid.
    SuiteEpir {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a finished run directory or summary.json.
    Report { path: PathBuf },
}

fn config_error(e: conmab_core::Error) -> anyhow::Error {
    anyhow::Error::new(e).context("invalid configuration")
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => ExperimentConfig::load(path).map_err(config_error)?,
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(config_error)?,
        (None, None) => ExperimentConfig::preset("paper-desk").map_err(config_error)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(d) = common.delta {
        cfg.delta = d;
    }
    if let Some(bs) = common.bs {
        cfg.allocator.batch_size = bs;
        cfg.suites.batch_size = bs;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn allocator_list(common: &Common, default: &[AllocatorKind]) -> Result<Vec<AllocatorKind>> {
    if common.allocators.is_empty() {
        return Ok(default.to_vec());
    }
    common
        .allocators
        .iter()
        .map(|s| s.parse::<AllocatorKind>().map_err(config_error))
        .collect()
}

fn output_dir(common: &Common, cfg: &ExperimentConfig, leaf: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| common.out.clone()).join(leaf)
}

fn format_regrets(report: &ExperimentReport) -> String {
    report
        .summaries
        .iter()
        .map(|s| format!("{}={:.4}", s.mechanism, s.final_regret_mean))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenInstance { index, common } => {
            let cfg = load_config(&common)?;
            let instance = iteration_instance(&cfg, index)?;
            let dir = output_dir(&common, &cfg, "instances");
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("instance_{}_{index:03}.json", cfg.seed));
            instance.save(&path)?;
            println!(
                "gen-instance: path={} n={} d={} horizon={}",
                path.display(),
                instance.num_agents(),
                instance.dim(),
                instance.horizon()
            );
            Ok(0)
        }
        Command::Run { instances, common } => {
            let mut cfg = load_config(&common)?;
            if !common.allocators.is_empty() {
                cfg.mechanisms = common
                    .allocators
                    .iter()
                    .map(|s| s.parse::<MechanismKind>().map_err(config_error))
                    .collect::<Result<_>>()?;
                cfg.validate().map_err(config_error)?;
            }
            let loaded: Vec<Instance> = instances
                .iter()
                .map(|p| Instance::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<_>>()?;
            let dir = output_dir(&common, &cfg, &cfg.name);
            let given = (!loaded.is_empty()).then_some(loaded.as_slice());
            let report = run_experiment_on(&cfg, given, Some(&dir))?;
            println!(
                "run: name={} iterations={} horizon={} failures={} {}",
                cfg.name,
                report.iterations.len(),
                report.config.horizon,
                report.failures.len(),
                format_regrets(&report)
            );
            if let Some(f) = report.failures.first() {
                eprintln!("iteration {} ({}) failed: {}", f.iteration, f.mechanism, f.message);
                return Ok(1);
            }
            Ok(0)
        }
        Command::SweepBs { sizes, common } => {
            let cfg = load_config(&common)?;
            let sizes = if sizes.is_empty() {
                DEFAULT_BATCH_SIZES.to_vec()
            } else {
                sizes
            };
            let dir = output_dir(&common, &cfg, "sweep-bs");
            let points = sweep_bs(&cfg, &sizes, Some(&dir))?;
            let table: Vec<String> = points
                .iter()
                .map(|p| format!("bs{}={:.4}", p.batch_size, p.final_regret_mean))
                .collect();
            println!("sweep-bs: horizon={} iterations={} {}", cfg.horizon, cfg.iterations, table.join(" "));
            Ok(0)
        }
        Command::SuiteMonotone { common } => {
            let cfg = load_config(&common)?;
            let allocators = allocator_list(&common, &AllocatorKind::STOCK)?;
            let dir = output_dir(&common, &cfg, "suite-monotone");
            let report = monotonicity_suite(&cfg, &allocators, Some(&dir))?;
            let names: Vec<&str> = allocators.iter().map(|a| a.as_str()).collect();
            println!(
                "suite-monotone: violations={} comparisons={} instances={} allocators={}",
                report.violation_count(),
                report.comparisons.values().sum::<u64>(),
                report.instances,
                names.join(",")
            );
            Ok(if report.violation_count() > 0 { 2 } else { 0 })
        }
        Command::SuiteEpic { common } => {
            let mut cfg = load_config(&common)?;
            cfg.suites.epic_allocators = allocator_list(&common, &cfg.suites.epic_allocators)?;
            let dir = output_dir(&common, &cfg, "suite-epic");
            let report = epic_epir_suite(&cfg, EpicMode::Full, Some(&dir))?;
            println!(
                "suite-epic: violations={} cells={} epir_violations={} instances={} seeds={}",
                report.epic_failures(),
                report.cells.len(),
                report.epir_violations,
                report.instances,
                report.resample_seeds
            );
            Ok(if report.epic_failures() > 0 || report.epir_violations > 0 { 2 } else { 0 })
        }
        Command::SuiteEpir { common } => {
            let mut cfg = load_config(&common)?;
            cfg.suites.epic_allocators = allocator_list(&common, &cfg.suites.epic_allocators)?;
            let dir = output_dir(&common, &cfg, "suite-epir");
            let report = epic_epir_suite(&cfg, EpicMode::EpirOnly, Some(&dir))?;
            println!(
                "suite-epir: violations={} agent_runs={} min_round_utility={}",
                report.epir_violations, report.epir_agent_runs, report.epir_min_round_utility
            );
            Ok(if report.epir_violations > 0 { 2 } else { 0 })
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("summary.json") } else { path };
            let report = read_report(&file)?;
            for s in &report.summaries {
                eprintln!(
                    "{:<16} regret {:>12.4} ± {:<10.4} center {:>12.4} welfare {:>12.4}",
                    s.mechanism,
                    s.final_regret_mean,
                    s.final_regret_se,
                    s.center_utility_mean,
                    s.social_welfare_mean
                );
            }
            println!(
                "report: name={} iterations={} horizon={} {}",
                report.config.name,
                report.iterations.len(),
                report.config.horizon,
                format_regrets(&report)
            );
            Ok(0)
        }
    }
}

fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
