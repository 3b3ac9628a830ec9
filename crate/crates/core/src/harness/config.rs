//! Experiment configuration files.
//!
//! Configs are TOML with a `schema_version` key. Every table rejects unknown
//! keys, and validation errors name the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::{AllocatorKind, AllocatorParams};
use crate::error::{Error, Result};
use crate::instance::InstanceParams;
use crate::mechanism::{ChargeBasis, MechanismConfig, MechanismKind};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Named presets.
pub const PRESETS: [&str; 3] = ["paper-full", "paper-desk", "ci"];

/// Grids of the monotonicity and EPIC/EPIR suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub instances: usize,
    /// Agent counts cycled over instances.
    pub agents: Vec<usize>,
    /// Dimensions cycled over instances.
    pub dims: Vec<usize>,
    pub values_per_feature: usize,
    pub horizon: usize,
    /// Bid levels of the agent under test in the monotonicity suite.
    pub bid_grid: Vec<f64>,
    pub allocators: Vec<AllocatorKind>,
    /// Batch size used by the batched rule inside the suites.
    pub batch_size: usize,
    pub epic_instances: usize,
    pub epic_horizon: usize,
    pub resample_seeds: usize,
    /// Deviant bids as multiples of the valuation, clamped to `(0, 1]`.
    pub deviations: Vec<f64>,
    pub epic_allocators: Vec<AllocatorKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            agents: vec![2, 3, 4, 5],
            dims: vec![2, 4],
            values_per_feature: 4,
            horizon: 2000,
            bid_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            allocators: AllocatorKind::STOCK.to_vec(),
            batch_size: 20,
            epic_instances: 100,
            epic_horizon: 500,
            resample_seeds: 200,
            deviations: vec![0.25, 0.5, 0.75, 1.5, 2.0],
            epic_allocators: AllocatorKind::STOCK.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub agents: usize,
    pub dim: usize,
    pub values_per_feature: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub seed: u64,
    pub mechanisms: Vec<MechanismKind>,
    pub delta: f64,
    pub charge: ChargeBasis,
    pub allocator: AllocatorParams,
    /// Baseline exploration length; absent means `n·⌈T^{2/3}⌉`.
    pub baseline_lambda: Option<usize>,
    /// Keep agents (θ, v) fixed across iterations; contexts and clicks are
    /// still redrawn.
    pub fixed_agents: bool,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Write one CSV per run with every round.
    pub write_rounds: bool,
    pub output: Option<PathBuf>,
    pub suites: SuiteConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("paper-desk").expect("built-in preset")
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (horizon, iterations) = match name {
            "paper-full" => (1_000_000, 40),
            "paper-desk" => (100_000, 10),
            "ci" => (10_000, 3),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: name.to_string(),
            agents: 7,
            dim: 4,
            values_per_feature: 4,
            horizon,
            iterations,
            seed: 2024,
            mechanisms: vec![
                MechanismKind::Allocator(AllocatorKind::ELinUcbSB),
                MechanismKind::Allocator(AllocatorKind::SupLinUcbS),
                MechanismKind::ExplorationSeparated,
            ],
            delta: 0.1,
            charge: ChargeBasis::PerClick,
            allocator: AllocatorParams::default(),
            baseline_lambda: None,
            fixed_agents: false,
            workers: 0,
            write_rounds: false,
            output: None,
            suites: SuiteConfig::default(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn instance_params(&self) -> InstanceParams {
        InstanceParams {
            agents: self.agents,
            dim: self.dim,
            values_per_feature: self.values_per_feature,
            horizon: self.horizon,
        }
    }

    pub fn mechanism_config(&self) -> MechanismConfig {
        MechanismConfig {
            delta: self.delta,
            charge: self.charge,
            allocator: self.allocator,
            baseline_lambda: self.baseline_lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| Err(Error::Config(format!("field `{field}`: {reason}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        if self.agents < 2 {
            return fail("agents", format!("{} < 2", self.agents));
        }
        if self.dim == 0 {
            return fail("dim", "must be at least 1".into());
        }
        if self.values_per_feature == 0 || self.values_per_feature > 100 {
            return fail("values_per_feature", "must lie in 1..=100".into());
        }
        if self.horizon == 0 {
            return fail("horizon", "must be at least 1".into());
        }
        if self.iterations == 0 {
            return fail("iterations", "must be at least 1".into());
        }
        if self.mechanisms.is_empty() {
            return fail("mechanisms", "at least one mechanism is required".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta", format!("{} outside (0, 1)", self.delta));
        }
        self.allocator.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => {
                Error::Config(format!("field `allocator.{name}`: {reason}"))
            }
            other => other,
        })?;
        if let Some(l) = self.baseline_lambda {
            if l > self.horizon && self.mechanisms.contains(&MechanismKind::ExplorationSeparated) {
                return fail("baseline_lambda", format!("{l} exceeds the horizon {}", self.horizon));
            }
        }
        let s = &self.suites;
        if s.instances == 0 || s.epic_instances == 0 {
            return fail("suites.instances", "must be at least 1".into());
        }
        if s.agents.is_empty() || s.agents.iter().any(|n| *n < 2) {
            return fail("suites.agents", "needs entries of at least 2".into());
        }
        if s.dims.is_empty() || s.dims.contains(&0) {
            return fail("suites.dims", "needs positive entries".into());
        }
        if s.horizon == 0 || s.epic_horizon == 0 {
            return fail("suites.horizon", "must be at least 1".into());
        }
        if s.bid_grid.len() < 2 || s.bid_grid.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return fail("suites.bid_grid", "needs at least two bids in (0, 1]".into());
        }
        if s.bid_grid.windows(2).any(|w| w[1] <= w[0]) {
            return fail("suites.bid_grid", "must be strictly increasing".into());
        }
        if s.batch_size == 0 {
            return fail("suites.batch_size", "must be at least 1".into());
        }
        if s.resample_seeds < 2 {
            return fail("suites.resample_seeds", "must be at least 2".into());
        }
        if s.deviations.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return fail("suites.deviations", "multipliers must be positive".into());
        }
        if s.values_per_feature == 0 || s.values_per_feature > 100 {
            return fail("suites.values_per_feature", "must lie in 1..=100".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let full = ExperimentConfig::preset("paper-full").unwrap();
        assert_eq!((full.agents, full.dim, full.horizon, full.iterations), (7, 4, 1_000_000, 40));
        assert_eq!(full.allocator.batch_size, 100);
        assert_eq!(full.allocator.elinucb_alpha, 1.0);
        assert_eq!(ExperimentConfig::preset("ci").unwrap().horizon, 10_000);
        assert!(ExperimentConfig::preset("nope").is_err());
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::preset("ci").unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "schema_version = 1\nhorizon = 500\nmechanisms = [\"oracle\"]\n[allocator]\nelinucb_alpha = 0.5\nkappa = 0.05\nbatch_size = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.horizon, 500);
        assert_eq!(cfg.agents, 7);
        assert_eq!(cfg.mechanisms, vec![MechanismKind::Allocator(AllocatorKind::Oracle)]);
        assert_eq!(cfg.allocator.batch_size, 10);
    }

    #[test]
    fn errors_name_the_field() {
        let msg = |text: &str| ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg("schema_version = 1\niterations = 0\n").contains("iterations"));
        assert!(msg("schema_version = 1\nhorizon_typo = 3\n").contains("horizon_typo"));
        assert!(msg("schema_version = 1\nmechanisms = [\"m-reg\"]\n").contains("m-reg"));
        assert!(msg("schema_version = 1\ndelta = 1.5\n").contains("delta"));
        assert!(msg("schema_version = 1\n[allocator]\nelinucb_alpha = 1.0\nkappa = 0.05\nbatch_size = 0\n")
            .contains("allocator.batch_size"));
        assert!(matches!(
            ExperimentConfig::from_toml_str("schema_version = 2\n"),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }
}
