//! The step interface shared by all allocation rules, plus the registry used
//! by the mechanism layer and the harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::elinucb::{BrokenProbe, ELinUcbS, ELinUcbSB};
use crate::error::{invalid, Error, Result};
use crate::instance::{check_bid, AgentSpec, ClickSource};
use crate::suplinucb::{StageDiagnostics, SupLinUcbS};

/// How an allocation was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Round-robin exploration of the designated agent (elimination rules).
    Explore,
    /// Greedy choice among active agents, no learning (elimination rules).
    Exploit,
    /// Designated agent explored at some stage; the only learning path of the
    /// staged rule.
    DesignatedExplore,
    /// All widths below `1/√T`.
    GlobalExploit,
    /// Some surviving agent still has a wide interval at the current stage.
    ForcedExploit,
    /// Full-information allocation using the true CTRs.
    Oracle,
}

impl Rule {
    pub const ALL: [Rule; 6] = [
        Rule::Explore,
        Rule::Exploit,
        Rule::DesignatedExplore,
        Rule::GlobalExploit,
        Rule::ForcedExploit,
        Rule::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Explore => "explore",
            Rule::Exploit => "exploit",
            Rule::DesignatedExplore => "designated-explore",
            Rule::GlobalExploit => "global-exploit",
            Rule::ForcedExploit => "forced-exploit",
            Rule::Oracle => "oracle",
        }
    }

    pub fn is_exploration(self) -> bool {
        matches!(self, Rule::Explore | Rule::DesignatedExplore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub agent: usize,
    pub rule: Rule,
    /// Stage at which the staged rule selected (1-based); `None` elsewhere.
    pub stage: Option<usize>,
    /// Whether any learner state changed this round.
    pub learned: bool,
}

/// An online single-slot allocation rule.
///
/// `step` is called once per round, in order, starting at round 1. An
/// allocator may read the click of the agent it allocated and nothing else.
pub trait Allocator: Send {
    fn kind(&self) -> AllocatorKind;

    fn num_agents(&self) -> usize;

    fn step(
        &mut self,
        round: usize,
        context: &[f64],
        clicks: &dyn ClickSource,
    ) -> Result<AllocationDecision>;

    /// Called once after the last round.
    fn finish(&mut self) {}

    fn snapshot(&self) -> Result<serde_json::Value>;

    fn stage_diagnostics(&self) -> Option<StageDiagnostics> {
        None
    }

    /// Surviving set at the stage that decided the last round, for staged
    /// rules.
    fn final_survivors(&self) -> Option<&[usize]> {
        None
    }
}

/// Zero-based index of the agent whose round-robin turn it is at one-based
/// round (or batch) `t`.
pub fn designated_agent(t: usize, n: usize) -> usize {
    debug_assert!(t >= 1 && n >= 1);
    (t - 1) % n
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorKind {
    Oracle,
    #[serde(rename = "elinucb-s")]
    ELinUcbS,
    #[serde(rename = "elinucb-sb")]
    ELinUcbSB,
    #[serde(rename = "suplinucb-s")]
    SupLinUcbS,
    BrokenProbe,
}

impl AllocatorKind {
    pub const STOCK: [AllocatorKind; 3] = [
        AllocatorKind::ELinUcbS,
        AllocatorKind::ELinUcbSB,
        AllocatorKind::SupLinUcbS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorKind::Oracle => "oracle",
            AllocatorKind::ELinUcbS => "elinucb-s",
            AllocatorKind::ELinUcbSB => "elinucb-sb",
            AllocatorKind::SupLinUcbS => "suplinucb-s",
            AllocatorKind::BrokenProbe => "broken-probe",
        }
    }

    /// Builds the allocator for bids `bids` (the modified bids when wrapped by
    /// a mechanism).
    pub fn build(
        self,
        params: &AllocatorParams,
        agents: &[AgentSpec],
        bids: &[f64],
        dim: usize,
        horizon: usize,
    ) -> Result<Box<dyn Allocator>> {
        Ok(match self {
            AllocatorKind::Oracle => Box::new(OracleAllocator::new(agents, bids)?),
            AllocatorKind::ELinUcbS => Box::new(ELinUcbS::new(bids, dim, params.elinucb_alpha)?),
            AllocatorKind::ELinUcbSB => Box::new(ELinUcbSB::new(
                bids,
                dim,
                params.elinucb_alpha,
                params.batch_size,
            )?),
            AllocatorKind::SupLinUcbS => {
                let alpha = params.suplinucb_alpha_for(bids.len(), horizon);
                Box::new(SupLinUcbS::new(bids, dim, alpha, horizon)?)
            }
            AllocatorKind::BrokenProbe => {
                Box::new(BrokenProbe::new(bids, dim, params.elinucb_alpha)?)
            }
        })
    }

    /// Rebuilds an allocator from [`Allocator::snapshot`] output.
    pub fn restore(self, snapshot: serde_json::Value) -> Result<Box<dyn Allocator>> {
        Ok(match self {
            AllocatorKind::Oracle => Box::new(serde_json::from_value::<OracleAllocator>(snapshot)?),
            AllocatorKind::ELinUcbS => Box::new(serde_json::from_value::<ELinUcbS>(snapshot)?),
            AllocatorKind::ELinUcbSB => Box::new(serde_json::from_value::<ELinUcbSB>(snapshot)?),
            AllocatorKind::SupLinUcbS => Box::new(serde_json::from_value::<SupLinUcbS>(snapshot)?),
            AllocatorKind::BrokenProbe => Box::new(serde_json::from_value::<BrokenProbe>(snapshot)?),
        })
    }
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle" => AllocatorKind::Oracle,
            "elinucb-s" => AllocatorKind::ELinUcbS,
            "elinucb-sb" => AllocatorKind::ELinUcbSB,
            "suplinucb-s" => AllocatorKind::SupLinUcbS,
            "broken-probe" => AllocatorKind::BrokenProbe,
            other => return Err(Error::UnknownMechanism(other.to_string())),
        })
    }
}

/// Tuning knobs of the learning allocators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorParams {
    pub elinucb_alpha: f64,
    /// Fixed α for the staged rule; `None` uses `√(½ ln(2nT/κ))`.
    pub suplinucb_alpha: Option<f64>,
    pub kappa: f64,
    pub batch_size: usize,
}

impl Default for AllocatorParams {
    fn default() -> Self {
        Self {
            elinucb_alpha: 1.0,
            suplinucb_alpha: None,
            kappa: 0.05,
            batch_size: 100,
        }
    }
}

impl AllocatorParams {
    pub fn suplinucb_alpha_for(&self, n: usize, horizon: usize) -> f64 {
        self.suplinucb_alpha
            .unwrap_or_else(|| calibrated_alpha(n, horizon, self.kappa))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.elinucb_alpha.is_finite() && self.elinucb_alpha >= 0.0) {
            return Err(invalid("elinucb_alpha", "must be finite and nonnegative"));
        }
        if let Some(a) = self.suplinucb_alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(invalid("suplinucb_alpha", "must be finite and nonnegative"));
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(invalid("kappa", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Exploration scale `√(½ ln(2nT/κ))` that makes the staged rule's confidence
/// intervals hold with probability `1 − κ`.
pub fn calibrated_alpha(n: usize, horizon: usize, kappa: f64) -> f64 {
    (0.5 * (2.0 * n as f64 * horizon as f64 / kappa).ln()).sqrt()
}

/// Allocates `argmax_i b_i θ_i·x` using the true CTR vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleAllocator {
    thetas: Vec<Vec<f64>>,
    bids: Vec<f64>,
}

impl OracleAllocator {
    pub fn new(agents: &[AgentSpec], bids: &[f64]) -> Result<Self> {
        if agents.len() != bids.len() {
            return Err(Error::DimensionMismatch {
                expected: agents.len(),
                actual: bids.len(),
            });
        }
        for &b in bids {
            check_bid(b)?;
        }
        Ok(Self {
            thetas: agents.iter().map(|a| a.theta.clone()).collect(),
            bids: bids.to_vec(),
        })
    }
}

impl Allocator for OracleAllocator {
    fn kind(&self) -> AllocatorKind {
        AllocatorKind::Oracle
    }

    fn num_agents(&self) -> usize {
        self.bids.len()
    }

    fn step(&mut self, _round: usize, x: &[f64], _clicks: &dyn ClickSource) -> Result<AllocationDecision> {
        let agent = argmax_lowest(
            self.thetas
                .iter()
                .zip(&self.bids)
                .map(|(t, b)| b * crate::instance::dot(t, x))
                .enumerate(),
        )
        .expect("at least one agent");
        Ok(AllocationDecision {
            agent,
            rule: Rule::Oracle,
            stage: None,
            learned: false,
        })
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
