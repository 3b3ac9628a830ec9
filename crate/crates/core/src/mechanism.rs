//! Turning monotone allocation rules into truthful mechanisms.
//!
//! Bids are perturbed once per run by self-resampling: each agent keeps its
//! bid with probability `1 − δ`, otherwise it is scaled by
//! `η = ε^{1/(1−δ)}` with `ε ~ U(0,1)`. The allocator runs on the perturbed
//! bids; an allocated agent pays its bid per click when `η = 1` and receives a
//! rebate of `b·(1/δ − 1)` per click when `η < 1`.
//!
//! The module also hosts the exploration-separated comparison baseline:
//! free round-robin learning for `λ` rounds, then greedy allocation on frozen
//! estimates with a per-click second price.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Open01};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{argmax_lowest, designated_agent, AllocatorKind, AllocatorParams, Rule};
use crate::error::{invalid, Error, Result};
use crate::harness::metrics::{checkpoints, pseudo_regret_increment};
use crate::instance::{ClickSource, Instance};
use crate::linmodel::LearnerState;
use crate::rng::rng_from_seed;
use crate::suplinucb::StageDiagnostics;

/// One agent's resampling draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleDraw {
    /// Whether the probability `1 − δ` branch (`η = 1`) was taken.
    pub kept: bool,
    /// The uniform draw `ε`; drawn on both branches so streams stay aligned.
    pub uniform: f64,
    pub eta: f64,
}

impl ResampleDraw {
    /// Rebate applies on the `η < 1` branch.
    pub fn rebate(&self) -> bool {
        !self.kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleOutcome {
    pub delta: f64,
    pub modified_bids: Vec<f64>,
    pub draws: Vec<ResampleDraw>,
}

impl ResampleOutcome {
    pub fn etas(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.eta).collect()
    }

    /// Outcome with every `η = 1`, as if each agent took the keep branch.
    pub fn identity(bids: &[f64], delta: f64) -> Self {
        Self {
            delta,
            modified_bids: bids.to_vec(),
            draws: vec![
                ResampleDraw {
                    kept: true,
                    uniform: 1.0,
                    eta: 1.0,
                };
                bids.len()
            ],
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("{delta} outside (0, 1)")))
    }
}

/// Self-resampling of a bid vector; draws are independent per agent and a
/// pure function of `seed`.
pub fn resample(bids: &[f64], delta: f64, seed: u64) -> Result<ResampleOutcome> {
    check_delta(delta)?;
    if let Some(b) = bids.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(invalid("bids", format!("{b} is not positive")));
    }
    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(bids.len());
    let mut modified = Vec::with_capacity(bids.len());
    for &b in bids {
        let kept = rng.random::<f64>() < 1.0 - delta;
        let uniform: f64 = Open01.sample(&mut rng);
        let eta = if kept {
            1.0
        } else {
            uniform.powf(1.0 / (1.0 - delta))
        };
        draws.push(ResampleDraw { kept, uniform, eta });
        modified.push(eta * b);
    }
    Ok(ResampleOutcome {
        delta,
        modified_bids: modified,
        draws,
    })
}

/// When a payment is due.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeBasis {
    /// Only clicked allocations are charged (pay-per-click).
    #[default]
    PerClick,
    /// Every allocation is charged regardless of the click.
    PerAllocation,
}

/// Payment of an allocated agent for one round. Negative values are rebates.
pub fn charge(click: bool, rebate: bool, bid: f64, delta: f64, basis: ChargeBasis) -> f64 {
    if basis == ChargeBasis::PerClick && !click {
        return 0.0;
    }
    if rebate {
        bid * (1.0 - 1.0 / delta)
    } else {
        bid
    }
}

/// What a run is asked to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MechanismKind {
    /// An allocation rule wrapped by self-resampling; the oracle runs on the
    /// reported bids directly.
    Allocator(AllocatorKind),
    ExplorationSeparated,
}

impl MechanismKind {
    pub fn name(self) -> String {
        match self {
            MechanismKind::Allocator(AllocatorKind::Oracle) => "oracle".into(),
            MechanismKind::Allocator(k) => format!("m-{k}"),
            MechanismKind::ExplorationSeparated => "baseline".into(),
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" || s == "exploration-separated" {
            return Ok(MechanismKind::ExplorationSeparated);
        }
        let bare = s.strip_prefix("m-").unwrap_or(s);
        bare.parse::<AllocatorKind>()
            .map(MechanismKind::Allocator)
            .map_err(|_| Error::UnknownMechanism(s.to_string()))
    }
}

impl From<MechanismKind> for String {
    fn from(k: MechanismKind) -> Self {
        k.name()
    }
}

impl TryFrom<String> for MechanismKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Mechanism-level settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismConfig {
    pub delta: f64,
    pub charge: ChargeBasis,
    pub allocator: AllocatorParams,
    /// Exploration length of the baseline; `None` means `n·⌈T^{2/3}⌉`.
    pub baseline_lambda: Option<usize>,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            charge: ChargeBasis::PerClick,
            allocator: AllocatorParams::default(),
            baseline_lambda: None,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        self.allocator.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep one [`RoundRecord`] per round.
    pub record_rounds: bool,
    /// Skip resampling (every `η = 1`).
    pub disable_resampling: bool,
}

/// Per-round audit record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub context_index: usize,
    pub designated: usize,
    pub agent: usize,
    pub rule: Rule,
    pub click: bool,
    pub payment: f64,
    /// Whether the allocated agent is on the rebate branch.
    pub rebate: bool,
    pub regret: f64,
    pub cumulative_regret: f64,
}

/// Result of one mechanism run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mechanism: String,
    pub horizon: usize,
    pub num_agents: usize,
    pub final_regret: f64,
    /// `(round, cumulative pseudo-regret)` at powers of two and the horizon.
    pub regret_checkpoints: Vec<(usize, f64)>,
    pub utilities: Vec<f64>,
    pub payments: Vec<f64>,
    pub clicks: Vec<u64>,
    pub allocations: Vec<u64>,
    /// Smallest single-round utility of each agent (0 if never worse).
    pub min_round_utility: Vec<f64>,
    pub center_utility: f64,
    pub social_welfare: f64,
    pub rule_counts: BTreeMap<String, u64>,
    pub resample: Option<ResampleOutcome>,
    pub stage_diagnostics: Option<StageDiagnostics>,
    #[serde(skip)]
    pub rounds: Vec<RoundRecord>,
}

struct Ledger<'a> {
    instance: &'a Instance,
    valuations: Vec<f64>,
    checkpoints: Vec<usize>,
    next_checkpoint: usize,
    report: RunReport,
    record: bool,
}

impl<'a> Ledger<'a> {
    fn new(name: String, instance: &'a Instance, record: bool) -> Self {
        let n = instance.num_agents();
        let horizon = instance.horizon();
        Self {
            instance,
            valuations: instance.valuations(),
            checkpoints: checkpoints(horizon),
            next_checkpoint: 0,
            record,
            report: RunReport {
                mechanism: name,
                horizon,
                num_agents: n,
                final_regret: 0.0,
                regret_checkpoints: Vec::new(),
                utilities: vec![0.0; n],
                payments: vec![0.0; n],
                clicks: vec![0; n],
                allocations: vec![0; n],
                min_round_utility: vec![0.0; n],
                center_utility: 0.0,
                social_welfare: 0.0,
                rule_counts: BTreeMap::new(),
                resample: None,
                stage_diagnostics: None,
                rounds: Vec::new(),
            },
        }
    }

    fn record(&mut self, round: usize, agent: usize, rule: Rule, click: bool, payment: f64, rebate: bool) {
        let regret = pseudo_regret_increment(self.instance, round, agent);
        let r = &mut self.report;
        r.final_regret += regret;
        r.allocations[agent] += 1;
        r.clicks[agent] += click as u64;
        r.payments[agent] += payment;
        let clicked_value = if click { self.valuations[agent] } else { 0.0 };
        let utility = clicked_value - payment;
        r.utilities[agent] += utility;
        if utility < r.min_round_utility[agent] {
            r.min_round_utility[agent] = utility;
        }
        r.center_utility += payment;
        r.social_welfare += clicked_value;
        *r.rule_counts.entry(rule.as_str().to_string()).or_default() += 1;
        if self.next_checkpoint < self.checkpoints.len() && self.checkpoints[self.next_checkpoint] == round {
            r.regret_checkpoints.push((round, r.final_regret));
            self.next_checkpoint += 1;
        }
        if self.record {
            r.rounds.push(RoundRecord {
                round,
                context_index: self.instance.sequence[round - 1],
                designated: designated_agent(round, r.num_agents),
                agent,
                rule,
                click,
                payment,
                rebate,
                regret,
                cumulative_regret: r.final_regret,
            });
        }
    }
}

/// Runs an allocation rule wrapped by self-resampling (or, for the oracle,
/// on the reported bids) over the whole instance.
pub fn run_mechanism(
    kind: AllocatorKind,
    instance: &Instance,
    config: &MechanismConfig,
    resample_seed: u64,
    options: RunOptions,
) -> Result<RunReport> {
    config.validate()?;
    let bids = instance.bids();
    let outcome = if options.disable_resampling || kind == AllocatorKind::Oracle {
        ResampleOutcome::identity(&bids, config.delta)
    } else {
        resample(&bids, config.delta, resample_seed)?
    };
    let mut allocator = kind.build(
        &config.allocator,
        &instance.agents,
        &outcome.modified_bids,
        instance.dim(),
        instance.horizon(),
    )?;
    let name = MechanismKind::Allocator(kind).name();
    let mut ledger = Ledger::new(name, instance, options.record_rounds);
    let mut best_survived = 0u64;
    for round in 1..=instance.horizon() {
        let x = instance.context(round);
        let decision = allocator.step(round, x, &instance.tape)?;
        if let Some(survivors) = allocator.final_survivors() {
            let values = instance.expected_values(x, &outcome.modified_bids);
            let best = argmax_lowest(values.into_iter().enumerate()).expect("nonempty");
            best_survived += survivors.contains(&best) as u64;
        }
        let i = decision.agent;
        let click = instance.tape.click(i, round);
        let rebate = outcome.draws[i].rebate();
        let payment = charge(click, rebate, bids[i], config.delta, config.charge);
        ledger.record(round, i, decision.rule, click, payment, rebate);
    }
    allocator.finish();
    let mut report = ledger.report;
    report.stage_diagnostics = allocator.stage_diagnostics().map(|mut d| {
        d.best_agent_survived = Some(best_survived);
        d
    });
    report.resample = Some(outcome);
    Ok(report)
}

/// `⌈T^{2/3}⌉` in exact integer arithmetic.
pub fn ceil_two_thirds_power(horizon: usize) -> usize {
    let target = (horizon as u128) * (horizon as u128);
    let mut m = (horizon as f64).powf(2.0 / 3.0).floor() as u128;
    while m > 0 && (m - 1).pow(3) >= target {
        m -= 1;
    }
    while m.pow(3) < target {
        m += 1;
    }
    m as usize
}

/// Default baseline exploration length `n·⌈T^{2/3}⌉`.
pub fn default_lambda(num_agents: usize, horizon: usize) -> usize {
    num_agents * ceil_two_thirds_power(horizon)
}

/// Exploration-separated baseline: round-robin learning with zero payments
/// for rounds `1..=λ`, then greedy allocation on frozen estimates with a
/// per-click second price on estimated value.
pub fn explore_separated_baseline(
    instance: &Instance,
    config: &MechanismConfig,
    lambda: Option<usize>,
    options: RunOptions,
) -> Result<RunReport> {
    let n = instance.num_agents();
    let horizon = instance.horizon();
    let lambda = lambda
        .or(config.baseline_lambda)
        .unwrap_or_else(|| default_lambda(n, horizon));
    if lambda > horizon {
        return Err(invalid(
            "baseline_lambda",
            format!("exploration length {lambda} exceeds the horizon {horizon}"),
        ));
    }
    let bids = instance.bids();
    let mut learners = vec![LearnerState::new(instance.dim()); n];
    let mut ledger = Ledger::new(MechanismKind::ExplorationSeparated.name(), instance, options.record_rounds);
    for round in 1..=horizon {
        let x = instance.context(round);
        if round <= lambda {
            let j = designated_agent(round, n);
            let click = instance.tape.click(j, round);
            learners[j].update(x, click);
            ledger.record(round, j, Rule::Explore, click, 0.0, false);
        } else {
            let values: Vec<f64> = learners
                .iter()
                .zip(&bids)
                .map(|(l, b)| b * l.estimate(x))
                .collect();
            let winner = argmax_lowest(values.iter().copied().enumerate()).expect("n ≥ 1");
            let click = instance.tape.click(winner, round);
            let runner_up = values
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != winner)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let winner_ctr = learners[winner].estimate(x);
            let price = if winner_ctr > 0.0 && runner_up > 0.0 {
                (runner_up / winner_ctr).min(bids[winner])
            } else {
                0.0
            };
            let payment = match config.charge {
                ChargeBasis::PerClick if !click => 0.0,
                _ => price,
            };
            ledger.record(round, winner, Rule::Exploit, click, payment, false);
        }
    }
    Ok(ledger.report)
}

/// Runs any mechanism kind.
pub fn run(
    kind: MechanismKind,
    instance: &Instance,
    config: &MechanismConfig,
    resample_seed: u64,
    options: RunOptions,
) -> Result<RunReport> {
    match kind {
        MechanismKind::Allocator(k) => run_mechanism(k, instance, config, resample_seed, options),
        MechanismKind::ExplorationSeparated => explore_separated_baseline(instance, config, None, options),
    }
}
