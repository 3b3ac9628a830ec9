//! Staged allocation rule with sublinear regret.
//!
//! Each agent keeps one ridge learner per stage `s = 1..=S`, fed only by the
//! rounds in its index set `Ψ_i^s`. A round walks down the stages: the
//! designated agent is explored at the first stage where it survives and its
//! width exceeds `2^{-s}`; otherwise agents whose bid-scaled UCB falls more
//! than `2^{1-s}` below the best are screened out and the walk descends, or
//! the round goes greedily to the best surviving agent. Only the
//! designated-explore branch ever grows an index set.

use serde::{Deserialize, Serialize};

use crate::allocator::{
    argmax_lowest, designated_agent, AllocationDecision, Allocator, AllocatorKind, Rule,
};
use crate::error::{invalid, Result};
use crate::instance::{check_bid, ClickSource};
use crate::linmodel::{ConfidenceScore, LearnerState};

/// `S = ⌈ln T⌉`, at least 1.
pub fn stage_count(horizon: usize) -> usize {
    ((horizon.max(1) as f64).ln().ceil() as usize).max(1)
}

/// Width threshold `2^{-s}` of stage `s`.
pub fn stage_threshold(stage: usize) -> f64 {
    0.5f64.powi(stage as i32)
}

/// Per-stage event counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub designated_explore: u64,
    pub global_exploit: u64,
    pub forced_exploit: u64,
    /// Rounds that screened at this stage and moved on to the next.
    pub screen_descend: u64,
}

/// Run-end summary of index-set sizes and branch usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stages: usize,
    pub alpha: f64,
    pub dim: usize,
    pub num_agents: usize,
    /// `|Ψ_i^s|`, indexed `[agent][stage - 1]`.
    pub index_set_sizes: Vec<Vec<usize>>,
    /// Indexed by `stage - 1`.
    pub counts: Vec<StageCounts>,
    /// Rounds whose final surviving set contained the agent with the largest
    /// true bid-scaled value; filled in by the mechanism runner.
    pub best_agent_survived: Option<u64>,
    pub rounds: u64,
}

impl StageDiagnostics {
    /// `Σ_i |Ψ_i^s|`.
    pub fn stage_total(&self, stage: usize) -> usize {
        self.index_set_sizes.iter().map(|row| row[stage - 1]).sum()
    }

    /// Stages where forced exploits exceed `(n−1)·|Ψ^s| + n`.
    pub fn forced_exploit_excess(&self) -> Vec<(usize, u64, u64)> {
        let n = self.num_agents as u64;
        (1..=self.stages)
            .filter_map(|s| {
                let forced = self.counts[s - 1].forced_exploit;
                let bound = (n - 1) * self.stage_total(s) as u64 + n;
                (forced > bound).then_some((s, forced, bound))
            })
            .collect()
    }

    /// Cells `(agent, stage)` violating `|Ψ| ≤ 5·2^s·(1+α²)·√(d·|Ψ|)`.
    pub fn index_set_growth_excess(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.index_set_sizes.iter().enumerate() {
            for (k, &size) in row.iter().enumerate() {
                let s = k + 1;
                let bound = 5.0
                    * 2f64.powi(s as i32)
                    * (1.0 + self.alpha * self.alpha)
                    * (self.dim as f64 * size as f64).sqrt();
                if size as f64 > bound {
                    out.push((i, s, size, bound));
                }
            }
        }
        out
    }
}

/// Outcome of walking the stages for one round, before any index-set update.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub decision: AllocationDecision,
    /// Surviving set at each visited stage, `screens[s - 1] = Â_s`.
    pub screens: Vec<Vec<usize>>,
    /// Width of the selected agent at the selection stage.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupLinUcbS {
    bids: Vec<f64>,
    alpha: f64,
    horizon: usize,
    stages: usize,
    dim: usize,
    // indexed agent * stages + (s - 1)
    learners: Vec<LearnerState>,
    index_sets: Vec<Vec<usize>>,
    trigger_widths: Vec<Vec<f64>>,
    counts: Vec<StageCounts>,
    last_survivors: Vec<usize>,
}

impl SupLinUcbS {
    pub fn new(bids: &[f64], dim: usize, alpha: f64, horizon: usize) -> Result<Self> {
        if bids.is_empty() {
            return Err(invalid("bids", "at least one agent is required"));
        }
        if dim == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid("alpha", "must be finite and nonnegative"));
        }
        for &b in bids {
            check_bid(b)?;
        }
        let stages = stage_count(horizon);
        let cells = bids.len() * stages;
        Ok(Self {
            bids: bids.to_vec(),
            alpha,
            horizon,
            stages,
            dim,
            learners: vec![LearnerState::new(dim); cells],
            index_sets: vec![Vec::new(); cells],
            trigger_widths: vec![Vec::new(); cells],
            counts: vec![StageCounts::default(); stages],
            last_survivors: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    fn cell(&self, agent: usize, stage: usize) -> usize {
        agent * self.stages + stage - 1
    }

    /// Rounds recorded in `Ψ_agent^stage`.
    pub fn index_set(&self, agent: usize, stage: usize) -> &[usize] {
        &self.index_sets[self.cell(agent, stage)]
    }

    /// Width of each recorded round at the moment it was selected.
    pub fn trigger_widths(&self, agent: usize, stage: usize) -> &[f64] {
        &self.trigger_widths[self.cell(agent, stage)]
    }

    pub fn learner(&self, agent: usize, stage: usize) -> &LearnerState {
        &self.learners[self.cell(agent, stage)]
    }

    /// Surviving set at the stage where the previous round was decided.
    pub fn last_survivors(&self) -> &[usize] {
        &self.last_survivors
    }

    /// Stage-`s` scores of the given agents at `x`.
    pub fn stage_scores(&self, stage: usize, x: &[f64], agents: &[usize]) -> Vec<(usize, ConfidenceScore)> {
        agents
            .iter()
            .map(|&i| (i, self.learner(i, stage).score(x, self.alpha)))
            .collect()
    }

    fn best_value(&self, scores: &[(usize, ConfidenceScore)]) -> (usize, f64) {
        let agent = argmax_lowest(scores.iter().map(|(i, sc)| (*i, self.bids[*i] * sc.ucb)))
            .expect("surviving set is never empty");
        let score = scores.iter().find(|(i, _)| *i == agent).unwrap().1;
        (agent, score.width)
    }

    /// Walks the stages for `round` without changing any state.
    pub fn select(&self, round: usize, x: &[f64]) -> Selection {
        let n = self.bids.len();
        let j = designated_agent(round, n);
        let exploit_floor = 1.0 / (self.horizon as f64).sqrt();
        let mut survivors: Vec<usize> = (0..n).collect();
        let mut screens = Vec::new();

        for s in 1..=self.stages {
            screens.push(survivors.clone());
            let scores = self.stage_scores(s, x, &survivors);
            let threshold = stage_threshold(s);
            let designated = scores.iter().find(|(i, _)| *i == j);

            let decide = |agent: usize, rule: Rule, width: f64, screens: Vec<Vec<usize>>| Selection {
                decision: AllocationDecision {
                    agent,
                    rule,
                    stage: Some(s),
                    learned: rule == Rule::DesignatedExplore,
                },
                screens,
                width,
            };

            if let Some((_, sc)) = designated.filter(|(_, sc)| sc.width > threshold) {
                return decide(j, Rule::DesignatedExplore, sc.width, screens);
            }
            if scores.iter().all(|(_, sc)| sc.width <= exploit_floor) {
                let (agent, width) = self.best_value(&scores);
                return decide(agent, Rule::GlobalExploit, width, screens);
            }
            if scores.iter().all(|(_, sc)| sc.width <= threshold) {
                let best = scores
                    .iter()
                    .map(|(i, sc)| self.bids[*i] * sc.ucb)
                    .fold(f64::NEG_INFINITY, f64::max);
                let cutoff = best - 2.0 * threshold;
                survivors = scores
                    .iter()
                    .filter(|(i, sc)| self.bids[*i] * sc.ucb >= cutoff)
                    .map(|(i, _)| *i)
                    .collect();
                continue;
            }
            let (agent, width) = self.best_value(&scores);
            return decide(agent, Rule::ForcedExploit, width, screens);
        }
        // 2^{-S} ≤ 1/√T, so the global-exploit branch fires by stage S.
        unreachable!("stage walk exceeded S = {}", self.stages)
    }

    pub fn diagnostics(&self) -> StageDiagnostics {
        let n = self.bids.len();
        StageDiagnostics {
            stages: self.stages,
            alpha: self.alpha,
            dim: self.dim,
            num_agents: n,
            index_set_sizes: (0..n)
                .map(|i| (1..=self.stages).map(|s| self.index_set(i, s).len()).collect())
                .collect(),
            counts: self.counts.clone(),
            best_agent_survived: None,
            rounds: self
                .counts
                .iter()
                .map(|c| c.designated_explore + c.global_exploit + c.forced_exploit)
                .sum(),
        }
    }
}

impl Allocator for SupLinUcbS {
    fn kind(&self) -> AllocatorKind {
        AllocatorKind::SupLinUcbS
    }

    fn num_agents(&self) -> usize {
        self.bids.len()
    }

    fn step(&mut self, round: usize, x: &[f64], clicks: &dyn ClickSource) -> Result<AllocationDecision> {
        let selection = self.select(round, x);
        let decision = selection.decision;
        let stage = decision.stage.expect("staged decisions carry a stage");
        for s in 1..stage {
            self.counts[s - 1].screen_descend += 1;
        }
        let counts = &mut self.counts[stage - 1];
        match decision.rule {
            Rule::DesignatedExplore => {
                counts.designated_explore += 1;
                let cell = self.cell(decision.agent, stage);
                let click = clicks.click(decision.agent, round);
                self.learners[cell].update(x, click);
                self.index_sets[cell].push(round);
                self.trigger_widths[cell].push(selection.width);
            }
            Rule::GlobalExploit => counts.global_exploit += 1,
            Rule::ForcedExploit => counts.forced_exploit += 1,
            other => unreachable!("staged rule produced {other:?}"),
        }
        self.last_survivors = selection.screens.into_iter().last().unwrap_or_default();
        Ok(decision)
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    fn stage_diagnostics(&self) -> Option<StageDiagnostics> {
        Some(self.diagnostics())
    }

    fn final_survivors(&self) -> Option<&[usize]> {
        Some(&self.last_survivors)
    }
}
