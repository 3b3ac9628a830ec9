//! Elimination-based allocation rules.
//!
//! Agents take turns in round-robin order. When the designated agent is still
//! active it is allocated and learns (exploration); otherwise the round goes
//! to the active agent with the largest estimated value `b_i θ̂_i·x` and
//! nothing is learned (exploitation). An agent is evicted for good once its
//! upper bound drops below the best lower bound among active agents.
//!
//! Bounds are stored in CTR units, i.e. divided by the agent's bid. Every
//! comparison across agents multiplies them back by the bid, so the decisions
//! are those of value-unit bounds initialized to `(0, b_i)`, while an agent's
//! own bound trajectory is bitwise independent of what it bids.
//!
//! [`ELinUcbSB`] learns in batches of `bs` rounds and tightens the bounds once
//! per batch at the batch's mean context; with `bs = 1` it coincides with
//! [`ELinUcbS`].

use serde::{Deserialize, Serialize};

use crate::allocator::{
    argmax_lowest, designated_agent, AllocationDecision, Allocator, AllocatorKind, Rule,
};
use crate::error::{invalid, Error, Result};
use crate::instance::{check_bid, ClickSource};
use crate::linmodel::LearnerState;

/// Intersects `current` with `candidate`.
///
/// Returns `current` unchanged when it is already degenerate. An empty (or
/// single-point) intersection collapses both ends to the midpoint of
/// `current`.
pub fn refine_bounds(current: (f64, f64), candidate: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = current;
    if !(lo < hi) {
        return current;
    }
    let new_lo = lo.max(candidate.0);
    let new_hi = hi.min(candidate.1);
    if new_lo < new_hi {
        (new_lo, new_hi)
    } else {
        let mid = (lo + hi) / 2.0;
        (mid, mid)
    }
}

/// Active set, learners and confidence bounds of an elimination rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationState {
    bids: Vec<f64>,
    alpha: f64,
    active: Vec<bool>,
    learners: Vec<LearnerState>,
    // (lower, upper) in CTR units
    bounds: Vec<(f64, f64)>,
}

impl EliminationState {
    pub fn new(bids: &[f64], dim: usize, alpha: f64) -> Result<Self> {
        if bids.is_empty() {
            return Err(invalid("bids", "at least one agent is required"));
        }
        if dim == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid("alpha", "must be finite and nonnegative"));
        }
        for &b in bids {
            check_bid(b)?;
        }
        let n = bids.len();
        Ok(Self {
            bids: bids.to_vec(),
            alpha,
            active: vec![true; n],
            learners: vec![LearnerState::new(dim); n],
            bounds: vec![(0.0, 1.0); n],
        })
    }

    pub fn num_agents(&self) -> usize {
        self.bids.len()
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn is_active(&self, agent: usize) -> bool {
        self.active[agent]
    }

    pub fn active_set(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn learner(&self, agent: usize) -> &LearnerState {
        &self.learners[agent]
    }

    /// Bounds divided by the bid.
    pub fn normalized_bounds(&self, agent: usize) -> (f64, f64) {
        self.bounds[agent]
    }

    /// Bounds in value units, `(μ⁻, μ⁺)`.
    pub fn value_bounds(&self, agent: usize) -> (f64, f64) {
        let (lo, hi) = self.bounds[agent];
        let b = self.bids[agent];
        (b * lo, b * hi)
    }

    /// Records `(x, click)` for `agent`.
    pub fn learn(&mut self, agent: usize, x: &[f64], click: bool) {
        self.learners[agent].update(x, click);
    }

    /// Tightens `agent`'s bounds with its current confidence interval at `x`.
    pub fn tighten(&mut self, agent: usize, x: &[f64]) {
        let (lo, hi) = self.bounds[agent];
        if !(lo < hi) {
            return;
        }
        let score = self.learners[agent].score(x, self.alpha);
        self.bounds[agent] = refine_bounds((lo, hi), (score.lcb, score.ucb));
    }

    /// Allocates the designated agent `agent`, learns from its click and
    /// tightens its bounds at `x`.
    pub fn explore_round(&mut self, agent: usize, x: &[f64], click: bool) -> Result<()> {
        if !self.active[agent] {
            return Err(Error::InactiveAgent { agent });
        }
        self.learn(agent, x, click);
        self.tighten(agent, x);
        Ok(())
    }

    /// Active agent with the largest estimated value `b_i θ̂_i·x`; ties go to
    /// the lowest index.
    pub fn exploit(&self, x: &[f64]) -> usize {
        argmax_lowest(
            self.active_set()
                .into_iter()
                .map(|i| (i, self.bids[i] * self.learners[i].estimate(x))),
        )
        .expect("active set is never empty")
    }

    /// Evicts every active agent whose upper bound lies strictly below the
    /// largest lower bound among active agents. Returns the evicted agents.
    pub fn eliminate(&mut self) -> Vec<usize> {
        let active = self.active_set();
        let best_lower = active
            .iter()
            .map(|&k| self.value_bounds(k).0)
            .fold(f64::NEG_INFINITY, f64::max);
        let removed: Vec<usize> = active
            .into_iter()
            .filter(|&i| self.value_bounds(i).1 < best_lower)
            .collect();
        for &i in &removed {
            self.active[i] = false;
        }
        assert!(self.active.iter().any(|a| *a), "active set became empty");
        removed
    }
}

/// Per-round elimination rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELinUcbS {
    state: EliminationState,
}

impl ELinUcbS {
    pub fn new(bids: &[f64], dim: usize, alpha: f64) -> Result<Self> {
        Ok(Self {
            state: EliminationState::new(bids, dim, alpha)?,
        })
    }

    pub fn state(&self) -> &EliminationState {
        &self.state
    }
}

impl Allocator for ELinUcbS {
    fn kind(&self) -> AllocatorKind {
        AllocatorKind::ELinUcbS
    }

    fn num_agents(&self) -> usize {
        self.state.num_agents()
    }

    fn step(&mut self, round: usize, x: &[f64], clicks: &dyn ClickSource) -> Result<AllocationDecision> {
        let j = designated_agent(round, self.num_agents());
        let decision = if self.state.is_active(j) {
            self.state.explore_round(j, x, clicks.click(j, round))?;
            AllocationDecision {
                agent: j,
                rule: Rule::Explore,
                stage: None,
                learned: true,
            }
        } else {
            AllocationDecision {
                agent: self.state.exploit(x),
                rule: Rule::Exploit,
                stage: None,
                learned: false,
            }
        };
        self.state.eliminate();
        Ok(decision)
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum BatchMode {
    Explore { agent: usize, mean: Vec<f64> },
    Exploit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OpenBatch {
    index: usize,
    filled: usize,
    mode: BatchMode,
}

/// Batched elimination rule.
///
/// Batch `t'` spans rounds `(t'−1)·bs + 1 ..= t'·bs`. The horizon is never
/// consulted; a trailing partial batch is closed by [`Allocator::finish`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELinUcbSB {
    state: EliminationState,
    batch_size: usize,
    open: Option<OpenBatch>,
}

impl ELinUcbSB {
    pub fn new(bids: &[f64], dim: usize, alpha: f64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        Ok(Self {
            state: EliminationState::new(bids, dim, alpha)?,
            batch_size,
            open: None,
        })
    }

    pub fn state(&self) -> &EliminationState {
        &self.state
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn close_batch(&mut self) {
        if let Some(batch) = self.open.take() {
            if let BatchMode::Explore { agent, mean } = batch.mode {
                self.state.tighten(agent, &mean);
            }
            self.state.eliminate();
        }
    }
}

impl Allocator for ELinUcbSB {
    fn kind(&self) -> AllocatorKind {
        AllocatorKind::ELinUcbSB
    }

    fn num_agents(&self) -> usize {
        self.state.num_agents()
    }

    fn step(&mut self, round: usize, x: &[f64], clicks: &dyn ClickSource) -> Result<AllocationDecision> {
        let index = (round - 1) / self.batch_size + 1;
        if self.open.as_ref().is_some_and(|b| b.index != index) {
            self.close_batch();
        }
        if self.open.is_none() {
            let j = designated_agent(index, self.num_agents());
            let mode = if self.state.is_active(j) {
                BatchMode::Explore {
                    agent: j,
                    mean: vec![0.0; x.len()],
                }
            } else {
                BatchMode::Exploit
            };
            self.open = Some(OpenBatch {
                index,
                filled: 0,
                mode,
            });
        }

        let batch = self.open.as_mut().expect("batch opened above");
        batch.filled += 1;
        let k = batch.filled as f64;
        let decision = match &mut batch.mode {
            BatchMode::Explore { agent, mean } => {
                let j = *agent;
                for (m, xi) in mean.iter_mut().zip(x) {
                    *m = ((k - 1.0) * *m + xi) / k;
                }
                self.state.learn(j, x, clicks.click(j, round));
                AllocationDecision {
                    agent: j,
                    rule: Rule::Explore,
                    stage: None,
                    learned: true,
                }
            }
            BatchMode::Exploit => AllocationDecision {
                agent: self.state.exploit(x),
                rule: Rule::Exploit,
                stage: None,
                learned: false,
            },
        };
        if batch.filled == self.batch_size {
            self.close_batch();
        }
        Ok(decision)
    }

    fn finish(&mut self) {
        self.close_batch();
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Per-round elimination rule that also learns, and tightens bounds, on
/// exploitation rounds. Not monotone; exists to check that the monotonicity
/// suite can catch a violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokenProbe {
    state: EliminationState,
}

impl BrokenProbe {
    pub fn new(bids: &[f64], dim: usize, alpha: f64) -> Result<Self> {
        Ok(Self {
            state: EliminationState::new(bids, dim, alpha)?,
        })
    }
}

impl Allocator for BrokenProbe {
    fn kind(&self) -> AllocatorKind {
        AllocatorKind::BrokenProbe
    }

    fn num_agents(&self) -> usize {
        self.state.num_agents()
    }

    fn step(&mut self, round: usize, x: &[f64], clicks: &dyn ClickSource) -> Result<AllocationDecision> {
        let j = designated_agent(round, self.num_agents());
        let (agent, rule) = if self.state.is_active(j) {
            (j, Rule::Explore)
        } else {
            (self.state.exploit(x), Rule::Exploit)
        };
        self.state.learn(agent, x, clicks.click(agent, round));
        self.state.tighten(agent, x);
        self.state.eliminate();
        Ok(AllocationDecision {
            agent,
            rule,
            stage: None,
            learned: true,
        })
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
