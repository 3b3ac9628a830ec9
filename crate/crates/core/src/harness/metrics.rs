//! Regret bookkeeping.

use serde::{Deserialize, Serialize};

use crate::instance::Instance;

/// Checkpoint rounds: powers of two up to `T`, then `T` itself.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = 1usize;
    while t < horizon {
        out.push(t);
        t *= 2;
    }
    out.push(horizon);
    out
}

/// `b_{i*}·θ_{i*}·x_t − b_{I_t}·θ_{I_t}·x_t` with `i*` the best agent under
/// the instance's bids and the true CTRs.
pub fn pseudo_regret_increment(instance: &Instance, round: usize, allocated: usize) -> f64 {
    let x = instance.context(round);
    let best = instance
        .agents
        .iter()
        .map(|a| a.bid * a.ctr(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = &instance.agents[allocated];
    (best - chosen.bid * chosen.ctr(x)).max(0.0)
}

/// Sample mean and standard error of the mean (zero for a single sample).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Cumulative pseudo-regret of one mechanism across iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub mechanism: String,
    pub checkpoints: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `per_iteration[k][c]`: iteration `k` at checkpoint `c`.
    pub per_iteration: Vec<Vec<f64>>,
}

impl RegretCurve {
    /// Aggregates runs that share a checkpoint grid.
    pub fn aggregate(mechanism: &str, runs: &[Vec<(usize, f64)>]) -> Self {
        let checkpoints: Vec<usize> = runs
            .first()
            .map(|r| r.iter().map(|(t, _)| *t).collect())
            .unwrap_or_default();
        for r in runs {
            assert!(
                r.iter().map(|(t, _)| *t).eq(checkpoints.iter().copied()),
                "runs disagree on checkpoints"
            );
        }
        let per_iteration: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.iter().map(|(_, v)| *v).collect())
            .collect();
        let (mean, se) = (0..checkpoints.len())
            .map(|c| {
                let column: Vec<f64> = per_iteration.iter().map(|row| row[c]).collect();
                mean_se(&column)
            })
            .unzip();
        Self {
            mechanism: mechanism.to_string(),
            checkpoints,
            mean,
            se,
            per_iteration,
        }
    }

    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_se(&self) -> f64 {
        self.se.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_values(&self) -> Vec<f64> {
        self.per_iteration
            .iter()
            .filter_map(|row| row.last().copied())
            .collect()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.per_iteration
            .iter()
            .all(|row| row.windows(2).all(|w| w[1] >= w[0]))
            && self.mean.windows(2).all(|w| w[1] >= w[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{AgentSpec, Context, ContextCorpus, InstanceSeeds};

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoints(10), vec![1, 2, 4, 8, 10]);
    }

    #[test]
    fn regret_increment_by_hand() {
        let corpus = ContextCorpus {
            seed: 0,
            dim: 2,
            feature_values: vec![vec![1], vec![0]],
            raw: vec![vec![1, 0]],
            contexts: vec![Context::new(vec![1.0, 0.0]).unwrap()],
        };
        let agents = vec![
            AgentSpec::new(0, 1.0, 1.0, vec![0.6, 0.8]).unwrap(),
            AgentSpec::new(1, 1.0, 1.0, vec![0.4, 0.9165151389911680]).unwrap(),
        ];
        let inst = Instance::from_parts(InstanceSeeds::derive(0, 0), corpus, agents, 5).unwrap();
        assert!((pseudo_regret_increment(&inst, 1, 1) - 0.2).abs() < 1e-12);
        assert_eq!(pseudo_regret_increment(&inst, 1, 0), 0.0);
    }

    #[test]
    fn aggregate_is_the_columnwise_mean() {
        let runs = vec![
            vec![(1, 0.0), (2, 1.0), (3, 3.0)],
            vec![(1, 1.0), (2, 2.0), (3, 5.0)],
        ];
        let c = RegretCurve::aggregate("m", &runs);
        assert_eq!(c.mean, vec![0.5, 1.5, 4.0]);
        assert!((c.se[2] - 1.0).abs() < 1e-12);
        assert!(c.is_non_decreasing());
        assert_eq!(c.final_values(), vec![3.0, 5.0]);
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
    }
}
