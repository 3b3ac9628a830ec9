//! Simulation instances: user contexts, advertisers, and pre-drawn clicks.
//!
//! An [`Instance`] fixes everything external to the mechanism: the context
//! corpus, the agents (latent CTR vectors, valuations, bids), the sequence of
//! arriving contexts and a [`ClickTape`] holding a click outcome for *every*
//! agent in *every* round. Allocators only ever read the entry of the agent
//! they allocated, but having the full table lets two runs with different bids
//! observe identical click realizations.

use rand::distr::{Bernoulli, Distribution};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Stream};

/// Version tag written into every instance file.
pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// Default upper bound on the number of corpus contexts.
pub const DEFAULT_CORPUS_CAP: u64 = 1_000_000;

/// Largest raw feature value; raw values are drawn from `0..=MAX_RAW_VALUE`.
pub const MAX_RAW_VALUE: u32 = 100;

const NORM_TOLERANCE: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let n = norm(raw);
    raw.iter().map(|v| v / n).collect()
}

/// A unit-norm, nonnegative user feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context {
    features: Vec<f64>,
}

impl Context {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidContext("empty feature vector".into()));
        }
        if let Some(v) = features
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidContext(format!(
                "coordinate {v} outside [0, 1]"
            )));
        }
        let n = norm(&features);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidContext(format!("norm {n} is not 1")));
        }
        Ok(Self { features })
    }

    /// Normalizes a nonnegative, nonzero raw vector.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidContext("raw values must be nonnegative".into()));
        }
        if raw.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidContext("raw vector is zero".into()));
        }
        Self::new(normalize(raw))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// An advertiser. `id` is the zero-based agent index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub valuation: f64,
    pub bid: f64,
    pub theta: Vec<f64>,
}

impl AgentSpec {
    pub fn new(id: usize, valuation: f64, bid: f64, theta: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&valuation) {
            return Err(invalid("valuation", format!("{valuation} outside [0, 1]")));
        }
        check_bid(bid)?;
        if theta.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("theta", "coefficients must be nonnegative"));
        }
        Ok(Self {
            id,
            valuation,
            bid,
            theta,
        })
    }

    /// Click-through rate `θ·x` at a context.
    pub fn ctr(&self, x: &[f64]) -> f64 {
        dot(&self.theta, x)
    }
}

pub(crate) fn check_bid(bid: f64) -> Result<()> {
    if bid.is_finite() && bid > 0.0 && bid <= 1.0 {
        Ok(())
    } else {
        Err(invalid("bid", format!("{bid} outside (0, 1]")))
    }
}

/// The finite user population contexts are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextCorpus {
    pub seed: u64,
    pub dim: usize,
    /// Distinct raw values available for each feature.
    pub feature_values: Vec<Vec<u32>>,
    /// Raw (unnormalized) value combination behind each context.
    pub raw: Vec<Vec<u32>>,
    pub contexts: Vec<Context>,
}

impl ContextCorpus {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn get(&self, index: usize) -> &Context {
        &self.contexts[index]
    }
}

/// Builds every combination of per-feature raw values and normalizes each.
///
/// Each feature gets `values_per_feature` distinct values drawn uniformly from
/// `0..=100`. If every feature happens to include 0, the all-zero combination
/// would have no direction, so the 0 of the first feature is redrawn.
pub fn generate_corpus(seed: u64, d: usize, values_per_feature: usize) -> Result<ContextCorpus> {
    generate_corpus_capped(seed, d, values_per_feature, DEFAULT_CORPUS_CAP)
}

pub fn generate_corpus_capped(
    seed: u64,
    d: usize,
    values_per_feature: usize,
    cap: u64,
) -> Result<ContextCorpus> {
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    if values_per_feature == 0 || values_per_feature > MAX_RAW_VALUE as usize {
        return Err(invalid(
            "values_per_feature",
            format!("must be in 1..={MAX_RAW_VALUE}"),
        ));
    }
    let size = u32::try_from(d)
        .ok()
        .and_then(|d| (values_per_feature as u64).checked_pow(d))
        .filter(|size| *size <= cap)
        .ok_or_else(|| Error::CorpusTooLarge {
            requested: format!("{values_per_feature}^{d}"),
            cap,
        })?;

    let mut rng = rng_from_seed(seed);
    let domain = MAX_RAW_VALUE as usize + 1;
    let mut feature_values: Vec<Vec<u32>> = (0..d)
        .map(|_| {
            let mut vals: Vec<u32> = sample(&mut rng, domain, values_per_feature)
                .into_iter()
                .map(|v| v as u32)
                .collect();
            vals.sort_unstable();
            vals
        })
        .collect();

    redraw_zero_combination(&mut feature_values, &mut rng);

    let mut raw = Vec::with_capacity(size as usize);
    let mut contexts = Vec::with_capacity(size as usize);
    let mut digits = vec![0usize; d];
    for _ in 0..size {
        let combo: Vec<u32> = digits
            .iter()
            .enumerate()
            .map(|(j, &k)| feature_values[j][k])
            .collect();
        let as_f64: Vec<f64> = combo.iter().map(|v| *v as f64).collect();
        contexts.push(Context::from_raw(&as_f64)?);
        raw.push(combo);
        // odometer, last feature fastest
        for j in (0..d).rev() {
            digits[j] += 1;
            if digits[j] < values_per_feature {
                break;
            }
            digits[j] = 0;
        }
    }

    Ok(ContextCorpus {
        seed,
        dim: d,
        feature_values,
        raw,
        contexts,
    })
}

fn redraw_zero_combination<R: Rng>(feature_values: &mut [Vec<u32>], rng: &mut R) {
    if !feature_values.iter().all(|vals| vals.contains(&0)) {
        return;
    }
    let first = &mut feature_values[0];
    let unused: Vec<u32> = (1..=MAX_RAW_VALUE).filter(|v| !first.contains(v)).collect();
    let replacement = unused[rng.random_range(0..unused.len())];
    first.retain(|v| *v != 0);
    first.push(replacement);
    first.sort_unstable();
}

/// Draws `n` agents with unit-norm `θ ~ U([0,1]^d)` and `v ~ U(0,1]`; each
/// agent bids its valuation.
pub fn generate_agents(seed: u64, n: usize, d: usize) -> Result<Vec<AgentSpec>> {
    if n < 2 {
        return Err(invalid("n", "at least two agents are required"));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut agents = Vec::with_capacity(n);
    for id in 0..n {
        let theta = loop {
            let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            if norm(&raw) > 0.0 {
                break normalize(&raw);
            }
        };
        // `random` is in [0, 1); flip it so bids are strictly positive.
        let valuation = 1.0 - rng.random::<f64>();
        agents.push(AgentSpec::new(id, valuation, valuation, theta)?);
    }
    Ok(agents)
}

/// Draws `horizon` corpus indices uniformly at random.
pub fn sample_context_sequence(seed: u64, corpus: &ContextCorpus, horizon: usize) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(invalid("corpus", "must not be empty"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..horizon)
        .map(|_| rng.random_range(0..corpus.len()))
        .collect())
}

/// Source of click realizations, indexed by zero-based agent and one-based round.
pub trait ClickSource {
    fn click(&self, agent: usize, round: usize) -> bool;
}

/// Pre-drawn `n × T` table of click outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickTape {
    seed: u64,
    agents: usize,
    horizon: usize,
    // row-major: outcomes[agent * horizon + (round - 1)]
    outcomes: Vec<u8>,
}

impl ClickTape {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Raw 0/1 bytes, row-major by agent.
    pub fn as_bytes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn row(&self, agent: usize) -> &[u8] {
        &self.outcomes[agent * self.horizon..(agent + 1) * self.horizon]
    }

    fn to_rows(&self) -> Vec<String> {
        (0..self.agents)
            .map(|i| self.row(i).iter().map(|b| if *b == 1 { '1' } else { '0' }).collect())
            .collect()
    }

    fn from_rows(seed: u64, rows: &[String]) -> Result<Self> {
        let agents = rows.len();
        let horizon = rows.first().map_or(0, |r| r.len());
        let mut outcomes = Vec::with_capacity(agents * horizon);
        for row in rows {
            if row.len() != horizon {
                return Err(Error::MalformedInstance("ragged click tape".into()));
            }
            for ch in row.chars() {
                outcomes.push(match ch {
                    '0' => 0,
                    '1' => 1,
                    other => {
                        return Err(Error::MalformedInstance(format!(
                            "click tape entry `{other}` is not 0 or 1"
                        )))
                    }
                });
            }
        }
        Ok(Self {
            seed,
            agents,
            horizon,
            outcomes,
        })
    }
}

impl ClickSource for ClickTape {
    fn click(&self, agent: usize, round: usize) -> bool {
        debug_assert!(round >= 1 && round <= self.horizon);
        self.outcomes[agent * self.horizon + round - 1] == 1
    }
}

/// Draws `r_{i,t} ~ Bernoulli(θ_i·x_t)` for every agent and round.
///
/// Bids play no part, so a tape can be shared by runs that differ only in bids.
pub fn generate_click_tape(
    seed: u64,
    agents: &[AgentSpec],
    corpus: &ContextCorpus,
    sequence: &[usize],
) -> Result<ClickTape> {
    if sequence.is_empty() {
        return Err(invalid("context_sequence", "must contain at least one round"));
    }
    let horizon = sequence.len();
    let mut outcomes = vec![0u8; agents.len() * horizon];
    let mut rng = rng_from_seed(seed);
    for (t, &ci) in sequence.iter().enumerate() {
        let x = corpus.get(ci).features();
        for (i, agent) in agents.iter().enumerate() {
            let p = agent.ctr(x).clamp(0.0, 1.0);
            let coin = Bernoulli::new(p).map_err(|e| invalid("ctr", e.to_string()))?;
            outcomes[i * horizon + t] = coin.sample(&mut rng) as u8;
        }
    }
    Ok(ClickTape {
        seed,
        agents: agents.len(),
        horizon,
        outcomes,
    })
}

/// Seeds of every random stream behind an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSeeds {
    pub corpus: u64,
    pub agents: u64,
    pub contexts: u64,
    pub clicks: u64,
}

impl InstanceSeeds {
    pub fn derive(base: u64, index: u64) -> Self {
        Self {
            corpus: derive_seed(base, Stream::Corpus, index),
            agents: derive_seed(base, Stream::Agents, index),
            contexts: derive_seed(base, Stream::Contexts, index),
            clicks: derive_seed(base, Stream::Clicks, index),
        }
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub agents: usize,
    pub dim: usize,
    pub values_per_feature: usize,
    pub horizon: usize,
}

/// A fully materialized simulation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub seeds: InstanceSeeds,
    pub corpus: ContextCorpus,
    pub agents: Vec<AgentSpec>,
    pub sequence: Vec<usize>,
    pub tape: ClickTape,
}

impl Instance {
    pub fn generate(params: InstanceParams, seeds: InstanceSeeds) -> Result<Self> {
        let corpus = generate_corpus(seeds.corpus, params.dim, params.values_per_feature)?;
        let agents = generate_agents(seeds.agents, params.agents, params.dim)?;
        Self::from_parts(seeds, corpus, agents, params.horizon)
    }

    /// Draws a fresh context sequence and tape for given corpus and agents.
    pub fn from_parts(
        seeds: InstanceSeeds,
        corpus: ContextCorpus,
        agents: Vec<AgentSpec>,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if let Some(a) = agents.iter().find(|a| a.theta.len() != corpus.dim) {
            return Err(Error::DimensionMismatch {
                expected: corpus.dim,
                actual: a.theta.len(),
            });
        }
        let sequence = sample_context_sequence(seeds.contexts, &corpus, horizon)?;
        let tape = generate_click_tape(seeds.clicks, &agents, &corpus, &sequence)?;
        Ok(Self {
            seeds,
            corpus,
            agents,
            sequence,
            tape,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.corpus.dim
    }

    pub fn horizon(&self) -> usize {
        self.sequence.len()
    }

    /// Context arriving at one-based `round`.
    pub fn context(&self, round: usize) -> &[f64] {
        self.corpus.get(self.sequence[round - 1]).features()
    }

    pub fn bids(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.bid).collect()
    }

    pub fn valuations(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.valuation).collect()
    }

    /// Same instance with agent bids replaced; the tape is untouched.
    pub fn with_bids(&self, bids: &[f64]) -> Result<Self> {
        if bids.len() != self.agents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.agents.len(),
                actual: bids.len(),
            });
        }
        let mut out = self.clone();
        for (agent, &bid) in out.agents.iter_mut().zip(bids) {
            check_bid(bid)?;
            agent.bid = bid;
        }
        Ok(out)
    }

    /// Bid-weighted true value `b_i · θ_i·x` of each agent at a context.
    pub fn expected_values(&self, x: &[f64], bids: &[f64]) -> Vec<f64> {
        self.agents
            .iter()
            .zip(bids)
            .map(|(a, b)| b * a.ctr(x))
            .collect()
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            schema_version: INSTANCE_SCHEMA_VERSION,
            seeds: self.seeds,
            d: self.dim(),
            n: self.num_agents(),
            horizon: self.horizon(),
            corpus: self.corpus.clone(),
            agents: self.agents.clone(),
            context_sequence: self.sequence.clone(),
            clicks: self.tape.to_rows(),
        }
    }

    pub fn from_file(file: InstanceFile) -> Result<Self> {
        if file.schema_version != INSTANCE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: INSTANCE_SCHEMA_VERSION,
            });
        }
        let tape = ClickTape::from_rows(file.seeds.clicks, &file.clicks)?;
        if file.corpus.dim != file.d
            || file.agents.len() != file.n
            || file.context_sequence.len() != file.horizon
            || tape.agents() != file.n
            || tape.horizon() != file.horizon
        {
            return Err(Error::MalformedInstance(
                "declared d/n/horizon disagree with the stored data".into(),
            ));
        }
        if file.corpus.contexts.len() != file.corpus.raw.len() {
            return Err(Error::MalformedInstance("raw and normalized corpus differ in length".into()));
        }
        for ctx in &file.corpus.contexts {
            Context::new(ctx.features().to_vec())?;
        }
        if let Some(&bad) = file
            .context_sequence
            .iter()
            .find(|&&i| i >= file.corpus.contexts.len())
        {
            return Err(Error::MalformedInstance(format!("context index {bad} out of range")));
        }
        for a in &file.agents {
            AgentSpec::new(a.id, a.valuation, a.bid, a.theta.clone())?;
        }
        Ok(Self {
            seeds: file.seeds,
            corpus: file.corpus,
            agents: file.agents,
            sequence: file.context_sequence,
            tape,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk instance layout (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub seeds: InstanceSeeds,
    pub d: usize,
    pub n: usize,
    pub horizon: usize,
    pub corpus: ContextCorpus,
    pub agents: Vec<AgentSpec>,
    pub context_sequence: Vec<usize>,
    /// One string of `0`/`1` per agent, one character per round.
    pub clicks: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_corpus_has_256_unit_contexts() {
        let corpus = generate_corpus(42, 4, 4).unwrap();
        assert_eq!(corpus.len(), 256);
        for ctx in &corpus.contexts {
            assert!((norm(ctx.features()) - 1.0).abs() < 1e-9);
            assert!(ctx.features().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // distinct per feature
        for vals in &corpus.feature_values {
            let mut v = vals.clone();
            v.dedup();
            assert_eq!(v.len(), 4);
        }
    }

    #[test]
    fn single_value_corpus_is_scalar_one() {
        for seed in 0..50 {
            let corpus = generate_corpus(seed, 1, 1).unwrap();
            assert_eq!(corpus.len(), 1);
            assert_ne!(corpus.raw[0][0], 0);
            assert_eq!(corpus.get(0).features(), &[1.0]);
        }
    }

    #[test]
    fn two_by_two_corpus_normalizes_raw_pairs() {
        let corpus = generate_corpus(7, 2, 2).unwrap();
        assert_eq!(corpus.len(), 4);
        for (raw, ctx) in corpus.raw.iter().zip(&corpus.contexts) {
            let (a, b) = (raw[0] as f64, raw[1] as f64);
            let n = (a * a + b * b).sqrt();
            assert!((ctx.features()[0] - a / n).abs() < 1e-12);
            assert!((ctx.features()[1] - b / n).abs() < 1e-12);
            assert!((norm(ctx.features()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_combination_is_redrawn() {
        let mut rng = rng_from_seed(0);
        let mut values = vec![vec![0, 5], vec![0, 9]];
        redraw_zero_combination(&mut values, &mut rng);
        assert!(!values[0].contains(&0));
        assert_eq!(values[0].len(), 2);
        assert!(values[0].contains(&5));
        assert_eq!(values[1], vec![0, 9]);

        let mut scalar = vec![vec![0]];
        redraw_zero_combination(&mut scalar, &mut rng);
        assert!(scalar[0][0] >= 1);

        let mut untouched = vec![vec![0, 5], vec![3, 9]];
        redraw_zero_combination(&mut untouched, &mut rng);
        assert_eq!(untouched, vec![vec![0, 5], vec![3, 9]]);
    }

    #[test]
    fn corpus_cap_and_parameter_errors() {
        assert!(matches!(
            generate_corpus_capped(1, 10, 10, 1_000),
            Err(Error::CorpusTooLarge { .. })
        ));
        assert!(generate_corpus(1, 0, 4).is_err());
        assert!(generate_corpus(1, 4, 0).is_err());
        assert!(generate_corpus(1, 4, 101).is_err());
        assert!(matches!(
            generate_corpus(1, 1000, 2),
            Err(Error::CorpusTooLarge { .. })
        ));
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(generate_corpus(11, 3, 5).unwrap(), generate_corpus(11, 3, 5).unwrap());
        assert_ne!(generate_corpus(11, 3, 5).unwrap(), generate_corpus(12, 3, 5).unwrap());
    }

    #[test]
    fn agents_are_unit_norm_and_bid_truthfully() {
        let agents = generate_agents(5, 7, 4).unwrap();
        assert_eq!(agents.len(), 7);
        let corpus = generate_corpus(5, 4, 4).unwrap();
        for a in &agents {
            assert!((norm(&a.theta) - 1.0).abs() < 1e-9);
            assert_eq!(a.bid, a.valuation);
            assert!(a.bid > 0.0 && a.bid <= 1.0);
            for ctx in &corpus.contexts {
                let p = a.ctr(ctx.features());
                assert!((0.0..=1.0 + 1e-12).contains(&p));
            }
        }
        assert_eq!(generate_agents(1, 2, 2).unwrap(), generate_agents(1, 2, 2).unwrap());
        assert!(generate_agents(1, 1, 2).is_err());
    }

    fn fixed_agents(thetas: &[Vec<f64>]) -> Vec<AgentSpec> {
        thetas
            .iter()
            .enumerate()
            .map(|(i, t)| AgentSpec::new(i, 0.5, 0.5, t.clone()).unwrap())
            .collect()
    }

    fn line_corpus() -> ContextCorpus {
        ContextCorpus {
            seed: 0,
            dim: 2,
            feature_values: vec![vec![1], vec![0]],
            raw: vec![vec![1, 0]],
            contexts: vec![Context::new(vec![1.0, 0.0]).unwrap()],
        }
    }

    #[test]
    fn degenerate_ctrs_give_constant_rows() {
        let corpus = line_corpus();
        let agents = fixed_agents(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let seq = vec![0; 500];
        let tape = generate_click_tape(9, &agents, &corpus, &seq).unwrap();
        assert!(tape.row(0).iter().all(|b| *b == 0));
        assert!(tape.row(1).iter().all(|b| *b == 1));
    }

    #[test]
    fn click_rate_concentrates() {
        // θ·x = cos(60°) = 0.5 at x = e1.
        let corpus = line_corpus();
        let theta = vec![0.5, 3f64.sqrt() / 2.0];
        let agents = fixed_agents(&[theta.clone(), theta]);
        let seq = vec![0; 10_000];
        let tape = generate_click_tape(3, &agents, &corpus, &seq).unwrap();
        for i in 0..2 {
            let mean = tape.row(i).iter().map(|b| *b as f64).sum::<f64>() / 10_000.0;
            assert!((0.48..=0.52).contains(&mean), "row {i} mean {mean}");
        }
    }

    #[test]
    fn tape_ignores_bids() {
        let params = InstanceParams {
            agents: 3,
            dim: 2,
            values_per_feature: 3,
            horizon: 200,
        };
        let inst = Instance::generate(params, InstanceSeeds::derive(4, 0)).unwrap();
        let rebid = inst.with_bids(&[0.1, 0.9, 0.3]).unwrap();
        assert_eq!(inst.tape.as_bytes(), rebid.tape.as_bytes());
        let regenerated =
            generate_click_tape(inst.seeds.clicks, &rebid.agents, &rebid.corpus, &rebid.sequence).unwrap();
        assert_eq!(regenerated.as_bytes(), inst.tape.as_bytes());
    }

    #[test]
    fn context_sequence_properties() {
        let single = line_corpus();
        assert!(sample_context_sequence(1, &single, 50).unwrap().iter().all(|i| *i == 0));
        let corpus = generate_corpus(1, 4, 4).unwrap();
        assert_eq!(
            sample_context_sequence(8, &corpus, 100).unwrap(),
            sample_context_sequence(8, &corpus, 100).unwrap()
        );
    }

    #[test]
    fn context_frequencies_are_near_uniform() {
        let corpus = generate_corpus(9, 4, 4).unwrap();
        let seq = sample_context_sequence(9, &corpus, 100_000).unwrap();
        let mut counts = vec![0usize; 256];
        for i in seq {
            counts[i] += 1;
        }
        let expected = 100_000.0 / 256.0;
        for c in counts {
            assert!((c as f64 - expected).abs() <= 0.25 * expected, "count {c}");
        }
    }

    #[test]
    fn instance_file_round_trip_and_version_check() {
        let params = InstanceParams {
            agents: 2,
            dim: 3,
            values_per_feature: 2,
            horizon: 50,
        };
        let inst = Instance::generate(params, InstanceSeeds::derive(2, 1)).unwrap();
        let back = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(inst, back);

        let mut file = inst.to_file();
        file.schema_version = 99;
        assert!(matches!(
            Instance::from_file(file),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
        let mut file = inst.to_file();
        file.clicks[0].replace_range(0..1, "2");
        assert!(Instance::from_file(file).is_err());
    }

    #[test]
    fn context_validation() {
        assert!(Context::new(vec![0.6, 0.8]).is_ok());
        assert!(Context::new(vec![0.6, 0.6]).is_err());
        assert!(Context::new(vec![-0.6, 0.8]).is_err());
        assert!(Context::from_raw(&[0.0, 0.0]).is_err());
        assert_eq!(Context::from_raw(&[3.0, 4.0]).unwrap().features(), &[0.6, 0.8]);
    }
}
