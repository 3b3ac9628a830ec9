//! Truthful contextual-bandit mechanisms for single-slot sponsored search.
//!
//! * [`instance`]: contexts, agents, and pre-drawn click tapes.
//! * [`linmodel`]: online ridge regression with confidence widths.
//! * [`elinucb`]: elimination-based monotone allocation rules.
//! * [`suplinucb`]: staged allocation rule with sublinear regret.
//! * [`mechanism`]: self-resampling, payments, and the exploration-separated
//!   baseline.
//! * [`harness`]: experiment configs, regret curves, and property suites.

pub mod allocator;
pub mod elinucb;
pub mod error;
pub mod harness;
pub mod instance;
pub mod linmodel;
pub mod mechanism;
pub mod rng;
pub mod suplinucb;

pub use allocator::{AllocationDecision, Allocator, AllocatorKind, AllocatorParams, Rule};
pub use error::{Error, Result};
pub use instance::{AgentSpec, ClickSource, ClickTape, Context, ContextCorpus, Instance};
