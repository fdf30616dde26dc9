//! Pool-based active learning that chooses, per instance, whether to buy an
//! exact-class (full) or superclass (weak) annotation under a per-round
//! budget, plus the standard single-supervision baselines and an experiment
//! harness to compare them.

pub mod datamodel;
pub mod error;
pub mod harness;
pub mod learner;
pub mod selection;
pub mod valuation;

pub use error::{Error, Result};
