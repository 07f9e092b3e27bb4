//! Active preference-pair collection with an epistemic ensemble reward model.
//!
//! The crate runs the batched loop generate → predict → select → annotate →
//! retrain over a synthetic multi-generator environment:
//!
//! - [`oracle`] simulates candidate generation and a Likert-scoring judge;
//! - [`enn`] is the ensemble reward model producing [`RewardEstimate`]s;
//! - [`selection`] holds the nine pair-selection methods;
//! - [`pipeline`] drives the loop and collects per-iteration metrics;
//! - [`export`] and [`analysis`] handle datasets, metrics and reports.

pub mod analysis;
pub mod enn;
pub mod error;
pub mod export;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod types;

pub use error::{Error, Result};
pub use selection::Method;
pub use types::{
    Candidate, CandidateSet, PreferenceTriplet, PromptContext, RewardEstimate, lcb_pref_prob,
    pair_width, sigmoid, ucb_pref_prob,
};
