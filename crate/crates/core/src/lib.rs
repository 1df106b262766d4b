//! Coherence boosting for autoregressive language models.
//!
//! A boosted model is a log-linear ensemble of one model evaluated on
//! several context lengths: the full context and one or more truncated
//! ("short") contexts with real, usually negative, weights. The crate covers
//! next-token generation, answer ranking, evaluation harnesses, the metrics
//! used to measure long-range coherence, a trainable toy backend with exact
//! context-truncation semantics, and coherence tuning of that backend.

pub mod analysis;
pub mod backend;
pub mod boosting;
pub mod decode;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod tasks;
pub mod tokenizer;
pub mod toy_lm;
pub mod tuning;

pub use backend::{BackendInfo, CachedModel, LanguageModel};
pub use boosting::{boosted_next_dist, score_choice, BoostSpec, Expert, MCScore};
pub use dist::{LogProbVec, ProbDist, TokenId, TokenSeq};
pub use error::{Error, Result};
pub use toy_lm::ToyLm;
