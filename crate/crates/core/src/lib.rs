//! Self-consistent narrative prompting for abductive natural-language inference.
//!
//! An abductive NLI instance gives two observations and two candidate
//! hypotheses; the task is to pick the hypothesis that better explains the
//! gap between the observations. This crate serializes each instance into
//! narrative prompt templates (six sentence orderings, continuous prompt
//! slots, three mask positions), scores the masks with a pluggable scorer,
//! combines the per-mask label-word probabilities into a joint score, and
//! aggregates the six narrative orderings by majority vote.
//!
//! Numeric code is generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); gradient verification requires `f64`.

pub mod autodiff;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod interpret;
pub mod scalar;
pub mod scorer;
pub mod synthetic;
pub mod template;
pub mod tokenizer;
pub mod toy;
pub mod trainer;
pub mod verbalizer;

pub use corpus::{Dataset, Instance, Label, Split};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use template::{AssembledPrompt, Element, Pattern, PromptLayout};

/// Concrete aliases for the two supported precisions.
pub type MaskDistribution32 = scorer::MaskDistribution<f32>;
pub type MaskDistribution64 = scorer::MaskDistribution<f64>;
pub type OracleScorer32 = scorer::OracleScorer<f32>;
pub type OracleScorer64 = scorer::OracleScorer<f64>;
pub type ToyScorer32 = toy::ToyScorer<f32>;
pub type ToyScorer64 = toy::ToyScorer<f64>;
pub type EmbeddingTable32 = scorer::EmbeddingTable<f32>;
pub type EmbeddingTable64 = scorer::EmbeddingTable<f64>;
