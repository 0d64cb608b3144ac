//! Ability-level analysis of instruction tuning runs.
//!
//! The crate covers the whole loop from a tagged instruction corpus to a
//! data-mix plan:
//!
//! * [`corpus`] loads, validates, deduplicates and samples ability-tagged
//!   instruction data and generates the base-4 volume schedule.
//! * [`logprob`] is the only gateway to a language model: token log-probabilities
//!   and generations, served remotely or from fixture files.
//! * [`eval`] turns those into per-ability accuracies (exact match and the
//!   perplexity-vs-distractor rule), selects checkpoints and assembles the
//!   cross-ability [`eval::AccuracyMatrix`].
//! * [`scaling`] fits log-linear scaling sensitivities against model size or
//!   data volume.
//! * [`features`] computes Complexity and Transference and their linear
//!   relation to the sensitivities.
//! * [`planner`] produces Baseline / Reconstruct / Maximum mixes and
//!   data-vs-parameter advice.
//! * [`report`] compares strategy scores against a baseline.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the common `f64` instantiations.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod kv;
pub mod logprob;
pub mod planner;
pub mod report;
pub mod rng;
pub mod scaling;
pub mod table;
pub mod text;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use error::{Error, Result};

/// Floating point scalar the numeric modules are generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless for `f64`, rounding for `f32`.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any Float")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).expect("Float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type TokenLogProbRecord64 = logprob::TokenLogProbRecord<f64>;
pub type TokenLogProbRecord32 = logprob::TokenLogProbRecord<f32>;
pub type EvalScore64 = eval::EvalScore<f64>;
pub type RunPoint64 = eval::RunPoint<f64>;
pub type RunPoint32 = eval::RunPoint<f32>;
pub type AccuracyMatrix64 = eval::AccuracyMatrix<f64>;
pub type AccuracyMatrix32 = eval::AccuracyMatrix<f32>;
pub type SensitivityFit64 = scaling::SensitivityFit<f64>;
pub type SensitivityFit32 = scaling::SensitivityFit<f32>;
pub type FeatureWeights64 = features::FeatureWeights<f64>;
pub type FeatureVector64 = features::FeatureVector<f64>;
pub type LinearRelation64 = features::LinearRelation<f64>;
pub type LinearRelation32 = features::LinearRelation<f32>;
