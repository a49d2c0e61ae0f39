//! Objective-based uncertainty quantification for uncertain Kuramoto models.
//!
//! The crate computes the mean objective cost of uncertainty (MOCU) of an
//! interval uncertainty class over pairwise couplings, where the objective is
//! the minimal strength of a control oscillator that frequency-synchronizes the
//! network. On top of that it runs sequential experimental design over pairwise
//! synchronization experiments, generates labeled datasets, and evaluates a
//! message-passing surrogate that predicts MOCU directly.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the file formats
//! and the command-line tool use.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod json;
mod kernel;
pub mod mocu;
pub mod oed;
pub mod scalar;
pub mod surrogate;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{
    pair_count, pair_from_index, pair_index, ExperimentId, ExperimentOutcome, OedTrace,
    TraceStep,
};

pub type UncertaintyClass = types::UncertaintyClass<f64>;
pub type KuramotoInstance = types::KuramotoInstance<f64>;
pub type SimConfig = dynamics::SimConfig<f64>;
pub type MocuEstimate = mocu::MocuEstimate<f64>;
pub type WeightBundle = surrogate::WeightBundle<f64>;
pub type GraphEncoding = surrogate::GraphEncoding<f64>;
pub type LabeledSample = dataset::LabeledSample<f64>;
pub type Dataset = dataset::Dataset<f64>;
pub use dataset::GenProfile;

pub type UncertaintyClassF32 = types::UncertaintyClass<f32>;
pub type KuramotoInstanceF32 = types::KuramotoInstance<f32>;
pub type SimConfigF32 = dynamics::SimConfig<f32>;
pub type WeightBundleF32 = surrogate::WeightBundle<f32>;

