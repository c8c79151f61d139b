//! Interview-constrained many-to-one matching markets.
//!
//! Synthetic doctor/hospital markets with public ratings, private values and
//! post-interview values; a cone-and-top-k interview strategy; deferred
//! acceptance with truncation; brute-force verifiers; and the statistics
//! used in the experiment campaigns.
//!
//! Everything floating-point is generic over [`Scalar`]. The aliases at the
//! bottom of this file fix the common `f64` and `f32` instantiations.

pub mod analysis;
pub mod da;
pub mod deviation;
pub mod double_cut;
pub mod market;
pub mod metrics;
pub mod scalar;
pub mod strategy;

pub use scalar::{Scalar, Utility};

pub type Instance = market::MarketInstance<f64>;
pub type Assignment = strategy::InterviewAssignment<f64>;
pub type Prefs = da::Preferences<f64>;
pub type Stats = metrics::RunStats<f64>;

pub type InstanceF32 = market::MarketInstance<f32>;
pub type AssignmentF32 = strategy::InterviewAssignment<f32>;
pub type PrefsF32 = da::Preferences<f32>;
