//! Adaptive allocation of a fixed Monte Carlo budget across rival samplers.
//!
//! The estimator and allocation layers are generic over [`Real`] (`f32` or
//! `f64`); the aliases below fix the common `f64` case. Samplers and the
//! experiment harness work in `f64`.

pub mod allocation;
pub mod binning;
pub mod estimators;
pub mod harness;
pub mod measure;
pub mod numerics;
pub mod samplers;
pub mod scalar;

pub use allocation::{
    choose_next, run_allocation, AllocationError, AllocationPlan, Draw, ErrorCriterion, Loss, Observation, Sampler,
};
pub use binning::{histogram_log_marginal_likelihood, optimize_bins, BinFit, BinningError, GridSpec};
pub use estimators::{phi, EstimatorError};
pub use harness::{
    emit_results, ground_truth_ekl, run_experiment, ExperimentConfig, ExperimentResult, HarnessError, Strategy,
};
pub use measure::{jsd_across, BinKey, InsertEvent, MeasureError};
pub use numerics::NumericsError;
pub use samplers::{ChangepointConfig, ChangepointModel, PoissonProcessData, SamplerError};
pub use scalar::Real;

pub type BinnedMeasure = measure::BinnedMeasure<f64>;
pub type JsdAccumulator = measure::JsdAccumulator<f64>;
pub type GrassbergerEstimate = estimators::GrassbergerEstimate<f64>;
pub type SplitJsdState = estimators::SplitJsdState<f64>;
pub type GrassbergerCriterion = allocation::GrassbergerCriterion<f64>;
pub type FoxCriterion = allocation::FoxCriterion<f64>;
pub type SissonCriterion = allocation::SissonCriterion<f64>;
pub type AllocationOutcome = allocation::AllocationOutcome<f64>;

pub type BinnedMeasure32 = measure::BinnedMeasure<f32>;
pub type GrassbergerEstimate32 = estimators::GrassbergerEstimate<f32>;
