//! Exact verification of score-based discrete diffusion on enumerable
//! sequence spaces `[S]^d`.
//!
//! The crate integrates the forward, reverse and backward Kolmogorov
//! equations with matrix-free operators, evaluates score losses and
//! probability metrics exactly, and checks convergence bounds against the
//! quantities they bound.

pub mod bounds;
pub mod coupling;
pub mod error;
pub mod evolve;
pub mod harness;
pub mod metrics;
pub mod rates;
pub mod rng;
pub mod score;
pub mod space;

pub use bounds::{BoundReport, Bracket, PipelineRun, StartKind};
pub use coupling::CouplingEstimate;
pub use error::{Error, Result};
pub use evolve::{
    approx_reverse, closed_form_kernel, duality_residual, exact_reverse, forward_marginal, solve_kbe, Distribution,
    ForwardTrajectory, IntegratorConfig, ObservableTrajectory, TimeGrid,
};
pub use harness::{ExperimentConfig, RunRecord};
pub use metrics::{IpmSpec, KernelDescriptor};
pub use rates::{RateKind, RateSpec, Schedule, ScheduleKind};
pub use score::{LossReport, Perturbation, PerturbationMode, PerturbedScore, ScoreField};
pub use space::{SequenceSpace, StateIndex};
