//! Particle simulation of diffusively scaled kinetic equations with an
//! asymptotic-preserving time step, plus a multilevel Monte Carlo estimator
//! built on trajectories coupled across time-step sizes.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`). The aliases at the crate root fix the scalar to
//! `f64`, which is what the command-line tools and the experiment harness use.
//!
//! Module map:
//!
//! * [`kinetics`]: model parameters, time-step dependent coefficients,
//!   equilibrium velocity sampling.
//! * [`scheme`]: the particle time step and single-level path simulation.
//! * [`coupling`]: correlated fine/coarse pair simulation.
//! * [`estimators`]: quantities of interest and streaming statistics.
//! * [`mlmc`]: level hierarchies, sample allocation and the adaptive driver.
//! * [`analysis`]: closed-form variances of coupled differences, the
//!   coarse-level threshold and convergence-rate fitting.

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod estimators;
pub mod kinetics;
pub mod ks;
pub mod mlmc;
pub mod real;
pub mod rng;
pub mod scheme;

pub use error::{Error, Result};
pub use real::Real;

/// Model parameters in double precision.
pub type Model = kinetics::ModelParams<f64>;
/// Time-step dependent coefficients in double precision.
pub type Scaled = kinetics::ScaledParams<f64>;
/// Particle state in double precision.
pub type Particle = scheme::ParticleState<f64>;
/// Streaming statistics in double precision.
pub type Stats = estimators::EstimatorStats<f64>;
/// Multilevel configuration in double precision.
pub type Config = mlmc::MlmcConfig<f64>;
/// Multilevel report in double precision.
pub type Report = mlmc::MlmcReport<f64>;
/// Analysis point in double precision.
pub type Point = analysis::AnalysisPoint<f64>;

/// Single-precision aliases.
pub mod single {
    pub type Model = crate::kinetics::ModelParams<f32>;
    pub type Scaled = crate::kinetics::ScaledParams<f32>;
    pub type Particle = crate::scheme::ParticleState<f32>;
    pub type Stats = crate::estimators::EstimatorStats<f32>;
}
