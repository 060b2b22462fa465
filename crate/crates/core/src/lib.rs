//! Projected stochastic approximation with self-tuned steplengths.
//!
//! The crate provides
//!
//! * a projected stochastic (sub)gradient engine for minimization and
//!   saddle-point problems ([`sa_core`]),
//! * harmonic, recursive and cascading steplength policies ([`steplength`])
//!   with their error bounds ([`bounds`]),
//! * local randomized smoothing over a uniform ball ([`smoothing`]),
//! * three benchmark problems with sample-average reference solutions
//!   ([`problems`]), and
//! * a replication harness that writes error trajectories as CSV
//!   ([`harness`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod problems;
pub mod sa_core;
pub mod scalar;
pub mod smoothing;
pub mod steplength;

pub use error::{Result, SaError};
pub use sa_core::{
    run_sa, sa_step, saddle_step, GradientSample, Identity, Point, Projection, SaRun, SaRunRecord,
    SaddlePoint, SteplengthPolicy, StochasticOracle,
};
pub use scalar::Scalar;
pub use steplength::{CsaParams, CsaPolicy, CsaState, HsaPolicy, RsaPolicy};

pub type Point64 = Point<f64>;
pub type GradientSample64 = GradientSample<f64>;
pub type SaddlePoint64 = SaddlePoint<f64>;
pub type SaRun64 = SaRun<f64>;
pub type HsaPolicy64 = HsaPolicy<f64>;
pub type RsaPolicy64 = RsaPolicy<f64>;
pub type CsaPolicy64 = CsaPolicy<f64>;
pub type CsaParams64 = CsaParams<f64>;
pub type BoundParams64 = bounds::BoundParams<f64>;
