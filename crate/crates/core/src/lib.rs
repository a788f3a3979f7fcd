//! Numerical diagnostics for the uniform validity of delta-method
//! approximations.
//!
//! The central object is the normalized Taylor remainder
//! `Delta(t, m)` of a map `phi` (see [`remainder`]). Around it sit a small
//! expression language for user maps, distribution distances, a Monte Carlo
//! engine for drifting-parameter studies, and scenario generators for
//! weak instruments, moment inequalities and minimum distance estimation.

pub mod applications;
pub mod error;
pub mod exprlang;
pub mod funcspace;
pub mod lp;
pub mod metrics;
pub mod montecarlo;
pub mod remainder;
pub mod rng;

pub use error::{Error, Result};
pub use exprlang::{compile_phi, parse};
pub use funcspace::{builtin, Domain, JacobianMode, PhiMap, StepRule};
pub use metrics::{DistanceReport, EmpiricalSample};
pub use remainder::{delta, delta_analytic, GridSpec, RemainderField};
