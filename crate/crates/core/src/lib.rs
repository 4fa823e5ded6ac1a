//! Numerical laboratory for the one-dimensional stochastic continuity equation
//!
//! ```text
//! du + d/dx[(b(t, x) + dB/dt) u] = 0,    u(0, x) = u0(x)
//! ```
//!
//! The equation is never discretized directly. Instead the solution is
//! assembled pathwise from the inverse stochastic flow `Y` of the
//! characteristics and its spatial Jacobian `JY`:
//!
//! ```text
//! u(t, x) = u0(Y_{0,t}(x)) * JY_{0,t}(x)
//! ```
//!
//! On top of that representation the crate evaluates closed-form first and
//! second Malliavin derivatives, audits their a-priori bounds, and estimates
//! the law of `u(t, x)` by Monte Carlo to check positivity of the Malliavin
//! norm, a Gaussian-type two-sided density envelope and tail decay.
//!
//! Module map:
//! - [`scenario`]: drift / initial-condition families, hypothesis scan, bound constants
//! - [`paths`]: reproducible Brownian paths, Cameron–Martin shifts, OU mixing
//! - [`flow`]: forward and backward characteristics, Jacobian, solution representation
//! - [`malliavin`]: pathwise derivative formulas, H-norms, bound audit
//! - [`density`]: Monte Carlo sampling, KDE, density criteria and envelopes
//! - [`config`] and [`pipeline`]: run configuration, orchestration and reports

pub mod config;
pub mod density;
pub mod error;
pub mod flow;
pub mod malliavin;
pub mod paths;
pub mod pipeline;
pub mod quadrature;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
