//! Worst-case transmission design for multi-cell D2D-underlaid cellular
//! uplinks when channel state information is only known up to a norm ball.
//!
//! The crate is organized around the alternating design loop:
//!
//! * [`network`] draws topologies, fading channels and bounded-error
//!   channel estimates;
//! * [`worstcase`] holds the closed-form ball extremizers and the
//!   worst-case D2D coefficients;
//! * [`metrics`] evaluates SINRs, MSEs, MMSE filters, the surrogate
//!   objective and its lower bound;
//! * [`conic`] is a small dense barrier solver for the subproblem family
//!   (convex quadratic + log objective, Hermitian LMI blocks, convex
//!   scalar constraints, boxes);
//! * [`builders`] lifts the robust subproblems into [`conic`] problems
//!   via the S-procedure;
//! * [`rtd`] runs the alternating algorithm and the non-robust baseline;
//! * [`harness`] sweeps scenarios, aggregates Monte Carlo drops and
//!   writes CSV / plot data;
//! * [`cli`] is the command-line front end.

pub mod builders;
pub mod cli;
pub mod config;
pub mod conic;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod rtd;
pub mod validate;
pub mod worstcase;

pub use config::SystemConfig;
pub use rtd::{RtdOptions, RtdResult};
pub use network::ChannelSet;
