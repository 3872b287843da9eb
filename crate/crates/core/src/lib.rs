//! Safety filtering for control-affine systems whose outputs carry box
//! constraints and high relative degree.
//!
//! The library is organized around a small pipeline:
//!
//! * [`system`] declares a plant `x' = f(x) + g(x) u` together with analytic
//!   Lie-derivative chains for each output channel.
//! * [`ecbf`] turns a vector of negative real roots into exponential-CBF
//!   gains, evaluates the barrier cascade for the paired lower/upper
//!   constraints of each channel, and tests safe-set membership.
//! * [`filter`] computes the minimally invasive safe input in closed form
//!   when the cost metric is the Gram matrix of the decoupling rows.
//! * [`qp`] is an independent brute-force active-set solver for the same
//!   quadratic program, used to cross-check the closed form.
//! * [`compat`] certifies that the stacked constraints admit a common input.
//! * [`reldeg`] numerically audits the declared relative-degree structure.
//! * [`models`] bundles a planar drone, a planar double integrator, and the
//!   thrust/attitude adapter that lets the integrator act as a reduced-order
//!   model for the drone.
//! * [`sim`] integrates the filtered closed loop, logs traces, audits
//!   forward invariance, and checks an input-to-state stability bound on the
//!   tracking error.

pub mod compat;
pub mod ecbf;
pub mod error;
pub mod filter;
pub mod models;
pub mod qp;
pub mod reldeg;
// pub mod sim;
pub mod system;

pub use ecbf::OutputChannel;
pub use error::CbfError;
pub use filter::FilterDecision;
pub use system::{OutputChannelEvaluator, SystemModel};
