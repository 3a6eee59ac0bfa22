//! Accelerated high-order (tensor) methods for smooth convex optimization.
//!
//! The crate is organized bottom-up:
//!
//! * [`oracle`]: values, gradients, Hessians and directional third derivatives,
//!   with call accounting and finite-difference third derivatives.
//! * [`model`]: regularized Taylor models, exact and inexact.
//! * [`subsolve`]: model minimization for `p = 1, 2, 3`.
//! * [`driver`]: the accelerated Monteiro–Svaiter scheme with tensor steps,
//!   restarts under growth conditions, and the plain tensor method.
//! * [`stochastic`]: mini-batch derivative sampling and batch planning.
//! * [`distsim`]: a bulk-synchronous simulator of distributed ERM.
//! * [`problems`]: analytic test objectives and reference solutions.

pub mod distsim;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod stochastic;
pub mod subsolve;

pub use error::{OptError, Result};
pub use linalg::{Matrix, Vector};
