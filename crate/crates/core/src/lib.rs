#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Risk-sensitive stochastic control toolkit: Monte Carlo simulation of the
//! controlled SDE, quadratic BSDE solvers, an explicit HJB scheme, first- and
//! second-order adjoints, and numerical semijet tests.

pub mod adjoint;
pub mod error;
pub mod expr;
pub mod hjb;
pub mod jets;
pub mod model;
pub mod montecarlo;
pub mod qbsde;

pub use error::{Error, Result};
pub use model::{ClosedFormExample, ControlSet, ProblemModel};
