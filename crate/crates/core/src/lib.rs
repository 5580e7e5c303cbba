//! Numerics for heat equations with analytic memory kernels on `(0, 1)`:
//! exponential-polynomial kernel algebra, spectral flows, space-time
//! observation sets, observability constants and control synthesis.
#![no_std]
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod error;
pub mod expoly;
pub mod flow;
pub mod geometry;
pub mod kernel;
pub mod observability;
pub mod quad;
pub mod resolvent;
pub mod spectral;

pub use error::{Error, Result};
pub use expoly::{parse, ExpPolyFn, Phase, Term};
