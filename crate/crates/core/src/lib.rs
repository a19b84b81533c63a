//! Simulation and bound-evaluation toolkit for joint-typicality support
//! recovery in the JSM-2 distributed compressed sensing model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod combin;
pub mod decoder;
pub mod ensemble;
pub mod error;
pub mod montecarlo;
pub mod quadstats;
pub mod seed;
pub mod verify;

pub use error::{Error, Result};
