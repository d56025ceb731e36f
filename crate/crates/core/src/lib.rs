//! Pricing and allocation of guaranteed ad contracts sold ahead of time
//! alongside real-time bidding.
// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod bidlog;
pub mod demand;
pub mod error;
pub mod evaluation;
pub mod pricing;
pub mod quadrature;
pub mod rlwr;

pub use error::{Error, Result};
