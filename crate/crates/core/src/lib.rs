//! Discrete-event simulator for HTLC payment-channel networks.
//!
//! The crate follows a three-phase workflow:
//!
//! 1. [`netgen`] draws a random channel graph and payment script from a
//!    handful of statistical parameters (or [`io`] loads hand-written CSVs).
//! 2. [`engine`] replays the payments over the graph with source routing
//!    ([`routing`]), HTLC locking, settlement, failure propagation,
//!    uncooperative peers and re-attempts.
//! 3. [`stats`] turns the per-payment records into batch-means estimates
//!    with 95% confidence intervals.
//!
//! [`cli`] wires the phases to the `htlcsim` binary.

pub mod cli;
pub mod engine;
pub mod io;
pub mod model;
pub mod netgen;
pub mod routing;
pub mod stats;

mod error;

pub use error::{Error, Result};
