//! Certified threshold tests for Markov chain Monte Carlo estimates.
//!
//! Given samples `f(X_1), f(X_2), ...` in `[0, 1]` from a stationary
//! reversible chain with spectral gap `gamma`, the tests in [`hyptest`]
//! decide whether `E_pi f` lies above or below a threshold `r` with a
//! guaranteed error probability. [`spectral`] estimates the gap from chain
//! output, [`mh`] provides a random-walk Metropolis–Hastings sampler and
//! [`jakstat`] the JAK-STAT pathway model used as the worked example.
//! [`harness`] replicates all of it over many seeded chains and writes CSV
//! summaries.

pub mod chain;
pub mod config;
pub mod csvio;
pub mod error;
pub mod harness;
pub mod hyptest;
pub mod jakstat;
pub mod mh;
pub mod spectral;

pub use error::{Error, Result};
