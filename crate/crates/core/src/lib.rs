//! Simulation workbench for uncertainty-gated, self-improving learned power
//! control in interference-limited networks.
//!
//! The pieces, bottom to top:
//!
//! - [`netsim`]: link topologies, Rayleigh-faded channel realizations, and
//!   SINR / sum-rate evaluation.
//! - [`solver`]: the WMMSE power-allocation solver (cold or warm started),
//!   trivial baselines, and a brute-force grid oracle for testing.
//! - [`neural`]: a from-scratch feed-forward regressor with per-link mean and
//!   variance heads, trained by Gaussian negative log-likelihood with Adam.
//! - [`ensemble`]: deep ensembles of independently seeded networks with the
//!   aleatoric/epistemic variance decomposition.
//! - [`qualify`]: epistemic confidence intervals on the predicted powers and
//!   the sum-rate-based credibility gate.
//! - [`pipeline`]: the self-improving loop — serve predictions when credible,
//!   fall back to the solver when not, accumulate enhanced samples, retrain.
//! - [`report`]: metrics serialization, CSV emission, and text tables.

pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod netsim;
pub mod neural;
pub mod pipeline;
pub mod qualify;
pub mod report;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};
