//! Covariate-informed Bayesian latent factor model for dose-response matrix
//! completion in high-throughput screening.
//!
//! The crate is organised by stage of an analysis:
//!
//! - [`model`]: domain types and the log-posterior density with its gradient.
//! - [`sampler`]: No-U-Turn Hamiltonian Monte Carlo with windowed warmup.
//! - [`fit`]: glue between the model and the sampler, posterior summaries and
//!   pair-structured cross-validation.
//! - [`simulate`]: synthetic datasets drawn from the generative model and the
//!   holdout schemes used to evaluate it.
//! - [`benchmarks`]: Hill / Exp5 / Power curve fits for comparison.
//! - [`diagnostics`]: R-hat, ESS, WAIC, PSIS-LOO, CRPS, coverage and R².
//! - [`postprocess`]: factor alignment, minimum active dose and prioritisation.
//! - [`ingest`]: CSV schemas, dose binning, PCA of descriptors and run config.

pub mod benchmarks;
pub mod diagnostics;
mod error;
pub mod fit;
pub mod ingest;
pub mod model;
pub mod postprocess;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
