//! Model primitives: the dose grid and kernel, observations, latent state
//! and the joint log density.

mod data;
mod density;
mod grid;
mod hyper;
mod state;

pub use data::{
    partition_pairs, CellKey, CovariateSet, ObservationSet, PairKey, MIN_DOSES_FOR_DOSE_HOLDOUT,
};
pub use density::{log_likelihood, log_posterior_and_gradient, log_prior, DartModel};
pub use grid::{kernel_matrix, DoseGrid, Kernel};
pub use hyper::{GammaPrior, Hyperparameters, NormalPrior, Tau0Form};
pub use state::{
    mean_effect, mean_effect_with_kernel, mgp_column_scales, noise_variance, Dims, LatentState,
    Layout, MeanEffect, Variant,
};
