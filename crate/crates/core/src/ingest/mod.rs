//! Reading and validating screening data, covariate preparation, run
//! configuration and the on-disk formats shared with the CLI.

mod config;
mod dose;
mod io;
mod load;
mod pca;

pub use config::{BenchmarkConfig, CrossvalConfig, RunConfig};
pub use dose::{discretize_dose, DoseBins};
pub use io::{read_dictionary, read_draws, write_dictionary, write_draws, write_labeled_matrix, write_observations, DRAWS_MAGIC};
pub use load::{
    harmonize_response, load_and_validate, read_labeled_matrix, read_observations, DataConfig, DropReason,
    IngestReport, Ingested, LabeledMatrix, ObservationRecord, ResponseKind, OBSERVATION_COLUMNS,
    RESPONSE_KIND_COLUMN,
};
pub use pca::{pca_reduce, Pca};

#[cfg(test)]
mod tests;
