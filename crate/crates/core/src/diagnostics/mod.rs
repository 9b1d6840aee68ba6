//! Convergence diagnostics, information criteria, scoring rules and
//! calibration summaries.

mod convergence;
mod criteria;
mod scoring;

pub use convergence::{ess, scalar_diagnostics, split_rhat, ScalarDiagnostics};
pub use criteria::{gpd_fit, psis_loo, psis_smooth, waic, Loo, Waic};
pub use scoring::{
    central_interval, coverage_by_quintile, crps_samples, ks_test, rmse_r2, rmse_r2_split, Coverage,
};

/// Summary metrics for one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Convergence summaries keyed by coordinate name.
    pub scalars: Vec<(String, ScalarDiagnostics)>,
    pub waic: Option<Waic>,
    pub loo: Option<Loo>,
    pub mean_crps: f64,
    pub coverage: Option<Coverage>,
    pub in_sample: (f64, f64),
    pub out_of_sample: (f64, f64),
}
