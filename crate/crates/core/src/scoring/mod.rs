//! Proper scores and calibration diagnostics: ensemble CRPS and skill
//! scores, verification-rank and PIT histograms, reliability index,
//! prediction-interval coverage, median MAE, and stationary-bootstrap
//! confidence intervals.

pub mod bootstrap;
pub mod calibration;
pub mod crps;
pub mod series;

pub use bootstrap::{
    bootstrap_skill_ci, mean_block_length, stationary_bootstrap_ci, BootstrapCI, BootstrapSettings,
};
pub use calibration::{
    cn0_central_interval, coverage_and_width, ensemble_interval, ensemble_median,
    mean_absolute_error, nominal_coverage_pct, pit_histogram, reliability_index,
    verification_rank, CoverageWidth, RankHistogram,
};
pub use crps::{crps_ensemble, crps_ensemble_sorted, crpss};
pub use series::{CaseKey, ScoreSeries};
