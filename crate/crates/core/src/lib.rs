//! Statistical post-processing of short-term solar irradiance ensemble
//! forecasts, and verification of the resulting probabilistic predictions.
//!
//! The toolkit turns 8-member irradiance ensembles into calibrated
//! probabilistic forecasts via three routes:
//!
//! * [`emos`] — censored-normal EMOS with a clustering-based semi-local
//!   training scheme,
//! * [`nnet`] — a distributional regression network predicting censored-normal
//!   parameters, and a corrected-ensemble network emitting improved members,
//! * [`scoring`] — proper scores (CRPS, CRPSS, MAE) and calibration
//!   diagnostics (rank/PIT histograms, reliability index, coverage) with
//!   stationary-bootstrap confidence intervals.
//!
//! [`pipeline`] wires these into a rolling-origin experiment with a synthetic
//! data generator and a report writer; the `solarpp` binary exposes it all on
//! the command line.

pub mod cn0;
pub mod data;
pub mod emos;
pub mod error;
pub mod nnet;
pub mod normal;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
