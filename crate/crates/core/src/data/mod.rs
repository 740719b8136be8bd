//! Data model and I/O: station/forecast/observation types, CSV ingestion,
//! forecast-observation pairing, and rolling training windows.

pub mod ingest;
pub mod types;

pub use ingest::{load_forecasts, load_observations, load_stations, Loaded};
pub use types::{
    ensemble_stats, haversine_m, nearest_grid_point, pair_cases, select_window, EnsembleStats,
    ForecastRecord, Observation, PairedCase, PairingOutcome, RollingWindow, Station,
    ENSEMBLE_SIZE, ZERO_DUST,
};
