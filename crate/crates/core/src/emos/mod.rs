//! Censored-normal EMOS with a clustering-based semi-local training scheme:
//! link functions and CRPS-minimizing fits, station clustering on
//! climatology/error quantile features, per-(lead, cluster) training, and a
//! replayable coefficient store.

pub mod cluster;
pub mod model;
pub mod semilocal;

pub use cluster::{
    cluster_stations, feature_vector, standardize_features, ClusterAssignment, ClusterFeature,
    FEATURE_DIM, QUANTILES_PER_HALF,
};
pub use model::{
    fit_emos, initial_points, mean_crps, predict_emos, EmosCoefficients, MIN_TRAINING_CASES,
    SIGMA_FLOOR, SPREAD_FLOOR,
};
pub use semilocal::{
    append_model_store, cluster_for_date, model_from_store, read_assignment_store,
    read_model_store, run_semilocal_emos, train_semilocal, SemilocalConfig, SemilocalModel,
    StoredAssignment, StoredCoefficients, STORE_VERSION,
};
