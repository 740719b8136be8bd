//! Core domain types and the pure operations over them: ensemble summary
//! statistics, forecast-observation pairing, rolling training windows, and
//! nearest-grid-point matching.

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Number of ensemble members.
pub const ENSEMBLE_SIZE: usize = 8;

/// Ingestion clamps members in (-1e-9, 0) to exactly zero; anything more
/// negative is a hard error. Keeps the zero-member indicator exact against
/// floating-point dust in model output.
pub const ZERO_DUST: f64 = 1e-9;

/// An irradiance observation station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: u32,
    pub name: String,
    /// Degrees east, negative west.
    pub longitude: f64,
    /// Degrees north, negative south.
    pub latitude: f64,
    /// Meters above sea level.
    pub altitude: f64,
    pub region: String,
}

impl Station {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Data(format!(
                "station {}: latitude {} outside [-90, 90]",
                self.id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Data(format!(
                "station {}: longitude {} outside [-180, 180]",
                self.id, self.longitude
            )));
        }
        if self.altitude < -500.0 {
            return Err(Error::Data(format!(
                "station {}: altitude {} below -500 m",
                self.id, self.altitude
            )));
        }
        Ok(())
    }
}

/// One 8-member irradiance forecast for (station, init time, lead time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub station_id: u32,
    /// Model initialization time, UTC (00 UTC by convention).
    pub init_time: DateTime<Utc>,
    /// Forecast horizon in hours, 1..=48.
    pub lead_h: u32,
    /// Member irradiance values in W/m², each >= 0.
    pub members: [f64; ENSEMBLE_SIZE],
}

impl ForecastRecord {
    /// Time the forecast is valid for.
    pub fn valid_time(&self) -> DateTime<Utc> {
        self.init_time + Duration::hours(i64::from(self.lead_h))
    }
}

/// A ground-truth irradiance observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station_id: u32,
    pub valid_time: DateTime<Utc>,
    /// Global horizontal irradiance, W/m², >= 0.
    pub ghi: f64,
}

/// Summary statistics of one forecast ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// Ensemble mean, W/m².
    pub mean: f64,
    /// Sample variance with divisor K-1, (W/m²)².
    pub variance: f64,
    /// Fraction of members predicting exactly zero.
    pub p0: f64,
}

/// A forecast joined with its verifying observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCase {
    pub station_id: u32,
    pub init_time: DateTime<Utc>,
    pub lead_h: u32,
    pub members: [f64; ENSEMBLE_SIZE],
    pub stats: EnsembleStats,
    /// Observed irradiance at init_time + lead_h, W/m².
    pub obs: f64,
}

impl PairedCase {
    pub fn init_date(&self) -> NaiveDate {
        self.init_time.date_naive()
    }
}

/// The `length_days` calendar days strictly preceding `target_date`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub target_date: NaiveDate,
    pub length_days: u32,
}

impl RollingWindow {
    pub fn new(target_date: NaiveDate, length_days: u32) -> Self {
        assert!(length_days >= 1, "window length must be positive");
        Self {
            target_date,
            length_days,
        }
    }

    /// First calendar day covered by the window.
    pub fn start_date(&self) -> NaiveDate {
        self.target_date - Duration::days(i64::from(self.length_days))
    }

    /// True when `date` falls inside the window (target day excluded).
    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start_date() && date < self.target_date
    }
}

/// Ensemble mean, sample variance (divisor K-1), and the zero-member
/// fraction p0 of one 8-member forecast.
pub fn ensemble_stats(members: &[f64; ENSEMBLE_SIZE]) -> EnsembleStats {
    let k = ENSEMBLE_SIZE as f64;
    let mean = members.iter().sum::<f64>() / k;
    let variance = members.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k - 1.0);
    let zeros = members.iter().filter(|m| **m == 0.0).count();
    EnsembleStats {
        mean,
        variance,
        p0: zeros as f64 / k,
    }
}

/// Index of the grid point nearest to `station` by great-circle (haversine)
/// distance; ties go to the lowest index.
pub fn nearest_grid_point(grid_lats: &[f64], grid_lons: &[f64], station: &Station) -> Result<usize> {
    if grid_lats.is_empty() || grid_lats.len() != grid_lons.len() {
        return Err(Error::Data(format!(
            "grid must be non-empty with matching coordinate lists (got {} lats, {} lons)",
            grid_lats.len(),
            grid_lons.len()
        )));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, (&lat, &lon)) in grid_lats.iter().zip(grid_lons).enumerate() {
        let d = haversine_m(station.latitude, station.longitude, lat, lon);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Great-circle distance in meters on a 6371 km sphere.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const R: f64 = 6_371_000.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * a.sqrt().min(1.0).asin()
}

/// Result of [`pair_cases`]: the joined cases plus join diagnostics.
#[derive(Debug, Clone)]
pub struct PairingOutcome {
    pub cases: Vec<PairedCase>,
    pub unmatched_forecasts: usize,
    pub unmatched_observations: usize,
}

/// Inner join of forecasts and observations on (station_id, valid_time).
///
/// Output order follows the forecast list, so re-running on the same inputs
/// is deterministic. Several forecasts (different init/lead) may match the
/// same observation.
pub fn pair_cases(forecasts: &[ForecastRecord], observations: &[Observation]) -> PairingOutcome {
    let mut obs_map: HashMap<(u32, DateTime<Utc>), f64> = HashMap::with_capacity(observations.len());
    for o in observations {
        obs_map.insert((o.station_id, o.valid_time), o.ghi);
    }
    let mut matched_keys: HashMap<(u32, DateTime<Utc>), ()> = HashMap::new();
    let mut cases = Vec::with_capacity(forecasts.len());
    let mut unmatched_forecasts = 0usize;
    for f in forecasts {
        let key = (f.station_id, f.valid_time());
        match obs_map.get(&key) {
            Some(&ghi) => {
                matched_keys.insert(key, ());
                cases.push(PairedCase {
                    station_id: f.station_id,
                    init_time: f.init_time,
                    lead_h: f.lead_h,
                    members: f.members,
                    stats: ensemble_stats(&f.members),
                    obs: ghi,
                });
            }
            None => unmatched_forecasts += 1,
        }
    }
    let unmatched_observations = observations
        .iter()
        .filter(|o| !matched_keys.contains_key(&(o.station_id, o.valid_time)))
        .count();
    PairingOutcome {
        cases,
        unmatched_forecasts,
        unmatched_observations,
    }
}

/// Cases whose init date lies inside the rolling window.
pub fn select_window(cases: &[PairedCase], window: &RollingWindow) -> Vec<PairedCase> {
    cases
        .iter()
        .filter(|c| window.contains(c.init_date()))
        .cloned()
        .collect()
}
