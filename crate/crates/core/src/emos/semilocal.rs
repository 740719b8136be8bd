//! Semi-local EMOS: cluster stations on a rolling training window, fit one
//! set of coefficients per (lead time, cluster), and predict censored-normal
//! parameters per station. Fitted coefficients append to a versioned model
//! store so historical fits can be replayed.

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::cluster::{cluster_stations, feature_vector, ClusterAssignment, ClusterFeature};
use super::model::{fit_emos, predict_emos, EmosCoefficients};
use crate::cn0::CN0Params;
use crate::data::{select_window, ForecastRecord, PairedCase, RollingWindow};
use crate::error::{Error, Result};

/// Semi-local training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemilocalConfig {
    /// Rolling training window, days strictly before the target date.
    pub window_days: u32,
    /// Requested number of clusters.
    pub k: usize,
    /// Minimum stations per cluster before k is reduced.
    pub min_per_cluster: usize,
}

impl Default for SemilocalConfig {
    fn default() -> Self {
        Self {
            window_days: 85,
            k: 6,
            min_per_cluster: 3,
        }
    }
}

/// Coefficients for every (lead, cluster) pair on one target date, plus the
/// station assignment they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemilocalModel {
    pub target_date: NaiveDate,
    pub assignment: ClusterAssignment,
    /// Keyed by (lead_h, cluster index).
    pub coefficients: BTreeMap<(u32, usize), EmosCoefficients>,
}

impl SemilocalModel {
    /// Censored-normal parameters for one station's forecast.
    pub fn predict(&self, case: &ForecastRecord) -> Result<CN0Params> {
        let cluster = *self.assignment.assignment.get(&case.station_id).ok_or_else(|| {
            Error::Data(format!(
                "station {} was not in the training window for {}",
                case.station_id, self.target_date
            ))
        })?;
        let coeffs = self.coefficients.get(&(case.lead_h, cluster)).ok_or_else(|| {
            Error::Data(format!(
                "no coefficients for lead {} h, cluster {cluster} on {}",
                case.lead_h, self.target_date
            ))
        })?;
        let stats = crate::data::ensemble_stats(&case.members);
        Ok(predict_emos(coeffs, &stats))
    }
}

/// Clusters the stations present in the window before `target_date`,
/// pooling every lead time into the station's feature sample.
pub fn cluster_for_date(
    cases: &[PairedCase],
    target_date: NaiveDate,
    config: &SemilocalConfig,
    rng: &mut impl Rng,
) -> Result<ClusterAssignment> {
    let window = RollingWindow::new(target_date, config.window_days);
    let in_window = select_window(cases, &window);
    if in_window.is_empty() {
        return Err(Error::Data(format!(
            "no training cases in the {}-day window before {target_date}",
            config.window_days
        )));
    }
    let mut by_station: BTreeMap<u32, Vec<PairedCase>> = BTreeMap::new();
    for c in in_window {
        by_station.entry(c.station_id).or_default().push(c);
    }
    let features: Vec<ClusterFeature> = by_station
        .iter()
        .map(|(&id, cases)| feature_vector(id, cases))
        .collect::<Result<_>>()?;
    cluster_stations(&features, config.k, config.min_per_cluster, rng)
}

/// Trains semi-local EMOS for every requested lead time: one clustering for
/// the date, then an independent CRPS-minimizing fit per (lead, cluster) on
/// that cluster's pooled window cases.
pub fn train_semilocal(
    cases: &[PairedCase],
    target_date: NaiveDate,
    leads: &[u32],
    config: &SemilocalConfig,
    rng: &mut impl Rng,
) -> Result<SemilocalModel> {
    let assignment = cluster_for_date(cases, target_date, config, rng)?;
    let window = RollingWindow::new(target_date, config.window_days);
    let in_window = select_window(cases, &window);
    let mut coefficients = BTreeMap::new();
    for &lead in leads {
        for (cluster, stations) in assignment.members().iter().enumerate() {
            let pooled: Vec<PairedCase> = in_window
                .iter()
                .filter(|c| c.lead_h == lead && stations.binary_search(&c.station_id).is_ok())
                .cloned()
                .collect();
            let coeffs = fit_emos(&pooled).map_err(|e| {
                Error::Numerical(format!(
                    "lead {lead} h, cluster {cluster} (stations {stations:?}): {e}"
                ))
            })?;
            coefficients.insert((lead, cluster), coeffs);
        }
    }
    Ok(SemilocalModel {
        target_date,
        assignment,
        coefficients,
    })
}

/// One-shot semi-local EMOS for a single lead time: train on the window
/// before `target_date`, then predict for every station's target-day
/// forecast at that lead.
pub fn run_semilocal_emos(
    cases: &[PairedCase],
    target_forecasts: &[ForecastRecord],
    target_date: NaiveDate,
    lead_h: u32,
    config: &SemilocalConfig,
    rng: &mut impl Rng,
) -> Result<BTreeMap<u32, CN0Params>> {
    let model = train_semilocal(cases, target_date, &[lead_h], config, rng)?;
    let mut out = BTreeMap::new();
    for f in target_forecasts {
        if f.lead_h == lead_h && f.init_time.date_naive() == target_date {
            out.insert(f.station_id, model.predict(f)?);
        }
    }
    Ok(out)
}

/// Format version written to the model store.
pub const STORE_VERSION: u32 = 1;

/// One row of the coefficient store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCoefficients {
    pub version: u32,
    pub target_date: NaiveDate,
    pub lead_h: u32,
    pub cluster: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta0: f64,
    pub delta1: f64,
}

fn open_append(path: &Path, header: &str) -> Result<std::fs::File> {
    use std::io::Write;
    let exists = path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if !exists {
        writeln!(file, "{header}")?;
    }
    Ok(file)
}

/// Appends the model's coefficients (and its station assignment alongside)
/// to the two store files, creating them with headers on first use.
pub fn append_model_store(
    coefficients_path: &Path,
    assignments_path: &Path,
    model: &SemilocalModel,
) -> Result<()> {
    use std::io::Write;
    let mut coeff = open_append(
        coefficients_path,
        "version,target_date,lead_h,cluster,gamma0,gamma1,gamma2,delta0,delta1",
    )?;
    for ((lead, cluster), c) in &model.coefficients {
        writeln!(
            coeff,
            "{STORE_VERSION},{},{lead},{cluster},{},{},{},{},{}",
            model.target_date, c.gamma0, c.gamma1, c.gamma2, c.delta0, c.delta1
        )?;
    }
    let mut assign = open_append(assignments_path, "version,target_date,station_id,cluster")?;
    for (station, cluster) in &model.assignment.assignment {
        writeln!(assign, "{STORE_VERSION},{},{station},{cluster}", model.target_date)?;
    }
    Ok(())
}

/// One row of the station-assignment store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAssignment {
    pub version: u32,
    pub target_date: NaiveDate,
    pub station_id: u32,
    pub cluster: usize,
}

/// Reads every assignment row from a store file.
pub fn read_assignment_store(assignments_path: &Path) -> Result<Vec<StoredAssignment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(assignments_path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", assignments_path.display())))?;
    let mut out = Vec::new();
    for record in rdr.deserialize::<StoredAssignment>() {
        let row = record.map_err(Error::from)?;
        if row.version != STORE_VERSION {
            return Err(Error::Data(format!(
                "model store version {} unsupported (expected {STORE_VERSION})",
                row.version
            )));
        }
        out.push(row);
    }
    Ok(out)
}

/// Rebuilds a predictable model for one target date from the two stores.
pub fn model_from_store(
    coefficients_path: &Path,
    assignments_path: &Path,
    target_date: NaiveDate,
) -> Result<SemilocalModel> {
    let coefficients: BTreeMap<(u32, usize), EmosCoefficients> =
        read_model_store(coefficients_path)?
            .into_iter()
            .filter(|r| r.target_date == target_date)
            .map(|r| {
                (
                    (r.lead_h, r.cluster),
                    EmosCoefficients {
                        gamma0: r.gamma0,
                        gamma1: r.gamma1,
                        gamma2: r.gamma2,
                        delta0: r.delta0,
                        delta1: r.delta1,
                    },
                )
            })
            .collect();
    let assignment: BTreeMap<u32, usize> = read_assignment_store(assignments_path)?
        .into_iter()
        .filter(|r| r.target_date == target_date)
        .map(|r| (r.station_id, r.cluster))
        .collect();
    if coefficients.is_empty() || assignment.is_empty() {
        return Err(Error::Data(format!(
            "model store holds nothing for target date {target_date}"
        )));
    }
    let k = assignment.values().map(|c| c + 1).max().unwrap_or(1);
    Ok(SemilocalModel {
        target_date,
        assignment: ClusterAssignment { assignment, k },
        coefficients,
    })
}

/// Reads every coefficient row from a store file.
pub fn read_model_store(coefficients_path: &Path) -> Result<Vec<StoredCoefficients>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(coefficients_path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", coefficients_path.display())))?;
    let mut out = Vec::new();
    for record in rdr.deserialize::<StoredCoefficients>() {
        let row = record.map_err(Error::from)?;
        if row.version != STORE_VERSION {
            return Err(Error::Data(format!(
                "model store version {} unsupported (expected {STORE_VERSION})",
                row.version
            )));
        }
        out.push(row);
    }
    Ok(out)
}
