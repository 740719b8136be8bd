//! Synthetic irradiance data with controllable forecast pathologies.
//!
//! Truth follows a diurnal clear-sky curve scaled by a day-to-day AR(1)
//! attenuation process per station, plus multiplicative noise. Ensemble
//! members are built from the same signal with an optional positive bias
//! and a dispersion-deflation factor: bias 0 and dispersion 1 give
//! calibrated forecasts by construction; bias > 0 / dispersion < 1
//! reproduce the over-forecasting, underdispersive raw ensemble the
//! post-processing methods are meant to repair.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ForecastRecord, Observation, Station, ENSEMBLE_SIZE};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Knobs for the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub stations: u32,
    /// Number of forecast initialization days (00 UTC each day).
    pub days: u32,
    pub start_date: NaiveDate,
    /// Clear-sky peak irradiance at solar noon, W/m².
    pub amplitude: f64,
    /// Per-station long-run attenuation means are drawn uniformly here.
    pub attenuation_mean_low: f64,
    pub attenuation_mean_high: f64,
    /// AR(1) coefficient of the day-to-day attenuation process.
    pub attenuation_phi: f64,
    /// Innovation standard deviation of the attenuation process.
    pub attenuation_sd: f64,
    /// Multiplicative noise scale: observation sd = noise_scale × signal.
    pub noise_scale: f64,
    /// Relative over-forecasting of the members: members see signal×(1+bias).
    pub bias: f64,
    /// Member spread deflation in (0, 1]; 1 keeps the truth's own noise law.
    pub dispersion: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            stations: 10,
            days: 210,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            amplitude: 1000.0,
            attenuation_mean_low: 0.55,
            attenuation_mean_high: 0.9,
            attenuation_phi: 0.6,
            attenuation_sd: 0.08,
            noise_scale: 0.18,
            bias: 0.0,
            dispersion: 1.0,
            seed: 7151,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stations == 0 || self.days == 0 {
            return Err(Error::Config(
                "synthetic data needs at least one station and one day".into(),
            ));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "clear-sky amplitude {} must be positive",
                self.amplitude
            )));
        }
        if !(self.attenuation_mean_low > 0.0
            && self.attenuation_mean_low <= self.attenuation_mean_high
            && self.attenuation_mean_high <= 1.2)
        {
            return Err(Error::Config(format!(
                "attenuation mean range [{}, {}] must be ascending within (0, 1.2]",
                self.attenuation_mean_low, self.attenuation_mean_high
            )));
        }
        if !(self.attenuation_phi.abs() < 1.0) {
            return Err(Error::Config(format!(
                "attenuation AR(1) coefficient {} must satisfy |phi| < 1",
                self.attenuation_phi
            )));
        }
        if !(self.attenuation_sd >= 0.0 && self.attenuation_sd.is_finite()) {
            return Err(Error::Config("attenuation sd must be non-negative".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        if !(self.bias >= 0.0 && self.bias.is_finite()) {
            return Err(Error::Config(format!(
                "forecast bias {} must be non-negative",
                self.bias
            )));
        }
        if !(self.dispersion > 0.0 && self.dispersion <= 1.0) {
            return Err(Error::Config(format!(
                "dispersion factor {} must lie in (0, 1]",
                self.dispersion
            )));
        }
        Ok(())
    }
}

/// Clear-sky irradiance for an hour of day (UTC): a half-sine day arc that
/// is exactly zero outside (11, 24).
pub fn clear_sky(amplitude: f64, hour: u32) -> f64 {
    let h = f64::from(hour % 24);
    if h <= 11.0 {
        return 0.0;
    }
    amplitude * (PI * (h - 11.0) / 13.0).sin().max(0.0)
}

/// Generated records, ingest-compatible.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub stations: Vec<Station>,
    pub forecasts: Vec<ForecastRecord>,
    pub observations: Vec<Observation>,
}

/// Per-station attenuation chain covering every date observations exist for
/// (init days plus two days of forecast reach).
fn attenuation_chains(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let n_days = spec.days as usize + 2;
    (0..spec.stations)
        .map(|sid| {
            let mut rng = substream(spec.seed, &format!("synth/attenuation/{sid}"));
            let mean = rng.gen_range(spec.attenuation_mean_low..=spec.attenuation_mean_high);
            let mut chain = Vec::with_capacity(n_days);
            let mut a = mean;
            for _ in 0..n_days {
                let z: f64 = StandardNormal.sample(&mut rng);
                a = (mean + spec.attenuation_phi * (a - mean) + spec.attenuation_sd * z)
                    .clamp(0.05, 1.2);
                chain.push(a);
            }
            chain
        })
        .collect()
}

/// Deterministically generates the full dataset for a spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let stations: Vec<Station> = (0..spec.stations)
        .map(|i| Station {
            id: i + 1,
            name: format!("SYN{:03}", i + 1),
            longitude: -71.2 + 0.25 * f64::from(i % 5),
            latitude: -29.5 - 0.8 * f64::from(i / 5),
            altitude: 500.0 + 150.0 * f64::from(i % 4),
            region: format!("R{}", 1 + i % 3),
        })
        .collect();

    let chains = attenuation_chains(spec);

    // hourly truth for every (station, valid time); shared by observations
    // and by every forecast verifying at that time
    let signal = |station_index: usize, day_index: usize, hour: u32| -> f64 {
        clear_sky(spec.amplitude, hour) * chains[station_index][day_index]
    };

    let mut observations = Vec::new();
    for (si, station) in stations.iter().enumerate() {
        for day in 0..spec.days as usize + 2 {
            let date = spec.start_date + Duration::days(day as i64);
            let mut rng = substream(spec.seed, &format!("synth/obs/{}/{date}", station.id));
            for hour in 0..24 {
                let s = signal(si, day, hour);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let ghi = if s > 0.0 {
                    (s * (1.0 + spec.noise_scale * eps)).max(0.0)
                } else {
                    0.0
                };
                observations.push(Observation {
                    station_id: station.id,
                    valid_time: Utc.from_utc_datetime(
                        &date.and_hms_opt(hour, 0, 0).expect("hour below 24"),
                    ),
                    ghi,
                });
            }
        }
    }

    let mut forecasts = Vec::new();
    for (si, station) in stations.iter().enumerate() {
        for day in 0..spec.days as usize {
            let init_date = spec.start_date + Duration::days(day as i64);
            let init_time =
                Utc.from_utc_datetime(&init_date.and_hms_opt(0, 0, 0).expect("midnight"));
            let mut rng =
                substream(spec.seed, &format!("synth/members/{}/{init_date}", station.id));
            for lead in 1..=48u32 {
                let hour = lead % 24;
                let s = signal(si, day + (lead / 24) as usize, hour);
                let mut members = [0.0; ENSEMBLE_SIZE];
                if s > 0.0 {
                    let centre = s * (1.0 + spec.bias);
                    let sd = spec.dispersion * spec.noise_scale * s;
                    for m in members.iter_mut() {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        *m = (centre + sd * eps).max(0.0);
                    }
                } else {
                    // keep the draw count per lead fixed so records do not
                    // depend on which leads are daytime
                    for _ in 0..ENSEMBLE_SIZE {
                        let _: f64 = StandardNormal.sample(&mut rng);
                    }
                }
                forecasts.push(ForecastRecord {
                    station_id: station.id,
                    init_time,
                    lead_h: lead,
                    members,
                });
            }
        }
    }

    Ok(SyntheticData {
        stations,
        forecasts,
        observations,
    })
}

/// File locations written by [`write_files`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub stations: PathBuf,
    pub forecasts: PathBuf,
    pub observations: PathBuf,
}

/// Writes the dataset as the three ingest-compatible CSV files.
pub fn write_files(data: &SyntheticData, dir: &Path) -> Result<SynthPaths> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    let paths = SynthPaths {
        stations: dir.join("stations.csv"),
        forecasts: dir.join("forecasts.csv"),
        observations: dir.join("observations.csv"),
    };

    let mut f = std::io::BufWriter::new(std::fs::File::create(&paths.stations)?);
    writeln!(f, "id,name,lon,lat,alt_m,region")?;
    for s in &data.stations {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            s.id, s.name, s.longitude, s.latitude, s.altitude, s.region
        )?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(&paths.observations)?);
    writeln!(f, "station_id,valid_time,ghi_wm2")?;
    for o in &data.observations {
        writeln!(
            f,
            "{},{},{}",
            o.station_id,
            o.valid_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            o.ghi
        )?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(&paths.forecasts)?);
    writeln!(f, "station_id,init_time,lead_h,m1,m2,m3,m4,m5,m6,m7,m8")?;
    for fc in &data.forecasts {
        write!(
            f,
            "{},{},{}",
            fc.station_id,
            fc.init_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            fc.lead_h
        )?;
        for m in &fc.members {
            write!(f, ",{m}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(paths)
}
