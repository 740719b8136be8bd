//! Experiment configuration: the structured document driving the
//! rolling-origin verification loop, with every tunable knob exposed.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::emos::SemilocalConfig;
use crate::error::{Error, Result};
use crate::nnet::MlpConfig;
use crate::pipeline::synth::SyntheticSpec;
use crate::scoring::BootstrapSettings;

/// A forecast method under verification.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The unprocessed 8-member ensemble.
    Raw,
    /// Semi-local censored-normal EMOS (full predictive distribution).
    Emos,
    /// 8 equidistant quantiles of the EMOS predictive distribution.
    EmosQ,
    /// Distributional regression network (full predictive distribution).
    Drn,
    /// 8 equidistant quantiles of the DRN predictive distribution.
    DrnQ,
    /// Corrected-ensemble network (8 improved members).
    Corrected,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Raw,
        Method::Emos,
        Method::EmosQ,
        Method::Drn,
        Method::DrnQ,
        Method::Corrected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Emos => "emos",
            Method::EmosQ => "emos_q",
            Method::Drn => "drn",
            Method::DrnQ => "drn_q",
            Method::Corrected => "corrected",
        }
    }

    /// Whether the method's forecast is a finite member set (as opposed to a
    /// full predictive distribution).
    pub fn is_ensemble(self) -> bool {
        matches!(self, Method::Raw | Method::EmosQ | Method::DrnQ | Method::Corrected)
    }

    /// Quantile samples of a parent distribution share that distribution's
    /// central interval, so they are excluded from coverage comparisons.
    pub fn in_coverage_tables(self) -> bool {
        !matches!(self, Method::EmosQ | Method::DrnQ)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(Method::Raw),
            "emos" => Ok(Method::Emos),
            "emos_q" | "emos-q" => Ok(Method::EmosQ),
            "drn" => Ok(Method::Drn),
            "drn_q" | "drn-q" => Ok(Method::DrnQ),
            "corrected" => Ok(Method::Corrected),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected raw, emos, emos_q, drn, drn_q, corrected)"
            ))),
        }
    }
}

/// Input file locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub stations: PathBuf,
    pub forecasts: PathBuf,
    pub observations: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            stations: PathBuf::from("stations.csv"),
            forecasts: PathBuf::from("forecasts.csv"),
            observations: PathBuf::from("observations.csv"),
        }
    }
}

impl DataPaths {
    /// Re-anchors relative paths to `base` (config-file directory).
    pub fn rebase(&mut self, base: &Path) {
        for p in [&mut self.stations, &mut self.forecasts, &mut self.observations] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
    }
}

/// A network method's training schedule: rolling window plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSettings {
    /// Rolling training window, days strictly before the verification day.
    pub window_days: u32,
    pub net: MlpConfig,
}

/// An inclusive lead-hour range, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadRange(pub u32, pub u32);

impl LeadRange {
    pub fn contains(&self, lead: u32) -> bool {
        (self.0..=self.1).contains(&lead)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.0, self.1)
    }
}

impl FromStr for LeadRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("lead range '{s}' must look like a:b")))?;
        let lo: u32 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("lead range start '{a}' is not an integer")))?;
        let hi: u32 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("lead range end '{b}' is not an integer")))?;
        Ok(LeadRange(lo, hi))
    }
}

/// Everything the verification experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    /// First verification day (inclusive).
    pub verification_start: NaiveDate,
    /// Last verification day (inclusive).
    pub verification_end: NaiveDate,
    pub methods: Vec<Method>,
    pub emos: SemilocalConfig,
    pub drn: NetworkSettings,
    pub corrected: NetworkSettings,
    /// Sample size for the quantile-ensemble variants (levels k/(K+1)).
    pub quantile_members: usize,
    /// Lead-hour sets for headline tables and histograms.
    pub headline_lead_sets: Vec<LeadRange>,
    /// Lead-hour ranges whose skill values are tagged as low-signal.
    pub low_signal_leads: Vec<LeadRange>,
    /// Minimum observed irradiance (W/m²) for a case to enter score tables.
    pub min_obs: f64,
    /// Root seed; all randomness flows from it through named substreams.
    pub seed: u64,
    /// Confidence-interval settings; omit to skip bootstrap CIs entirely.
    pub bootstrap: Option<BootstrapSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataPaths::default(),
            verification_start: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            verification_end: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
            methods: Method::ALL.to_vec(),
            emos: SemilocalConfig::default(),
            drn: NetworkSettings {
                window_days: 20,
                net: MlpConfig::drn(),
            },
            corrected: NetworkSettings {
                window_days: 25,
                net: MlpConfig::corrected(),
            },
            quantile_members: 8,
            headline_lead_sets: vec![LeadRange(12, 24), LeadRange(36, 48)],
            low_signal_leads: vec![LeadRange(1, 11), LeadRange(25, 35)],
            min_obs: 7.5,
            seed: 20210401,
            bootstrap: Some(BootstrapSettings::default()),
        }
    }
}

impl ExperimentConfig {
    /// Validates and canonicalizes (methods sorted, duplicates dropped).
    pub fn validate(&mut self) -> Result<()> {
        if self.verification_start > self.verification_end {
            return Err(Error::Config(format!(
                "verification start {} is after end {}",
                self.verification_start, self.verification_end
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        let set: BTreeSet<Method> = self.methods.iter().copied().collect();
        self.methods = set.into_iter().collect();
        if self.quantile_members == 0 {
            return Err(Error::Config("quantile_members must be at least 1".into()));
        }
        if !(self.min_obs >= 0.0 && self.min_obs.is_finite()) {
            return Err(Error::Config(format!(
                "min_obs {} must be finite and non-negative",
                self.min_obs
            )));
        }
        if self.headline_lead_sets.is_empty() {
            return Err(Error::Config("headline_lead_sets must not be empty".into()));
        }
        for r in self.headline_lead_sets.iter().chain(&self.low_signal_leads) {
            if r.0 == 0 || r.0 > r.1 {
                return Err(Error::Config(format!(
                    "lead range {}:{} is not an ascending range of positive hours",
                    r.0, r.1
                )));
            }
        }
        if self.emos.window_days == 0
            || self.drn.window_days == 0
            || self.corrected.window_days == 0
        {
            return Err(Error::Config("training windows must be at least 1 day".into()));
        }
        self.drn.net.validate()?;
        self.corrected.net.validate()?;
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        Ok(())
    }

    /// Longest training window among the methods actually enabled; None when
    /// only window-free methods (raw) run.
    pub fn max_window_days(&self) -> Option<u32> {
        self.methods
            .iter()
            .filter_map(|m| match m {
                Method::Raw => None,
                Method::Emos | Method::EmosQ => Some(self.emos.window_days),
                Method::Drn | Method::DrnQ => Some(self.drn.window_days),
                Method::Corrected => Some(self.corrected.window_days),
            })
            .max()
    }

    pub fn uses_drn(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, Method::Drn | Method::DrnQ))
    }

    pub fn uses_emos(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, Method::Emos | Method::EmosQ))
    }
}

/// Top-level config document: an optional synthetic-data section plus the
/// experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ConfigFile {
    pub synthetic: Option<SyntheticSpec>,
    pub experiment: ExperimentConfig,
}

/// Loads a JSON config file; relative data paths are taken relative to the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    if let Some(base) = path.parent() {
        file.experiment.data.rebase(base);
    }
    Ok(file)
}

pub fn save_config(path: &Path, config: &ConfigFile) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
