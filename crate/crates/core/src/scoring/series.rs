//! Per-case score series keyed by (station, init date, lead), with the
//! daily aggregation used for block-bootstrap uncertainty.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Identifies one forecast case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseKey {
    pub date: NaiveDate,
    pub station_id: u32,
    pub lead_h: u32,
}

/// Per-case scores aligned with case keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScoreSeries {
    pub keys: Vec<CaseKey>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn push(&mut self, key: CaseKey, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite score {value} for station {} lead {} on {}",
                key.station_id, key.lead_h, key.date
            )));
        }
        self.keys.push(key);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Data("mean of an empty score series".into()));
        }
        Ok(self.values.iter().sum::<f64>() / self.len() as f64)
    }

    /// Mean score per calendar day, in date order. This is the time series
    /// the stationary bootstrap resamples: one value per verification day.
    pub fn daily_means(&self) -> Vec<(NaiveDate, f64)> {
        let mut acc: BTreeMap<NaiveDate, (f64, u64)> = BTreeMap::new();
        for (k, &v) in self.keys.iter().zip(&self.values) {
            let e = acc.entry(k.date).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(d, (sum, n))| (d, sum / n as f64))
            .collect()
    }
}
