//! Calibration diagnostics: verification ranks, rank/PIT histograms, the
//! reliability index, central prediction intervals, and median MAE.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cn0::{self, CN0Params};
use crate::error::{Error, Result};

/// Histogram of verification ranks (K+1 bins for a K-member ensemble) or of
/// binned PIT values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    /// counts[r] is the number of cases in bin r+1 (ranks are 1-based).
    pub counts: Vec<u64>,
    pub total: u64,
}

impl RankHistogram {
    pub fn from_ranks(ranks: &[usize], n_bins: usize) -> Result<Self> {
        let mut counts = vec![0u64; n_bins];
        for &r in ranks {
            if r < 1 || r > n_bins {
                return Err(Error::Data(format!("rank {r} outside 1..={n_bins}")));
            }
            counts[r - 1] += 1;
        }
        Ok(Self {
            counts,
            total: ranks.len() as u64,
        })
    }

    /// Relative frequency of each bin.
    pub fn relative(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Rank of the observation within the pooled set {members, x}, in 1..=K+1.
/// Ties are broken by placing the observation uniformly at random among the
/// tied positions, so the null distribution stays discrete-uniform even on
/// all-zero night cases.
pub fn verification_rank(members: &[f64], x: f64, tie_rng: &mut impl Rng) -> usize {
    let below = members.iter().filter(|f| **f < x).count();
    let tied = members.iter().filter(|f| **f == x).count();
    below + 1 + tie_rng.gen_range(0..=tied)
}

/// Bins PIT values into `bins` equal-width bins on [0, 1]; a value of
/// exactly 1 lands in the last bin.
pub fn pit_histogram(pit_values: &[f64], bins: usize) -> Result<RankHistogram> {
    if bins == 0 {
        return Err(Error::Config("PIT histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    for &u in pit_values {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Data(format!("PIT value {u} outside [0, 1]")));
        }
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(RankHistogram {
        counts,
        total: pit_values.len() as u64,
    })
}

/// Reliability index: Σ_r |ρ_r − 1/(K+1)| over the K+1 bins, where ρ_r is
/// the relative frequency of bin r. 0 for a flat histogram; at most
/// 2(1 − 1/(K+1)), attained when all mass sits in one bin.
pub fn reliability_index(hist: &RankHistogram) -> f64 {
    let uniform = 1.0 / hist.counts.len() as f64;
    hist.relative().iter().map(|p| (p - uniform).abs()).sum()
}

/// Nominal coverage of the K-member ensemble range, in percent:
/// (K−1)/(K+1) · 100.
pub fn nominal_coverage_pct(k: usize) -> f64 {
    (k as f64 - 1.0) / (k as f64 + 1.0) * 100.0
}

/// Ensemble-range interval: [min member, max member].
pub fn ensemble_interval(members: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &f in members {
        lo = lo.min(f);
        hi = hi.max(f);
    }
    (lo, hi)
}

/// Central (1−α) interval of a censored-normal distribution:
/// quantiles at α/2 and 1−α/2 (the lower endpoint is 0 whenever the point
/// mass at zero reaches α/2).
pub fn cn0_central_interval(params: &CN0Params, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("interval alpha {alpha} outside (0, 1)")));
    }
    let lo = cn0::quantile(params, alpha / 2.0)?;
    let hi = cn0::quantile(params, 1.0 - alpha / 2.0)?;
    Ok((lo, hi))
}

/// Empirical coverage (percent) and mean width of prediction intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageWidth {
    pub coverage_pct: f64,
    pub avg_width: f64,
}

/// Fraction of observations inside their interval (endpoints count as
/// covered) and the average interval width.
pub fn coverage_and_width(intervals: &[(f64, f64)], obs: &[f64]) -> Result<CoverageWidth> {
    if intervals.len() != obs.len() {
        return Err(Error::Data(format!(
            "{} intervals vs {} observations",
            intervals.len(),
            obs.len()
        )));
    }
    if intervals.is_empty() {
        return Err(Error::Data("coverage of an empty case list is undefined".into()));
    }
    let mut covered = 0usize;
    let mut width_sum = 0.0;
    for (&(lo, hi), &y) in intervals.iter().zip(obs) {
        if y >= lo && y <= hi {
            covered += 1;
        }
        width_sum += hi - lo;
    }
    let n = intervals.len() as f64;
    Ok(CoverageWidth {
        coverage_pct: covered as f64 / n * 100.0,
        avg_width: width_sum / n,
    })
}

/// Sample median of the ensemble; even K averages the two central order
/// statistics.
pub fn ensemble_median(members: &[f64]) -> f64 {
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite member"));
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Mean absolute error of point forecasts (typically predictive medians).
pub fn mean_absolute_error(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "MAE needs matching non-empty slices (got {} and {})",
            pred.len(),
            obs.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(obs)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / pred.len() as f64)
}
