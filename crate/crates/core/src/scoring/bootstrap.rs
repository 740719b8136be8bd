//! Stationary block bootstrap (Politis–Romano) confidence intervals for
//! mean scores and for CRPS skill scores.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bootstrap percentile confidence interval around a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
}

/// Bootstrap tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    /// Confidence level, e.g. 0.95.
    pub level: f64,
    /// Number of bootstrap replicates.
    pub replicates: usize,
    /// Multiplier on the N^(1/3) mean block length.
    pub block_scale: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            replicates: 2000,
            block_scale: 1.0,
        }
    }
}

impl BootstrapSettings {
    /// Parameter sanity, independent of any particular series.
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("bootstrap level {} outside (0, 1)", self.level)));
        }
        if self.replicates < 2 {
            return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
        }
        if !(self.block_scale > 0.0) {
            return Err(Error::Config(format!(
                "bootstrap block scale {} must be positive",
                self.block_scale
            )));
        }
        Ok(())
    }

    fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if n < 10 {
            return Err(Error::Data(format!(
                "bootstrap needs a series of at least 10 values, got {n}"
            )));
        }
        Ok(())
    }
}

/// Mean block length: ⌈scale · N^(1/3)⌉, at least 1.
pub fn mean_block_length(n: usize, scale: f64) -> usize {
    ((scale * (n as f64).cbrt() - 1e-9).ceil() as usize).max(1)
}

/// Draws one geometric block length with the given mean.
fn block_length(mean_len: usize, rng: &mut impl Rng) -> usize {
    if mean_len <= 1 {
        return 1;
    }
    let p = 1.0 / mean_len as f64;
    let u: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
    1 + (u.ln() / (1.0 - p).ln()) as usize
}

/// One stationary-bootstrap resample: blocks with geometric length and
/// uniform random starts, wrapping circularly, concatenated to length N.
/// Calls `visit(index)` for each resampled element.
fn resample_indices(n: usize, mean_len: usize, rng: &mut impl Rng, mut visit: impl FnMut(usize)) {
    let mut filled = 0usize;
    while filled < n {
        let start = rng.gen_range(0..n);
        let len = block_length(mean_len, rng).min(n - filled);
        for j in 0..len {
            visit((start + j) % n);
        }
        filled += len;
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn percentile_ci(
    point: f64,
    mut replicates: Vec<f64>,
    level: f64,
) -> BootstrapCI {
    let n_rep = replicates.len();
    replicates.sort_by(|a, b| a.partial_cmp(b).expect("non-finite replicate"));
    let alpha = 1.0 - level;
    let lower = percentile(&replicates, alpha / 2.0);
    let upper = percentile(&replicates, 1.0 - alpha / 2.0);
    // the percentile interval can exclude the full-sample estimate by a
    // rounding hair on near-degenerate series; keep the invariant
    // lower <= point <= upper
    BootstrapCI {
        point,
        lower: lower.min(point),
        upper: upper.max(point),
        level,
        replicates: n_rep,
    }
}

/// Stationary-bootstrap CI for the mean of a (temporally dependent) score
/// series.
pub fn stationary_bootstrap_ci(
    series: &[f64],
    settings: &BootstrapSettings,
    rng: &mut impl Rng,
) -> Result<BootstrapCI> {
    let n = series.len();
    settings.validate_for(n)?;
    let mean_len = mean_block_length(n, settings.block_scale);
    let point = series.iter().sum::<f64>() / n as f64;
    let mut means = Vec::with_capacity(settings.replicates);
    for _ in 0..settings.replicates {
        let mut sum = 0.0;
        resample_indices(n, mean_len, rng, |i| sum += series[i]);
        means.push(sum / n as f64);
    }
    Ok(percentile_ci(point, means, settings.level))
}

/// Stationary-bootstrap CI for the CRPS skill score 1 − Σf/Σref, resampling
/// the paired per-day series with shared block indices so the skill in each
/// replicate compares the same days.
pub fn bootstrap_skill_ci(
    crps_f: &[f64],
    crps_ref: &[f64],
    settings: &BootstrapSettings,
    rng: &mut impl Rng,
) -> Result<BootstrapCI> {
    if crps_f.len() != crps_ref.len() {
        return Err(Error::Data(format!(
            "paired skill bootstrap needs equal lengths, got {} and {}",
            crps_f.len(),
            crps_ref.len()
        )));
    }
    let n = crps_f.len();
    settings.validate_for(n)?;
    let ref_total: f64 = crps_ref.iter().sum();
    if !(ref_total > 0.0) {
        return Err(Error::Numerical(
            "skill bootstrap undefined: reference scores sum to zero".into(),
        ));
    }
    let point = 1.0 - crps_f.iter().sum::<f64>() / ref_total;
    let mean_len = mean_block_length(n, settings.block_scale);
    let mut skills = Vec::with_capacity(settings.replicates);
    for _ in 0..settings.replicates {
        let mut f_sum = 0.0;
        let mut r_sum = 0.0;
        resample_indices(n, mean_len, rng, |i| {
            f_sum += crps_f[i];
            r_sum += crps_ref[i];
        });
        if r_sum > 0.0 {
            skills.push(1.0 - f_sum / r_sum);
        }
    }
    if skills.len() < settings.replicates / 2 {
        return Err(Error::Numerical(
            "skill bootstrap degenerate: most replicates had zero reference score".into(),
        ));
    }
    Ok(percentile_ci(point, skills, settings.level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn settings(replicates: usize) -> BootstrapSettings {
        BootstrapSettings {
            replicates,
            ..BootstrapSettings::default()
        }
    }

    #[test]
    fn block_length_examples() {
        assert_eq!(mean_block_length(275, 1.0), 7);
        assert_eq!(mean_block_length(27, 1.0), 3); // exact cube stays exact
        assert_eq!(mean_block_length(8, 1.0), 2);
        assert_eq!(mean_block_length(1000, 1.0), 10);
        assert_eq!(mean_block_length(1, 1.0), 1);
        assert_eq!(mean_block_length(60, 1.0), 4);
        assert_eq!(mean_block_length(275, 2.0), 14); // ceil(2 * 6.503)
    }

    #[test]
    fn geometric_lengths_have_requested_mean() {
        let mut rng = crate::rng::substream(17, "boot/geom");
        let n = 50_000;
        let mean_len = 7;
        let total: usize = (0..n).map(|_| block_length(mean_len, &mut rng)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 7.0).abs() < 0.15, "mean {mean}");
        assert_eq!(block_length(1, &mut rng), 1);
    }

    #[test]
    fn constant_series_gives_degenerate_ci() {
        let mut rng = crate::rng::substream(17, "boot/const");
        let series = vec![3.25; 40];
        let ci = stationary_bootstrap_ci(&series, &settings(200), &mut rng).unwrap();
        assert_eq!((ci.point, ci.lower, ci.upper), (3.25, 3.25, 3.25));
        assert_eq!(ci.replicates, 200);
    }

    #[test]
    fn ci_brackets_point_and_median() {
        let mut rng = crate::rng::substream(17, "boot/bracket");
        for _ in 0..20 {
            let series: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..100.0)).collect();
            let ci = stationary_bootstrap_ci(&series, &settings(400), &mut rng).unwrap();
            assert!(ci.lower <= ci.point && ci.point <= ci.upper);
            assert!(ci.upper - ci.lower < 100.0);
        }
    }

    #[test]
    fn short_series_rejected() {
        let mut rng = crate::rng::substream(17, "boot/short");
        let err = stationary_bootstrap_ci(&[1.0; 9], &settings(100), &mut rng).unwrap_err();
        assert!(err.to_string().contains("at least 10"));
    }

    #[test]
    fn ar1_coverage_smoke() {
        // light version of the coverage property: 120 trials, expect >= 80%
        let mut rng = crate::rng::substream(17, "boot/ar1");
        let n = 120;
        let phi = 0.5f64;
        let mut covered = 0;
        for _ in 0..120 {
            let mut x = 0.0f64;
            let series: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen();
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    x = phi * x + z;
                    x
                })
                .collect();
            let ci = stationary_bootstrap_ci(&series, &settings(400), &mut rng).unwrap();
            if ci.lower <= 0.0 && 0.0 <= ci.upper {
                covered += 1;
            }
        }
        assert!(covered >= 96, "covered {covered}/120");
    }

    #[test]
    fn skill_ci_exact_when_ratio_constant() {
        let mut rng = crate::rng::substream(17, "boot/skill-const");
        let reference: Vec<f64> = (0..50).map(|i| 1.0 + (i % 7) as f64).collect();
        let f: Vec<f64> = reference.iter().map(|r| 0.5 * r).collect();
        let ci = bootstrap_skill_ci(&f, &reference, &settings(300), &mut rng).unwrap();
        assert_abs_diff_eq!(ci.point, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.lower, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.upper, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn skill_ci_rejects_zero_reference() {
        let mut rng = crate::rng::substream(17, "boot/skill-zero");
        let err = bootstrap_skill_ci(&[1.0; 20], &[0.0; 20], &settings(100), &mut rng).unwrap_err();
        assert!(err.to_string().contains("reference"));
        assert!(bootstrap_skill_ci(&[1.0; 20], &[1.0; 19], &settings(100), &mut rng).is_err());
    }
}
