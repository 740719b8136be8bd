//! Censored-normal EMOS: link functions, CRPS-minimizing coefficient
//! estimation with analytic gradients, and prediction.

use serde::{Deserialize, Serialize};

use crate::cn0::{self, CN0Params};
use crate::data::{EnsembleStats, PairedCase};
use crate::error::{Error, Result};
use crate::optim::minimize_bfgs;

/// Location/scale link coefficients:
///   μ = γ0 + γ1·f̄ + γ2·p0
///   σ = exp(δ0 + δ1·log S′),  S′ = max(S, 1e−3)
/// with f̄ the ensemble mean, p0 the zero-member fraction, and S the
/// ensemble standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmosCoefficients {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta0: f64,
    pub delta1: f64,
}

/// Floor on the ensemble standard deviation before the log link; keeps the
/// scale link total on all-equal (night) ensembles where S = 0.
pub const SPREAD_FLOOR: f64 = 1e-3;

/// Floor on the predicted σ.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Minimum number of training cases accepted by [`fit_emos`].
pub const MIN_TRAINING_CASES: usize = 25;

impl EmosCoefficients {
    fn from_slice(x: &[f64]) -> Self {
        Self {
            gamma0: x[0],
            gamma1: x[1],
            gamma2: x[2],
            delta0: x[3],
            delta1: x[4],
        }
    }

    fn to_array(self) -> [f64; 5] {
        [self.gamma0, self.gamma1, self.gamma2, self.delta0, self.delta1]
    }
}

/// Training view of one case: the link inputs and the verifying observation.
#[derive(Debug, Clone, Copy)]
struct LinkInputs {
    mean: f64,
    p0: f64,
    ln_spread: f64,
    obs: f64,
}

fn link_inputs(case: &PairedCase) -> LinkInputs {
    LinkInputs {
        mean: case.stats.mean,
        p0: case.stats.p0,
        ln_spread: case.stats.variance.sqrt().max(SPREAD_FLOOR).ln(),
        obs: case.obs,
    }
}

/// Mean CN0 CRPS of the coefficients over the cases, with the gradient
/// accumulated through the links when `grad` is provided. Returns infinity
/// when any case produces an unusable (non-finite or non-positive) σ.
fn objective(inputs: &[LinkInputs], x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let n = inputs.len() as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    for c in inputs {
        let mu = x[0] + x[1] * c.mean + x[2] * c.p0;
        let sigma = (x[3] + x[4] * c.ln_spread).exp();
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return f64::INFINITY;
        }
        let params = CN0Params { mu, sigma };
        total += cn0::crps(&params, c.obs);
        if let Some(g) = grad.as_deref_mut() {
            let (dmu, dsigma) = cn0::crps_grad(&params, c.obs);
            g[0] += dmu;
            g[1] += dmu * c.mean;
            g[2] += dmu * c.p0;
            // σ = exp(δ0 + δ1·t): ∂σ/∂δ0 = σ, ∂σ/∂δ1 = σ·t
            g[3] += dsigma * sigma;
            g[4] += dsigma * sigma * c.ln_spread;
        }
    }
    if let Some(g) = grad.as_deref_mut() {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    total / n
}

/// The three fixed multi-start anchors: identity links, a moment-matched
/// start from the least-squares regression of obs on the ensemble mean, and
/// the same regression with a homoscedastic (δ1 = 0) scale.
pub fn initial_points(cases: &[PairedCase]) -> [EmosCoefficients; 3] {
    let n = cases.len() as f64;
    let mean_f = cases.iter().map(|c| c.stats.mean).sum::<f64>() / n;
    let mean_y = cases.iter().map(|c| c.obs).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for c in cases {
        sxx += (c.stats.mean - mean_f).powi(2);
        sxy += (c.stats.mean - mean_f) * (c.obs - mean_y);
    }
    let slope = if sxx > 1e-12 { sxy / sxx } else { 0.0 };
    let intercept = mean_y - slope * mean_f;
    let mut ss_resid = 0.0;
    for c in cases {
        ss_resid += (c.obs - intercept - slope * c.stats.mean).powi(2);
    }
    let sd_resid = (ss_resid / (n - 1.0).max(1.0)).sqrt().max(SPREAD_FLOOR);
    let identity = EmosCoefficients {
        gamma0: 0.0,
        gamma1: 1.0,
        gamma2: 0.0,
        delta0: 0.0,
        delta1: 1.0,
    };
    let regression = EmosCoefficients {
        gamma0: intercept,
        gamma1: slope,
        gamma2: 0.0,
        delta0: sd_resid.ln(),
        delta1: 0.0,
    };
    let homoscedastic = EmosCoefficients {
        gamma0: 0.0,
        gamma1: 1.0,
        gamma2: 0.0,
        delta0: sd_resid.ln(),
        delta1: 0.0,
    };
    [identity, regression, homoscedastic]
}

/// Mean CN0 CRPS of `coeffs` over `cases` (the training objective).
pub fn mean_crps(coeffs: &EmosCoefficients, cases: &[PairedCase]) -> f64 {
    let inputs: Vec<LinkInputs> = cases.iter().map(link_inputs).collect();
    objective(&inputs, &coeffs.to_array(), None)
}

/// Fits EMOS coefficients by minimizing the mean CN0 CRPS with BFGS from
/// the three fixed starts, keeping the best final value.
pub fn fit_emos(cases: &[PairedCase]) -> Result<EmosCoefficients> {
    if cases.len() < MIN_TRAINING_CASES {
        return Err(Error::Data(format!(
            "EMOS fit needs at least {MIN_TRAINING_CASES} training cases, got {}",
            cases.len()
        )));
    }
    let inputs: Vec<LinkInputs> = cases.iter().map(link_inputs).collect();
    let starts = initial_points(cases);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for (i, start) in starts.iter().enumerate() {
        let x0 = start.to_array();
        let run = minimize_bfgs(
            |x, g| objective(&inputs, x, Some(g)),
            &x0,
            200,
            1e-7,
        );
        match run {
            Ok(res) if res.value.is_finite() => {
                if best.as_ref().map_or(true, |(v, _)| res.value < *v) {
                    best = Some((res.value, res.x));
                }
            }
            Ok(res) => failures.push(format!("start {i}: non-finite objective {}", res.value)),
            Err(e) => failures.push(format!("start {i}: {e}")),
        }
    }
    match best {
        Some((_, x)) => Ok(EmosCoefficients::from_slice(&x)),
        None => Err(Error::Numerical(format!(
            "EMOS fit failed at every start: {}",
            failures.join("; ")
        ))),
    }
}

/// Applies the links to one ensemble's summary statistics.
pub fn predict_emos(coeffs: &EmosCoefficients, stats: &EnsembleStats) -> CN0Params {
    let spread = stats.variance.sqrt().max(SPREAD_FLOOR);
    let mu = coeffs.gamma0 + coeffs.gamma1 * stats.mean + coeffs.gamma2 * stats.p0;
    let sigma = (coeffs.delta0 + coeffs.delta1 * spread.ln()).exp().max(SIGMA_FLOOR);
    CN0Params { mu, sigma }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::data::{ensemble_stats, PairedCase, ENSEMBLE_SIZE};
    use chrono::{Duration, TimeZone, Utc};
    use rand::Rng;

    /// Zero-mean, unit-sample-variance (divisor 7) member offsets.
    pub const MEMBER_PATTERN: [f64; ENSEMBLE_SIZE] = [
        -1.2990381056766578,
        -1.0,
        -0.75,
        -0.5,
        0.5,
        0.75,
        1.0,
        1.2990381056766578,
    ];

    /// Synthetic cases with obs = max(0, N(g0 + g1·f̄, exp(d0 + d1·ln S))),
    /// ensemble mean uniform on `mean_range`, spread uniform on
    /// `spread_range`.
    pub fn synthetic_cases(
        n: usize,
        truth: &EmosCoefficients,
        mean_range: (f64, f64),
        spread_range: (f64, f64),
        rng: &mut impl Rng,
    ) -> Vec<PairedCase> {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        (0..n)
            .map(|i| {
                let f_mean = rng.gen_range(mean_range.0..mean_range.1);
                let spread = rng.gen_range(spread_range.0..spread_range.1);
                let mut members = [0.0; ENSEMBLE_SIZE];
                for (m, z) in members.iter_mut().zip(MEMBER_PATTERN) {
                    *m = (f_mean + spread * z).max(0.0);
                }
                let mu = truth.gamma0 + truth.gamma1 * f_mean;
                let sigma = (truth.delta0 + truth.delta1 * spread.ln()).exp();
                let u: f64 = rng.gen_range(1e-12..1.0);
                let obs = (mu + sigma * crate::normal::quantile(u)).max(0.0);
                PairedCase {
                    station_id: 1,
                    init_time: t0 + Duration::days(i as i64),
                    lead_h: 12,
                    members,
                    stats: ensemble_stats(&members),
                    obs,
                }
            })
            .collect()
    }
}
