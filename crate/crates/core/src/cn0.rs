//! Normal distribution left-censored at zero (CN0).
//!
//! The predictive law used by both the EMOS model and the distributional
//! regression network: a Gaussian with location `mu` and scale `sigma` whose
//! mass below zero is collapsed into a point mass at the origin. Provides
//! the CDF, mean, quantiles, the closed-form CRPS with analytic parameter
//! gradients, and randomized PIT values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Location and scale of the zero-censored normal predictive law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CN0Params {
    /// Location of the underlying Gaussian, W/m².
    pub mu: f64,
    /// Scale of the underlying Gaussian, W/m². Must be positive and finite.
    pub sigma: f64,
}

impl CN0Params {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::Numerical(format!(
                "invalid CN0 parameters: mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Probability mass assigned to exactly zero.
    pub fn mass_at_zero(&self) -> f64 {
        normal::cdf(-self.mu / self.sigma)
    }
}

/// CDF of the censored law: 0 below zero, the Gaussian CDF from zero on.
/// Right-continuous with a jump of `mass_at_zero` at the origin.
pub fn cdf(params: &CN0Params, x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        normal::cdf((x - params.mu) / params.sigma)
    }
}

/// Mean of the censored law: `mu * Phi(mu/sigma) + sigma * phi(mu/sigma)`.
pub fn mean_kappa(params: &CN0Params) -> f64 {
    let r = params.mu / params.sigma;
    let kappa = params.mu * normal::cdf(r) + params.sigma * normal::pdf(r);
    // exact zero in the fully censored limit instead of a tiny negative
    kappa.max(0.0)
}

/// Quantile of the censored law: `max(0, mu + sigma * Phi^-1(p))`.
pub fn quantile(params: &CN0Params, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Numerical(format!(
            "CN0 quantile needs p in (0,1), got {p}"
        )));
    }
    Ok((params.mu + params.sigma * normal::quantile(p)).max(0.0))
}

/// Equidistant-quantile ensemble: members at levels k/(K+1), k = 1..K,
/// sorted ascending, all non-negative.
pub fn quantile_ensemble(params: &CN0Params, k: usize) -> Vec<f64> {
    assert!(k >= 1, "quantile ensemble needs K >= 1");
    let denom = (k + 1) as f64;
    (1..=k)
        .map(|i| {
            quantile(params, i as f64 / denom).expect("levels k/(K+1) lie strictly inside (0,1)")
        })
        .collect()
}

// Antiderivative of Phi(t)^2, used by the closed-form CRPS:
//   F1(x) = x Phi(x)^2 + 2 phi(x) Phi(x) - Phi(x*sqrt(2)) / sqrt(pi)
fn f1(x: f64) -> f64 {
    let c = normal::cdf(x);
    x * c * c + 2.0 * normal::pdf(x) * c - normal::cdf(x * SQRT_2) / SQRT_PI
}

/// Closed-form CRPS of the censored law against an observation `x >= 0`.
///
/// With a = -mu/sigma and w = (x - mu)/sigma,
///   CRPS = sigma * [ F1(w) + F1(-w) - F1(a) ],
/// which reduces to the classic Gaussian expression
/// sigma * [ w(2 Phi(w) - 1) + 2 phi(w) - 1/sqrt(pi) ] as a -> -inf.
pub fn crps(params: &CN0Params, x: f64) -> f64 {
    debug_assert!(x >= 0.0, "CN0 CRPS expects a non-negative observation");
    let a = -params.mu / params.sigma;
    let w = (x - params.mu) / params.sigma;
    let v = params.sigma * (f1(w) + f1(-w) - f1(a));
    // the analytic value is non-negative; clip rounding dust in the
    // near-degenerate limits
    v.max(0.0)
}

/// Analytic gradients of [`crps`] with respect to (mu, sigma):
///   dCRPS/dmu    = Phi(a)^2 + 1 - 2 Phi(w)
///   dCRPS/dsigma = 2 phi(w) - 1/sqrt(pi) - 2 phi(a) Phi(a) + Phi(a*sqrt(2))/sqrt(pi)
pub fn crps_grad(params: &CN0Params, x: f64) -> (f64, f64) {
    let a = -params.mu / params.sigma;
    let w = (x - params.mu) / params.sigma;
    let phi_a = normal::cdf(a);
    let d_mu = phi_a * phi_a + 1.0 - 2.0 * normal::cdf(w);
    let d_sigma = 2.0 * normal::pdf(w) - 1.0 / SQRT_PI - 2.0 * normal::pdf(a) * phi_a
        + normal::cdf(a * SQRT_2) / SQRT_PI;
    (d_mu, d_sigma)
}

/// Probability integral transform with randomization at the jump.
///
/// For x > 0 the CDF is continuous and the PIT is `cdf(x)`; at x = 0 the
/// caller-supplied `u` in [0,1] places the value uniformly inside the point
/// mass: `u * Phi(-mu/sigma)`.
pub fn pit(params: &CN0Params, x: f64, u: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Numerical(format!(
            "PIT needs a non-negative observation, got {x}"
        )));
    }
    debug_assert!((0.0..=1.0).contains(&u), "PIT randomization u must be in [0,1]");
    if x > 0.0 {
        Ok(cdf(params, x))
    } else {
        Ok(u * params.mass_at_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn p(mu: f64, sigma: f64) -> CN0Params {
        CN0Params::new(mu, sigma).unwrap()
    }

    #[test]
    fn cdf_censors_below_zero() {
        assert_eq!(cdf(&p(0.0, 1.0), -5.0), 0.0);
        assert_abs_diff_eq!(cdf(&p(0.0, 1.0), 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(&p(200.0, 100.0), 300.0), 0.8413447460685429, epsilon = 1e-13);
    }

    #[test]
    fn cdf_jump_at_zero_equals_mass() {
        let params = p(30.0, 40.0);
        assert_abs_diff_eq!(
            cdf(&params, 0.0),
            params.mass_at_zero(),
            epsilon = 0.0
        );
        assert_eq!(cdf(&params, -1e-300), 0.0);
    }

    #[test]
    fn mean_kappa_examples() {
        assert_abs_diff_eq!(mean_kappa(&p(0.0, 1.0)), 0.3989422804014327, epsilon = 1e-14);
        assert_abs_diff_eq!(mean_kappa(&p(1000.0, 1.0)), 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mean_kappa(&p(-1000.0, 1.0)), 0.0, epsilon = 1e-12);
        // frozen from direct formula evaluation
        assert_abs_diff_eq!(mean_kappa(&p(3.0, 2.0)), 3.0586135875252096, epsilon = 1e-13);
        assert_abs_diff_eq!(mean_kappa(&p(-50.0, 30.0)), 0.5947965501417252, epsilon = 1e-13);
    }

    #[test]
    fn quantile_examples() {
        assert_abs_diff_eq!(quantile(&p(-1.0, 1.0), 0.5).unwrap(), 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(
            quantile(&p(0.0, 1.0), 8.0 / 9.0).unwrap(),
            1.2206403488473496,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(quantile(&p(500.0, 100.0), 0.5).unwrap(), 500.0, epsilon = 1e-10);
        assert!(quantile(&p(0.0, 1.0), 0.0).is_err());
        assert!(quantile(&p(0.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn quantile_ensemble_levels_and_censoring() {
        let members = quantile_ensemble(&p(0.0, 1.0), 8);
        assert_eq!(members.len(), 8);
        // members 1-4 censored at zero, member 5 = Phi^-1(5/9)
        for m in &members[..4] {
            assert_eq!(*m, 0.0);
        }
        assert_abs_diff_eq!(members[4], 0.13971029888186212, epsilon = 1e-12);
        assert!(members.windows(2).all(|w| w[0] <= w[1]));

        let all_zero = quantile_ensemble(&p(-10.0, 0.1), 8);
        assert!(all_zero.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn crps_examples() {
        // frozen from adaptive quadrature of the (F - 1)^2 integral
        assert_abs_diff_eq!(
            crps(&p(500.0, 50.0), 500.0),
            11.684748862755455,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(crps(&p(0.0, 1.0), 2.0), 1.3359443330583485, epsilon = 1e-12);
        assert_abs_diff_eq!(crps(&p(0.0, 1.0), 0.0), 0.11684748862755456, epsilon = 1e-13);
        assert_abs_diff_eq!(crps(&p(-50.0, 30.0), 10.0), 9.334992449247988, epsilon = 1e-11);
        // degenerate point mass at zero, perfect forecast
        assert!(crps(&p(-40.0, 1e-6), 0.0) < 1e-12);
        // point mass at zero against a positive observation integrates to y
        assert_abs_diff_eq!(crps(&p(-500.0, 1.0), 7.5), 7.5, epsilon = 1e-9);
    }

    #[test]
    fn crps_grad_symmetric_case() {
        let (d_mu, _) = crps_grad(&p(500.0, 50.0), 500.0);
        assert_abs_diff_eq!(d_mu, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn crps_grad_matches_finite_differences() {
        let mut rng = crate::rng::substream(101, "cn0/gradcheck");
        let mut checked = 0;
        while checked < 300 {
            let mu = rng.gen_range(-500.0..1500.0);
            let sigma = rng.gen_range(1.0..400.0);
            let x: f64 = rng.gen_range(0.0..1400.0);
            let params = p(mu, sigma);
            let (g_mu, g_sigma) = crps_grad(&params, x);
            let h_mu = 1e-5 * mu.abs().max(1.0);
            let h_sigma = 1e-5 * sigma.abs().max(1.0);
            let fd_mu =
                (crps(&p(mu + h_mu, sigma), x) - crps(&p(mu - h_mu, sigma), x)) / (2.0 * h_mu);
            let fd_sigma = (crps(&p(mu, sigma + h_sigma), x) - crps(&p(mu, sigma - h_sigma), x))
                / (2.0 * h_sigma);
            let scale_mu = g_mu.abs().max(fd_mu.abs()).max(1e-6);
            let scale_sigma = g_sigma.abs().max(fd_sigma.abs()).max(1e-6);
            assert!(
                (g_mu - fd_mu).abs() / scale_mu < 1e-4,
                "d/dmu mismatch at mu={mu} sigma={sigma} x={x}: {g_mu} vs {fd_mu}"
            );
            assert!(
                (g_sigma - fd_sigma).abs() / scale_sigma < 1e-4,
                "d/dsigma mismatch at mu={mu} sigma={sigma} x={x}: {g_sigma} vs {fd_sigma}"
            );
            checked += 1;
        }
    }

    #[test]
    fn widening_sigma_raises_crps_at_the_median() {
        // x at the median of an uncensored forecast: wider is worse
        let (_, d_sigma) = crps_grad(&p(500.0, 50.0), 500.0);
        assert!(d_sigma > 0.0);
        let (_, d_sigma_wide) = crps_grad(&p(500.0, 300.0), 500.0);
        assert!(d_sigma_wide > 0.0);
    }

    #[test]
    fn pit_examples() {
        assert_abs_diff_eq!(
            pit(&p(300.0, 100.0), 300.0, 0.77).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(pit(&p(0.0, 1.0), 0.0, 0.5).unwrap(), 0.25, epsilon = 1e-14);
        assert_eq!(pit(&p(0.0, 1.0), 0.0, 0.0).unwrap(), 0.0);
        assert!(pit(&p(0.0, 1.0), -1.0, 0.5).is_err());
    }

    #[test]
    fn crps_monte_carlo_consistency() {
        // closed form vs E|X-x| - 0.5 E|X-X'| on censored draws
        let cases = [(30.0, 40.0, 25.0), (-20.0, 35.0, 0.0), (300.0, 80.0, 410.0)];
        let mut rng = crate::rng::substream(11, "cn0/mc");
        for (mu, sigma, x) in cases {
            let params = p(mu, sigma);
            let n = 1_000_000usize;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).max(0.0)
            };
            let (mut s1, mut s1sq) = (0.0, 0.0);
            for _ in 0..n {
                let d = (draw(&mut rng) - x).abs();
                s1 += d;
                s1sq += d * d;
            }
            let m1 = s1 / n as f64;
            let v1 = (s1sq / n as f64 - m1 * m1) / n as f64;
            let (mut s2, mut s2sq) = (0.0, 0.0);
            for _ in 0..n {
                let d = (draw(&mut rng) - draw(&mut rng)).abs();
                s2 += d;
                s2sq += d * d;
            }
            let m2 = s2 / n as f64;
            let v2 = (s2sq / n as f64 - m2 * m2) / n as f64;
            let est = m1 - 0.5 * m2;
            let se = (v1 + 0.25 * v2).sqrt();
            let closed = crps(&params, x);
            assert!(
                (closed - est).abs() <= 3.0 * se,
                "MC mismatch at ({mu},{sigma},{x}): closed={closed} est={est} se={se}"
            );
        }
    }

    #[test]
    fn mean_kappa_monte_carlo_consistency() {
        let params = p(120.0, 180.0);
        let mut rng = crate::rng::substream(12, "cn0/kappa-mc");
        let n = 1_000_000usize;
        let (mut s, mut ssq) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let d = (params.mu + params.sigma * z).max(0.0);
            s += d;
            ssq += d * d;
        }
        let m = s / n as f64;
        let se = ((ssq / n as f64 - m * m) / n as f64).sqrt();
        assert!((mean_kappa(&params) - m).abs() <= 3.0 * se);
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_bounded(
            mu in -500.0..1500.0f64,
            sigma in 1.0..400.0f64,
            x1 in -100.0..1400.0f64,
            x2 in -100.0..1400.0f64,
        ) {
            let params = p(mu, sigma);
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            let (c_lo, c_hi) = (cdf(&params, lo), cdf(&params, hi));
            prop_assert!(c_lo <= c_hi);
            prop_assert!((0.0..=1.0).contains(&c_lo));
            prop_assert!(cdf(&params, 1e12) > 1.0 - 1e-12);
        }

        #[test]
        fn crps_is_non_negative(
            mu in -500.0..1500.0f64,
            sigma in 1.0..400.0f64,
            x in 0.0..1400.0f64,
        ) {
            prop_assert!(crps(&p(mu, sigma), x) >= 0.0);
        }

        #[test]
        fn quantile_inverts_cdf_above_the_mass(
            mu in -200.0..800.0f64,
            sigma in 1.0..300.0f64,
            q in 0.001..0.999f64,
        ) {
            let params = p(mu, sigma);
            let mass = params.mass_at_zero();
            let x = quantile(&params, q).unwrap();
            if q > mass {
                prop_assert!((cdf(&params, x) - q).abs() < 1e-10);
            } else {
                prop_assert_eq!(x, 0.0);
            }
        }

        #[test]
        fn quantiles_are_non_decreasing(
            mu in -200.0..800.0f64,
            sigma in 1.0..300.0f64,
            q1 in 0.01..0.99f64,
            q2 in 0.01..0.99f64,
        ) {
            let params = p(mu, sigma);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(quantile(&params, lo).unwrap() <= quantile(&params, hi).unwrap());
        }
    }
}
