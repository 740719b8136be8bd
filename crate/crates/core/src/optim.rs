//! BFGS quasi-Newton minimizer with Armijo backtracking, for smooth
//! low-dimensional objectives with analytic gradients (the CRPS objectives
//! here have 5 parameters).

use crate::error::{Error, Result};

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// True when the gradient tolerance was met (as opposed to hitting the
    /// iteration cap or a stalled line search).
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes `f` from `x0` with BFGS. `f(x, grad)` must fill `grad` and
/// return the objective value. Stops when the max-norm of the gradient
/// drops below `grad_tol`, progress stalls, or `max_iter` is reached.
pub fn minimize_bfgs<F>(mut f: F, x0: &[f64], max_iter: usize, grad_tol: f64) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "objective non-finite at the starting point {x0:?}"
        )));
    }

    // inverse Hessian approximation, row-major, starts as identity
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }

    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < grad_tol {
            converged = true;
            break;
        }

        // d = -H g
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += h[i * n + j] * g[j];
            }
            d[i] = -s;
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if slope >= 0.0 {
            // H lost positive definiteness; fall back to steepest descent
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }

        // Armijo backtracking from a unit step
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope {
                accepted = true;
                break;
            }
            step *= BACKTRACK;
        }
        if !accepted {
            break; // no usable decrease along d: report where we stand
        }

        // BFGS inverse update with curvature safeguard
        let mut sy = 0.0;
        let mut ss = 0.0;
        let mut yy = 0.0;
        for i in 0..n {
            let si = x_new[i] - x[i];
            let yi = g_new[i] - g[i];
            sy += si * yi;
            ss += si * si;
            yy += yi * yi;
        }
        if sy > 1e-12 * ss.sqrt() * yy.sqrt() {
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let s_vec: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
            let y_vec: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += h[i * n + j] * y_vec[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y_vec.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * rho * yhy * s_vec[i] * s_vec[j]
                        - rho * (hy[i] * s_vec[j] + s_vec[i] * hy[j])
                        + rho * s_vec[i] * s_vec[j];
                }
            }
        }

        let f_prev = fx;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if (f_prev - fx).abs() <= 1e-14 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    let gradient_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gradient_norm < grad_tol {
        converged = true;
    }
    Ok(OptimResult {
        x,
        value: fx,
        iterations,
        gradient_norm,
        converged,
    })
}
