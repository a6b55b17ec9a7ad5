//! Marginal-likelihood ascent over log-hyperparameters.
//!
//! Projected BFGS with Armijo backtracking. The box comes from the per-step
//! update cap (each hyperparameter may move by at most a fixed factor from
//! its current value) intersected with loose numerical limits. A point where
//! factorization fails scores minus infinity.

use nalgebra::{DMatrix, DVector};

use super::{log_hyperparameter_gradient, PriorMean, TrainingSet};
use crate::error::Result;
use crate::kernels::{Hyperparameters, KernelKind, LogParams, Param};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Relative to `max(1, |log likelihood|)`.
    pub gradient_tolerance: f64,
    /// Each hyperparameter stays within `[old / cap, old * cap]`; `None` leaves
    /// only the numerical limits.
    pub cap_factor: Option<f64>,
    pub prior_mean: PriorMean,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-7,
            cap_factor: Some(3.0),
            prior_mean: PriorMean::TrainingMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationReport {
    pub hyper: Hyperparameters,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    /// False when the iteration limit was hit or the line search stalled
    /// before the projected gradient fell below tolerance.
    pub converged: bool,
    pub gradient_norm: f64,
}

const MAX_BACKTRACKS: usize = 20;
/// Relative gain below which an accepted step ends the ascent.
const STALL_TOLERANCE: f64 = 1e-10;

fn numeric_limits(p: Param) -> (f64, f64) {
    match p {
        Param::LengthScale => (1e-2, 1e4),
        Param::SignalVariance | Param::Matern3Weight | Param::Matern5Weight => (1e-8, 1e4),
        Param::NoiseVariance => (1e-10, 1e2),
    }
}

/// Clamps each optimized hyperparameter of `proposal` into
/// `[current / factor, current * factor]`.
pub fn cap_update(
    kind: KernelKind,
    current: &Hyperparameters,
    proposal: &Hyperparameters,
    factor: f64,
) -> Hyperparameters {
    let layout = LogParams::new(kind, current);
    let old = layout.to_vec(current);
    let new = layout.to_vec(proposal);
    let lf = factor.ln();
    let capped: Vec<f64> = old
        .iter()
        .zip(&new)
        .map(|(o, n)| n.clamp(o - lf, o + lf))
        .collect();
    let mut out = layout.apply(proposal, &capped);
    // apply() round-trips through exp/ln; pin exact bound hits
    for (p, (o, c)) in layout.params().iter().zip(old.iter().zip(&capped)) {
        let v = if *c == o + lf {
            get_param(current, *p) * factor
        } else if *c == o - lf {
            get_param(current, *p) / factor
        } else {
            continue;
        };
        set_param(&mut out, *p, v);
    }
    out
}

fn get_param(h: &Hyperparameters, p: Param) -> f64 {
    match p {
        Param::LengthScale => h.length_scale,
        Param::SignalVariance => h.signal_variance,
        Param::Matern3Weight => h.matern3_weight,
        Param::Matern5Weight => h.matern5_weight,
        Param::NoiseVariance => h.noise_variance,
    }
}

fn set_param(h: &mut Hyperparameters, p: Param, v: f64) {
    match p {
        Param::LengthScale => h.length_scale = v,
        Param::SignalVariance => h.signal_variance = v,
        Param::Matern3Weight => h.matern3_weight = v,
        Param::Matern5Weight => h.matern5_weight = v,
        Param::NoiseVariance => h.noise_variance = v,
    }
}

/// Capped ascent with default options; returns only the hyperparameters.
pub fn optimize_hyperparameters(
    training: &TrainingSet,
    kernel: KernelKind,
    current: &Hyperparameters,
) -> Result<Hyperparameters> {
    Ok(optimize_with(training, kernel, current, &OptimizerOptions::default())?.hyper)
}

pub fn optimize_with(
    training: &TrainingSet,
    kernel: KernelKind,
    current: &Hyperparameters,
    options: &OptimizerOptions,
) -> Result<OptimizationReport> {
    current.validate(kernel)?;
    let layout = LogParams::new(kernel, current);
    let params = layout.params();
    let dim = params.len();
    let x0 = DVector::from_vec(layout.to_vec(current));

    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for (i, p) in params.iter().enumerate() {
        let (a, b) = numeric_limits(*p);
        let (mut l, mut h) = (a.ln(), b.ln());
        if let Some(c) = options.cap_factor {
            let lc = c.ln();
            l = l.max(x0[i] - lc);
            h = h.min(x0[i] + lc);
            if l > h {
                l = x0[i] - lc;
                h = x0[i] + lc;
            }
        }
        lo[i] = l.min(x0[i]);
        hi[i] = h.max(x0[i]);
    }
    let project = |x: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|i| x[i].clamp(lo[i], hi[i])))
    };

    let eval = |x: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let h = layout.apply(current, x.as_slice());
        let (f, g) = log_hyperparameter_gradient(kernel, &h, training, options.prior_mean).ok()?;
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then(|| (f, DVector::from_vec(g)))
    };

    // The starting point must be evaluable; surface its error if not.
    let (f0, g0) = {
        let (f, g) = log_hyperparameter_gradient(kernel, current, training, options.prior_mean)?;
        (f, DVector::from_vec(g))
    };
    let mut x = x0.clone();
    let mut f = f0;
    let mut g = g0;
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = 0;

    let projected_gradient = |x: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            dim,
            (0..dim).map(|i| {
                let at_lo = x[i] <= lo[i] + 1e-12 && g[i] < 0.0;
                let at_hi = x[i] >= hi[i] - 1e-12 && g[i] > 0.0;
                if at_lo || at_hi {
                    0.0
                } else {
                    g[i]
                }
            }),
        )
    };

    while iterations < options.max_iterations {
        let pg = projected_gradient(&x, &g);
        if pg.norm() < options.gradient_tolerance * f.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = &h_inv * &pg;
        for i in 0..dim {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        if g.dot(&d) <= 0.0 {
            h_inv = DMatrix::identity(dim, dim);
            fresh = true;
            d = pg.clone();
        }
        let longest = d.amax();
        if longest > 1.0 {
            d /= longest;
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let xn = project(&(&x + t * &d));
            let s = &xn - &x;
            if s.amax() < 1e-14 {
                break;
            }
            if let Some((fnew, gnew)) = eval(&xn) {
                if fnew >= f + 1e-4 * g.dot(&s) && fnew >= f {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                break;
            }
            h_inv = DMatrix::identity(dim, dim);
            fresh = true;
            continue;
        };

        let s = &xn - &x;
        let y = &g - &gnew;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if fresh {
                let yy = y.dot(&y);
                if yy > 0.0 {
                    h_inv = DMatrix::identity(dim, dim) * (sy / yy);
                }
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
            fresh = false;
        }
        let gain = fnew - f;
        x = xn;
        f = fnew;
        g = gnew;
        // a single tiny gain is normal close to the optimum
        if gain <= STALL_TOLERANCE * f.abs().max(1.0) {
            stalled += 1;
            if stalled == 2 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let gradient_norm = projected_gradient(&x, &g).norm();
    if !converged {
        converged = gradient_norm < options.gradient_tolerance * f.abs().max(1.0);
    }
    if !converged {
        log::warn!(
            "hyperparameter ascent for {kernel} stopped after {iterations} iterations with projected gradient norm {gradient_norm:.3e}"
        );
    }
    let mut hyper = layout.apply(current, x.as_slice());
    if let Some(c) = options.cap_factor {
        hyper = cap_update(kernel, current, &hyper, c);
    }
    Ok(OptimizationReport {
        hyper,
        log_likelihood: f,
        initial_log_likelihood: f0,
        iterations,
        converged,
        gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_clamps_length_scale_to_triple() {
        let cur = Hyperparameters::new(10.0, 1.0, 0.01);
        let prop = Hyperparameters::new(100.0, 1.0, 0.01);
        let out = cap_update(KernelKind::SquaredExponential, &cur, &prop, 3.0);
        assert_eq!(out.length_scale, 30.0);
        let prop = Hyperparameters::new(1.0, 1.0, 0.01);
        let out = cap_update(KernelKind::SquaredExponential, &cur, &prop, 3.0);
        assert!((out.length_scale - 10.0 / 3.0).abs() < 1e-12);
    }
}
