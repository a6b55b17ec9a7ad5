//! Gaussian-process regression over 2D positions.

mod optimize;

pub use optimize::{
    cap_update, optimize_hyperparameters, optimize_with, OptimizationReport, OptimizerOptions,
};

use std::f64::consts::PI;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Parallelism, Side};
use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::kernels::{symmetric_gram, Covariance, Hyperparameters, KernelKind, LogParams};

const JITTER_START: f64 = 1e-9;
const JITTER_LIMIT: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    points: Vec<Point2<f64>>,
    values: Vec<f64>,
}

impl TrainingSet {
    pub fn new(points: Vec<Point2<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("training set must not be empty"));
        }
        if points.len() != values.len() {
            return Err(Error::param(format!(
                "training set has {} inputs but {} outputs",
                points.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("training output {i} is not finite")));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::param("training inputs must be finite"));
        }
        Ok(Self { points, values })
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<TrainingSet> {
        TrainingSet::new(
            indices.iter().map(|&i| self.points[i]).collect(),
            indices.iter().map(|&i| self.values[i]).collect(),
        )
    }
}

/// Constant the process reverts to away from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    #[default]
    Zero,
    /// Subtract the training mean before fitting and add it back on prediction.
    TrainingMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    cov: Covariance,
    training: TrainingSet,
    prior: PriorMean,
    offset: f64,
    centered: Vec<f64>,
    factor: Mat<f64>,
    weights: Vec<f64>,
    jitter: f64,
}

/// Cholesky factor of `k + (noise + jitter) I`. Jitter is zero unless the
/// plain factorization fails, then escalates tenfold from `1e-9 * scale` until
/// factorization succeeds or `1e-5 * scale` fails.
fn factorize(k: &Mat<f64>, noise: f64, scale: f64) -> Result<(Mat<f64>, f64)> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a.write(i, i, a.read(i, i) + noise + jitter);
        }
        if let Ok(chol) = a.cholesky(Side::Lower) {
            let l = chol.compute_l();
            if (0..n).all(|i| l.read(i, i) > 0.0 && l.read(i, i).is_finite()) {
                return Ok((l, jitter));
            }
        }
        if jitter >= JITTER_LIMIT * scale * (1.0 - 1e-9) {
            return Err(Error::Conditioning { jitter });
        }
        jitter = if jitter == 0.0 {
            JITTER_START * scale
        } else {
            jitter * 10.0
        };
    }
}

fn lower_solve(l: &Mat<f64>, rhs: &mut Mat<f64>) {
    solve_lower_triangular_in_place(l.as_ref(), rhs.as_mut(), Parallelism::None);
}

/// Solves `L L^T w = y` given the lower factor.
fn cholesky_solve(l: &Mat<f64>, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut v = Mat::from_fn(n, 1, |i, _| y[i]);
    lower_solve(l, &mut v);
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(
        l.transpose(),
        v.as_mut(),
        Parallelism::None,
    );
    (0..n).map(|i| v.read(i, 0)).collect()
}

/// Fits with a zero prior mean.
pub fn fit(training: TrainingSet, kernel: KernelKind, hyper: Hyperparameters) -> Result<GpModel> {
    fit_with_prior(training, kernel, hyper, PriorMean::Zero)
}

pub fn fit_with_prior(
    training: TrainingSet,
    kernel: KernelKind,
    hyper: Hyperparameters,
    prior: PriorMean,
) -> Result<GpModel> {
    let cov = Covariance::new(kernel, hyper)?;
    let k = symmetric_gram(&cov, training.points());
    let scale = (0..k.nrows())
        .map(|i| k.read(i, i))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (factor, jitter) = factorize(&k, hyper.noise_variance, scale)?;
    let offset = match prior {
        PriorMean::Zero => 0.0,
        PriorMean::TrainingMean => training.mean(),
    };
    let centered: Vec<f64> = training.values().iter().map(|y| y - offset).collect();
    let weights = cholesky_solve(&factor, &centered);
    Ok(GpModel {
        cov,
        training,
        prior,
        offset,
        centered,
        factor,
        weights,
        jitter,
    })
}

impl GpModel {
    pub fn kernel(&self) -> KernelKind {
        self.cov.kind()
    }

    pub fn hyper(&self) -> &Hyperparameters {
        self.cov.hyper()
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn prior(&self) -> PriorMean {
        self.prior
    }

    /// The constant added back to predictions (zero unless centered).
    pub fn prior_mean_value(&self) -> f64 {
        self.offset
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub fn factor(&self) -> &Mat<f64> {
        &self.factor
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn local_neighbors(&self) -> Option<usize> {
        match self.cov.kind() {
            KernelKind::NeuralNetwork { neighbors } if neighbors < self.training.len() => {
                Some(neighbors)
            }
            _ => None,
        }
    }

    pub fn predict(&self, x: &Point2<f64>) -> Prediction {
        if let Some(k) = self.local_neighbors() {
            return self.predict_local(x, k, true);
        }
        let pts = self.training.points();
        let n = pts.len();
        let mut v = Mat::from_fn(n, 1, |i, _| self.cov.eval(x, &pts[i]));
        let mean = self.offset + (0..n).map(|i| v.read(i, 0) * self.weights[i]).sum::<f64>();
        lower_solve(&self.factor, &mut v);
        let explained: f64 = (0..n).map(|i| v.read(i, 0).powi(2)).sum();
        Prediction {
            mean,
            variance: (self.cov.self_covariance(x) - explained).max(0.0),
        }
    }

    /// Posterior mean only; skips the triangular solve needed for variance.
    pub fn predict_mean(&self, x: &Point2<f64>) -> f64 {
        if let Some(k) = self.local_neighbors() {
            return self.predict_local(x, k, false).mean;
        }
        self.offset
            + self
                .cov
                .weighted_sum(x, self.training.points(), &self.weights)
    }

    /// Posterior means at many points. Output order matches input order and
    /// does not depend on the size of the thread pool.
    pub fn predict_means(&self, xs: &[Point2<f64>]) -> Vec<f64> {
        xs.par_iter().map(|x| self.predict_mean(x)).collect()
    }

    /// Prediction from the `k` training points nearest to `x` (ties by index).
    fn predict_local(&self, x: &Point2<f64>, k: usize, with_variance: bool) -> Prediction {
        let pts = self.training.points();
        let mut order: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
        order.sort_unstable_by(cmp);
        let local: Vec<Point2<f64>> = order.iter().map(|&(_, i)| pts[i]).collect();
        let y: Vec<f64> = order.iter().map(|&(_, i)| self.centered[i]).collect();

        let gram = symmetric_gram(&self.cov, &local);
        let scale = (0..k)
            .map(|i| gram.read(i, i))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let prior = self.cov.self_covariance(x);
        let Ok((l, _)) = factorize(&gram, self.cov.hyper().noise_variance, scale) else {
            return Prediction {
                mean: self.offset,
                variance: prior,
            };
        };
        let w = cholesky_solve(&l, &y);
        let kstar: Vec<f64> = local.iter().map(|p| self.cov.eval(x, p)).collect();
        let mean = self.offset + kstar.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let variance = if with_variance {
            let mut v = Mat::from_fn(k, 1, |i, _| kstar[i]);
            lower_solve(&l, &mut v);
            (prior - (0..k).map(|i| v.read(i, 0).powi(2)).sum::<f64>()).max(0.0)
        } else {
            f64::NAN
        };
        Prediction { mean, variance }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.weights.len();
        let fit: f64 = self
            .centered
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| y * w)
            .sum();
        let log_det_half: f64 = (0..n).map(|i| self.factor.read(i, i).ln()).sum();
        -0.5 * fit - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln()
    }

    /// Gradient of the log marginal likelihood over the log-parameters laid
    /// out by [`LogParams`].
    pub fn log_likelihood_gradient(&self) -> Vec<f64> {
        let layout = LogParams::new(self.cov.kind(), self.cov.hyper());
        let n = self.weights.len();
        let mut linv = Mat::<f64>::identity(n, n);
        lower_solve(&self.factor, &mut linv);
        let kinv = linv.transpose() * &linv;

        let nk = layout.kernel_len();
        let pts = self.training.points();
        let w = &self.weights;
        let mut grad = vec![0.0; layout.len()];
        let mut buf = [0.0; 3];
        for j in 0..n {
            for i in j..n {
                let pair = if i == j { 0.5 } else { 1.0 };
                let a = pair * (w[i] * w[j] - kinv.read(i, j));
                self.cov.grad_log(&pts[i], &pts[j], &mut buf[..nk]);
                for (g, d) in grad.iter_mut().zip(&buf[..nk]) {
                    *g += a * d;
                }
            }
        }
        if layout.has_noise() {
            let tr: f64 = (0..n).map(|i| w[i] * w[i] - kinv.read(i, i)).sum();
            grad[nk] = 0.5 * self.cov.hyper().noise_variance * tr;
        }
        grad
    }
}

/// Log marginal likelihood and its gradient over log-hyperparameters.
pub fn log_hyperparameter_gradient(
    kernel: KernelKind,
    hyper: &Hyperparameters,
    training: &TrainingSet,
    prior: PriorMean,
) -> Result<(f64, Vec<f64>)> {
    let model = fit_with_prior(training.clone(), kernel, *hyper, prior)?;
    Ok((
        model.log_marginal_likelihood(),
        model.log_likelihood_gradient(),
    ))
}

/// Root-mean-square error of the posterior mean against every cell center.
pub fn rmse_against_field(model: &GpModel, field: &ScalarField) -> f64 {
    let centers: Vec<Point2<f64>> = field.cell_centers().collect();
    let means = model.predict_means(&centers);
    let sse: f64 = means
        .iter()
        .zip(field.values())
        .map(|(m, t)| (m - t).powi(2))
        .sum();
    (sse / field.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(y: f64) -> TrainingSet {
        TrainingSet::new(vec![Point2::new(0.0, 0.0)], vec![y]).unwrap()
    }

    fn se(ell: f64, sf2: f64, sn2: f64) -> Hyperparameters {
        Hyperparameters::new(ell, sf2, sn2)
    }

    #[test]
    fn single_point_weight_is_inverse_prior() {
        let m = fit(
            single(1.0),
            KernelKind::SquaredExponential,
            se(1.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((m.weights()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_point_predictions() {
        let m = fit(
            single(1.0),
            KernelKind::SquaredExponential,
            se(1.0, 1.0, 0.0),
        )
        .unwrap();
        let at = m.predict(&Point2::new(0.0, 0.0));
        assert!((at.mean - 1.0).abs() < 1e-8 && at.variance < 1e-8);
        let far = m.predict(&Point2::new(100.0, 0.0));
        assert!(far.mean.abs() < 1e-10 && (far.variance - 1.0).abs() < 1e-10);
        let one = m.predict(&Point2::new(1.0, 0.0));
        assert!((one.mean - (-0.5f64).exp()).abs() < 1e-8);
        assert!((one.variance - (1.0 - (-1.0f64).exp())).abs() < 1e-8);
    }

    #[test]
    fn single_point_log_likelihood() {
        let m = fit(
            single(1.0),
            KernelKind::SquaredExponential,
            se(1.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((m.log_marginal_likelihood() - (-1.4189385332)).abs() < 1e-6);
    }

    #[test]
    fn duplicated_points_do_not_crash() {
        let t = TrainingSet::new(vec![Point2::new(1.0, 1.0); 2], vec![0.3, 0.3]).unwrap();
        match fit(t, KernelKind::Matern52, se(5.0, 1.0, 0.0)) {
            Ok(m) => assert!(m.jitter() > 0.0),
            Err(e) => assert!(matches!(e, Error::Conditioning { .. })),
        }
    }

    #[test]
    fn centered_prior_reverts_to_training_mean() {
        let t = TrainingSet::new(
            vec![Point2::new(0.0, 0.0), Point2::new(3.0, 0.0)],
            vec![0.4, 0.6],
        )
        .unwrap();
        let m = fit_with_prior(
            t,
            KernelKind::Matern32,
            se(2.0, 1.0, 0.01),
            PriorMean::TrainingMean,
        )
        .unwrap();
        assert!((m.predict_mean(&Point2::new(500.0, 500.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![], vec![]).is_err());
        assert!(TrainingSet::new(vec![Point2::new(0.0, 0.0)], vec![f64::NAN]).is_err());
        assert!(TrainingSet::new(vec![Point2::new(0.0, 0.0)], vec![1.0, 2.0]).is_err());
    }
}
