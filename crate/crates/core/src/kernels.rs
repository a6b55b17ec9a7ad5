//! Covariance functions over 2D positions.
//!
//! Stationary kernels (squared exponential, Matérn 3/2 and 5/2, and their
//! weighted sum) depend only on the distance between inputs. The neural
//! network kernel is the arcsine form over bias-augmented inputs and is not
//! stationary.
//!
//! Hyperparameters are optimized in log space; [`LogParams`] fixes the layout
//! of that vector for each kernel kind.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelKind {
    SquaredExponential,
    Matern32,
    Matern52,
    /// Arcsine kernel; predictions use only the `neighbors` closest training points.
    NeuralNetwork {
        neighbors: usize,
    },
    AdditiveMatern,
}

impl KernelKind {
    pub const DEFAULT_NN_NEIGHBORS: usize = 10;

    /// The five kernels compared by the benchmark, in reporting order.
    pub fn all() -> [KernelKind; 5] {
        [
            KernelKind::SquaredExponential,
            KernelKind::Matern32,
            KernelKind::Matern52,
            KernelKind::NeuralNetwork {
                neighbors: Self::DEFAULT_NN_NEIGHBORS,
            },
            KernelKind::AdditiveMatern,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            KernelKind::SquaredExponential => "se".into(),
            KernelKind::Matern32 => "matern3".into(),
            KernelKind::Matern52 => "matern5".into(),
            KernelKind::NeuralNetwork { neighbors } if *neighbors == Self::DEFAULT_NN_NEIGHBORS => {
                "nn".into()
            }
            KernelKind::NeuralNetwork { neighbors } => format!("nn{neighbors}"),
            KernelKind::AdditiveMatern => "additive_matern".into(),
        }
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelKind::NeuralNetwork { .. })
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "se" | "squared_exponential" => KernelKind::SquaredExponential,
            "matern3" | "matern32" => KernelKind::Matern32,
            "matern5" | "matern52" => KernelKind::Matern52,
            "additive_matern" | "additive" => KernelKind::AdditiveMatern,
            "nn" | "neural_network" => KernelKind::NeuralNetwork {
                neighbors: Self::DEFAULT_NN_NEIGHBORS,
            },
            other => match other.strip_prefix("nn").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => KernelKind::NeuralNetwork { neighbors: k },
                _ => return Err(Error::param(format!("unknown kernel '{s}'"))),
            },
        })
    }
}

impl TryFrom<String> for KernelKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KernelKind> for String {
    fn from(k: KernelKind) -> String {
        k.name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Meters. For the neural network kernel the input weight matrix is
    /// `length_scale^-2 * I` over bias-augmented inputs.
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Weight of the Matérn 3/2 term (additive kernel only).
    pub matern3_weight: f64,
    /// Weight of the Matérn 5/2 term (additive kernel only).
    pub matern5_weight: f64,
}

impl Default for Hyperparameters {
    /// Length scale 10 m, unit signal variance, noise standard deviation 0.1,
    /// mixture weights 1.
    fn default() -> Self {
        Self {
            length_scale: 10.0,
            signal_variance: 1.0,
            noise_variance: 0.01,
            matern3_weight: 1.0,
            matern5_weight: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            length_scale,
            signal_variance,
            noise_variance,
            ..Self::default()
        }
    }

    pub fn validate(&self, kind: KernelKind) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.length_scale) {
            return Err(Error::param(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !pos(self.signal_variance) {
            return Err(Error::param(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::param(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if kind == KernelKind::AdditiveMatern
            && !(pos(self.matern3_weight) && pos(self.matern5_weight))
        {
            return Err(Error::param("additive Matérn weights must be positive"));
        }
        if let KernelKind::NeuralNetwork { neighbors } = kind {
            if neighbors == 0 {
                return Err(Error::param(
                    "neural network kernel needs at least one neighbor",
                ));
            }
        }
        Ok(())
    }

    /// Kernel value at zero distance for the stationary kernels.
    pub fn prior_variance(&self, kind: KernelKind) -> f64 {
        match kind {
            KernelKind::AdditiveMatern => {
                self.signal_variance * (self.matern3_weight + self.matern5_weight)
            }
            _ => self.signal_variance,
        }
    }
}

/// Which hyperparameters take part in optimization, and in what order.
///
/// The additive kernel carries its amplitude in the two mixture weights, so
/// its `signal_variance` stays fixed. A zero noise variance stays fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogParams {
    kind: KernelKind,
    noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    LengthScale,
    SignalVariance,
    Matern3Weight,
    Matern5Weight,
    NoiseVariance,
}

impl LogParams {
    pub fn new(kind: KernelKind, hyper: &Hyperparameters) -> Self {
        Self {
            kind,
            noise: hyper.noise_variance > 0.0,
        }
    }

    pub fn params(&self) -> Vec<Param> {
        let mut p = match self.kind {
            KernelKind::AdditiveMatern => {
                vec![
                    Param::LengthScale,
                    Param::Matern3Weight,
                    Param::Matern5Weight,
                ]
            }
            _ => vec![Param::LengthScale, Param::SignalVariance],
        };
        if self.noise {
            p.push(Param::NoiseVariance);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.params().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn has_noise(&self) -> bool {
        self.noise
    }

    /// Number of kernel (non-noise) parameters; these come first.
    pub fn kernel_len(&self) -> usize {
        match self.kind {
            KernelKind::AdditiveMatern => 3,
            _ => 2,
        }
    }

    pub fn to_vec(&self, h: &Hyperparameters) -> Vec<f64> {
        self.params().iter().map(|p| get(h, *p).ln()).collect()
    }

    pub fn apply(&self, base: &Hyperparameters, theta: &[f64]) -> Hyperparameters {
        let mut h = *base;
        for (p, v) in self.params().iter().zip(theta) {
            set(&mut h, *p, v.exp());
        }
        h
    }
}

fn get(h: &Hyperparameters, p: Param) -> f64 {
    match p {
        Param::LengthScale => h.length_scale,
        Param::SignalVariance => h.signal_variance,
        Param::Matern3Weight => h.matern3_weight,
        Param::Matern5Weight => h.matern5_weight,
        Param::NoiseVariance => h.noise_variance,
    }
}

fn set(h: &mut Hyperparameters, p: Param, v: f64) {
    match p {
        Param::LengthScale => h.length_scale = v,
        Param::SignalVariance => h.signal_variance = v,
        Param::Matern3Weight => h.matern3_weight = v,
        Param::Matern5Weight => h.matern5_weight = v,
        Param::NoiseVariance => h.noise_variance = v,
    }
}

/// A kernel with validated hyperparameters and precomputed constants.
#[derive(Debug, Clone, Copy)]
pub struct Covariance {
    kind: KernelKind,
    hyper: Hyperparameters,
    inv_ell: f64,
    nn_weight: f64,
}

impl Covariance {
    pub fn new(kind: KernelKind, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate(kind)?;
        Ok(Self {
            kind,
            hyper,
            inv_ell: 1.0 / hyper.length_scale,
            nn_weight: 1.0 / (hyper.length_scale * hyper.length_scale),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    #[inline]
    pub fn eval(&self, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
        let h = &self.hyper;
        match self.kind {
            KernelKind::SquaredExponential => {
                let r2 = (a - b).norm_squared() * self.inv_ell * self.inv_ell;
                h.signal_variance * (-0.5 * r2).exp()
            }
            KernelKind::Matern32 => {
                let s = SQRT3 * (a - b).norm() * self.inv_ell;
                h.signal_variance * (1.0 + s) * (-s).exp()
            }
            KernelKind::Matern52 => {
                let s = SQRT5 * (a - b).norm() * self.inv_ell;
                h.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelKind::AdditiveMatern => {
                let r = (a - b).norm() * self.inv_ell;
                let s3 = SQRT3 * r;
                let s5 = SQRT5 * r;
                h.signal_variance
                    * (h.matern3_weight * (1.0 + s3) * (-s3).exp()
                        + h.matern5_weight * (1.0 + s5 + s5 * s5 / 3.0) * (-s5).exp())
            }
            KernelKind::NeuralNetwork { .. } => h.signal_variance * self.nn_z(a, b).0.asin(),
        }
    }

    /// Returns `(z, a, b, c)` for the arcsine kernel where
    /// `z = w*A / sqrt((1 + w*B)(1 + w*C))` over bias-augmented inputs.
    #[inline]
    fn nn_z(&self, a: &Point2<f64>, b: &Point2<f64>) -> (f64, f64, f64, f64) {
        let w = self.nn_weight;
        let dot_ab = a.x * b.x + a.y * b.y + 1.0;
        let dot_aa = a.x * a.x + a.y * a.y + 1.0;
        let dot_bb = b.x * b.x + b.y * b.y + 1.0;
        let z = w * dot_ab / ((1.0 + w * dot_aa) * (1.0 + w * dot_bb)).sqrt();
        (z.clamp(-1.0, 1.0), dot_ab, dot_aa, dot_bb)
    }

    /// `sum_i k(x, pts[i]) * w[i]`, with the kernel dispatch hoisted out of
    /// the loop.
    pub fn weighted_sum(&self, x: &Point2<f64>, pts: &[Point2<f64>], w: &[f64]) -> f64 {
        let h = &self.hyper;
        let pairs = pts.iter().zip(w);
        match self.kind {
            KernelKind::SquaredExponential => {
                let c = -0.5 * self.inv_ell * self.inv_ell;
                h.signal_variance
                    * pairs
                        .map(|(p, w)| w * ((x - p).norm_squared() * c).exp())
                        .sum::<f64>()
            }
            KernelKind::Matern32 => {
                let c = SQRT3 * self.inv_ell;
                h.signal_variance
                    * pairs
                        .map(|(p, w)| {
                            let s = (x - p).norm() * c;
                            w * (1.0 + s) * (-s).exp()
                        })
                        .sum::<f64>()
            }
            KernelKind::Matern52 => {
                let c = SQRT5 * self.inv_ell;
                h.signal_variance
                    * pairs
                        .map(|(p, w)| {
                            let s = (x - p).norm() * c;
                            w * (1.0 + s + s * s / 3.0) * (-s).exp()
                        })
                        .sum::<f64>()
            }
            _ => pairs.map(|(p, w)| self.eval(x, p) * w).sum(),
        }
    }

    /// Kernel value at `x` against itself.
    pub fn self_covariance(&self, x: &Point2<f64>) -> f64 {
        match self.kind {
            KernelKind::NeuralNetwork { .. } => self.eval(x, x),
            _ => self.hyper.prior_variance(self.kind),
        }
    }

    /// Writes derivatives of `k(a, b)` with respect to the kernel
    /// log-parameters (the first [`LogParams::kernel_len`] entries) into `out`.
    #[inline]
    pub fn grad_log(&self, a: &Point2<f64>, b: &Point2<f64>, out: &mut [f64]) {
        let h = &self.hyper;
        match self.kind {
            KernelKind::SquaredExponential => {
                let r2 = (a - b).norm_squared() * self.inv_ell * self.inv_ell;
                let k = h.signal_variance * (-0.5 * r2).exp();
                out[0] = k * r2;
                out[1] = k;
            }
            KernelKind::Matern32 => {
                let s = SQRT3 * (a - b).norm() * self.inv_ell;
                let e = (-s).exp();
                out[0] = h.signal_variance * s * s * e;
                out[1] = h.signal_variance * (1.0 + s) * e;
            }
            KernelKind::Matern52 => {
                let s = SQRT5 * (a - b).norm() * self.inv_ell;
                let e = (-s).exp();
                out[0] = h.signal_variance * s * s * (1.0 + s) / 3.0 * e;
                out[1] = h.signal_variance * (1.0 + s + s * s / 3.0) * e;
            }
            KernelKind::AdditiveMatern => {
                let r = (a - b).norm() * self.inv_ell;
                let s3 = SQRT3 * r;
                let s5 = SQRT5 * r;
                let e3 = (-s3).exp();
                let e5 = (-s5).exp();
                let k3 = h.signal_variance * (1.0 + s3) * e3;
                let k5 = h.signal_variance * (1.0 + s5 + s5 * s5 / 3.0) * e5;
                let dk3 = h.signal_variance * s3 * s3 * e3;
                let dk5 = h.signal_variance * s5 * s5 * (1.0 + s5) / 3.0 * e5;
                out[0] = h.matern3_weight * dk3 + h.matern5_weight * dk5;
                out[1] = h.matern3_weight * k3;
                out[2] = h.matern5_weight * k5;
            }
            KernelKind::NeuralNetwork { .. } => {
                let w = self.nn_weight;
                let (z, _, bb, cc) = self.nn_z(a, b);
                // d z / d ln(ell), with w = ell^-2
                let dz = -2.0 * z + w * z * (bb / (1.0 + w * bb) + cc / (1.0 + w * cc));
                let denom = (1.0 - z * z).max(1e-300).sqrt();
                out[0] = h.signal_variance * dz / denom;
                out[1] = h.signal_variance * z.asin();
            }
        }
    }
}

/// Covariance between two points.
pub fn kernel_eval(
    kind: KernelKind,
    hyper: &Hyperparameters,
    x: &Point2<f64>,
    x_prime: &Point2<f64>,
) -> Result<f64> {
    Ok(Covariance::new(kind, *hyper)?.eval(x, x_prime))
}

/// Matrix of covariances between every pair from `xs` and `ys`.
pub fn gram_matrix(
    kind: KernelKind,
    hyper: &Hyperparameters,
    xs: &[Point2<f64>],
    ys: &[Point2<f64>],
) -> Result<Mat<f64>> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::param("Gram matrix inputs must be non-empty"));
    }
    let cov = Covariance::new(kind, *hyper)?;
    Ok(Mat::from_fn(xs.len(), ys.len(), |i, j| {
        cov.eval(&xs[i], &ys[j])
    }))
}

/// Symmetric Gram matrix of `xs` against itself; only the lower triangle is
/// evaluated.
pub(crate) fn symmetric_gram(cov: &Covariance, xs: &[Point2<f64>]) -> Mat<f64> {
    let n = xs.len();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = cov.eval(&xs[i], &xs[j]);
            k.write(i, j, v);
            k.write(j, i, v);
        }
    }
    k
}
