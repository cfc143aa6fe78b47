//! Gaussian process regression with a squared-exponential kernel.

use nalgebra::{DMatrix, DVector};

use super::{BaselineError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeKernel {
    pub length: f64,
    pub signal_var: f64,
    pub noise: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        Self { length: 0.2, signal_var: 1.0, noise: 1e-6 }
    }
}

impl SeKernel {
    pub fn eval(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        self.signal_var * (-0.5 * d2 / (self.length * self.length)).exp()
    }
}

const JITTER_START: f64 = 1e-9;
const JITTER_MAX: f64 = 1e-3;

/// Posterior of a zero-mean GP shifted by a constant prior mean.
#[derive(Clone, Debug)]
pub struct Gp {
    kernel: SeKernel,
    prior_mean: f64,
    points: Vec<[f64; 2]>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl Gp {
    pub fn fit(points: &[[f64; 2]], values: &[f64], kernel: SeKernel, prior_mean: f64) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(BaselineError::Numeric(format!("{} points for {} values", points.len(), values.len())));
        }
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&points[i], &points[j]) + if i == j { kernel.noise } else { 0.0 });
        let mut jitter = JITTER_START;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(c) = kj.cholesky() {
                break c;
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX {
                return Err(BaselineError::Numeric("kernel matrix is not positive definite".into()));
            }
        };
        let y = DVector::from_iterator(n, values.iter().map(|v| v - prior_mean));
        let alpha = chol.solve(&y);
        Ok(Self { kernel, prior_mean, points: points.to_vec(), chol, alpha })
    }

    /// Posterior `(mean, variance)` of the latent function at `q`.
    pub fn predict(&self, q: &[f64; 2]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| self.kernel.eval(p, q)));
        let mean = self.prior_mean + ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("nonsingular factor");
        let var = (self.kernel.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }
}
