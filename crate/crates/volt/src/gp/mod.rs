//! Exact Gaussian-process regression.
//!
//! [`exact`] is the generic dense engine: marginal log-likelihood with
//! analytic gradients for any [`exact::GpPrior`], Adam hyperparameter
//! fitting, posterior prediction and sampling. [`markov`] is a specialized
//! engine for min-type kernels (Brownian and integrated-volatility), whose
//! tridiagonal precision makes likelihood evaluations O(n) instead of
//! O(n^3); it is what the forecasting pipeline trains in its hot loop, and
//! the dense engine doubles as its correctness reference in tests.

pub mod exact;
pub mod markov;

pub use exact::{GpModel, GpPrior, MaternPrior, NOISE_FLOOR};
pub use markov::{FutureLaw, MarkovGp, MarkovMean};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::rng::stream_rng;

/// GP posterior over a set of query times: mean vector and full covariance.
#[derive(Debug, Clone)]
pub struct GaussianPredictive {
    pub times: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPredictive {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Draw `n_paths` i.i.d. paths from N(mean, cov); deterministic per seed.
    ///
    /// The covariance is factored through its symmetric eigendecomposition
    /// with negative eigenvalues clamped to zero, so an exactly singular
    /// posterior (zero covariance) yields exactly the mean.
    pub fn sample(&self, n_paths: usize, seed: u64) -> Result<DMatrix<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        let n = self.len();
        let mut out = DMatrix::zeros(n_paths, n);
        if n == 0 {
            return Ok(out);
        }
        let eig = self.cov.clone().symmetric_eigen();
        let mut factor = eig.eigenvectors.clone();
        for j in 0..n {
            let scale = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= scale;
            }
        }
        let mut z = DVector::zeros(n);
        for p in 0..n_paths {
            let mut rng = stream_rng(seed, p as u64);
            for i in 0..n {
                z[i] = StandardNormal.sample(&mut rng);
            }
            let x = &factor * &z;
            for i in 0..n {
                out[(p, i)] = self.mean[i] + x[i];
            }
        }
        Ok(out)
    }
}

/// Max relative disagreement between an analytic gradient and central finite
/// differences of `objective` at `params`.
pub fn grad_check<F>(mut objective: F, analytic: &[f64], params: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.to_vec();
        p[i] = params[i] + eps;
        let up = objective(&p);
        p[i] = params[i] - eps;
        let down = objective(&p);
        let fd = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
