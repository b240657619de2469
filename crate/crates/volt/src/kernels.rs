//! Covariance functions.
//!
//! The two kernels at the heart of the model both come from SDEs with
//! independent increments:
//!
//! * the Brownian-motion kernel `K_v(t, t') = sigma^2 min(t, t')` governing
//!   log-volatility, and
//! * the integrated-volatility kernel `K_s(t, t'; V) = ∫_0^min(t,t') V(u)^2 du`
//!   governing log-data conditional on a volatility path.
//!
//! The integral is discretized as a left-endpoint Riemann sum on the
//! observation grid, `cum[i] = Σ_{l<=i} V_l^2 dt`, matching the variance
//! accumulation of an Euler–Maruyama simulation exactly.
//!
//! A Matérn-5/2 kernel is provided as the stationary baseline, and the
//! geodesic exponential kernel plus a rank-one-plus-diagonal intertask
//! covariance support the multi-task extension.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::linalg::{chol_jitter, MinGram};
use crate::timeseries::{TimeGrid, VolUnit, VolatilityPath};

/// Brownian-motion covariance `sigma2 * min(t, t2)` for strictly positive times.
pub fn bm_cov(t: f64, t2: f64, sigma2: f64) -> Result<f64> {
    if t <= 0.0 || t2 <= 0.0 {
        return Err(VoltError::NonPositive {
            context: "brownian kernel time",
            value: t.min(t2),
        });
    }
    if sigma2 <= 0.0 {
        return Err(VoltError::NonPositive {
            context: "brownian kernel sigma2",
            value: sigma2,
        });
    }
    Ok(sigma2 * t.min(t2))
}

/// Log-volatility kernel with variance rate `sigma2` (the squared volvol).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianKernel {
    pub sigma2: f64,
}

impl BrownianKernel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(VoltError::NonPositive {
                context: "brownian kernel sigma2",
                value: sigma2,
            });
        }
        Ok(BrownianKernel { sigma2 })
    }

    pub fn cov(&self, t: f64, t2: f64) -> f64 {
        self.sigma2 * t.min(t2)
    }

    pub fn matrix(&self, times: &[f64], times2: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(times.len(), times2.len(), |i, j| {
            self.cov(times[i], times2[j])
        })
    }
}

/// Integrated-volatility kernel over a grid: entry `(i, j)` is
/// `cum[min(i, j)]` with `cum[i] = Σ_{l<=i} V_l^2 dt`.
///
/// `vol[i]` is the annualized volatility attributed to the grid interval
/// ending at grid point `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltKernel {
    grid: TimeGrid,
    vol: Vec<f64>,
    cum: Vec<f64>,
}

impl VoltKernel {
    pub fn new(grid: TimeGrid, vol: Vec<f64>) -> Result<Self> {
        if grid.len() != vol.len() {
            return Err(VoltError::DimensionMismatch {
                context: "volt kernel volatility path",
                expected: grid.len(),
                got: vol.len(),
            });
        }
        let dt = grid.dt();
        let mut cum = Vec::with_capacity(vol.len());
        let mut acc = 0.0;
        for &v in &vol {
            if v <= 0.0 || !v.is_finite() {
                return Err(VoltError::NonPositive {
                    context: "volt kernel volatility",
                    value: v,
                });
            }
            acc += v * v * dt;
            cum.push(acc);
        }
        Ok(VoltKernel { grid, vol, cum })
    }

    /// Build from an annualized volatility path aligned to its grid.
    pub fn from_path(path: &VolatilityPath) -> Result<Self> {
        if path.unit != VolUnit::Annualized {
            return Err(VoltError::Invalid(
                "volt kernel expects an annualized volatility path".into(),
            ));
        }
        Self::new(path.grid.clone(), path.values.clone())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn cum(&self) -> &[f64] {
        &self.cum
    }

    pub fn vol(&self) -> &[f64] {
        &self.vol
    }

    /// Cumulative integral as a [`MinGram`] for O(n) precision algebra; built
    /// from the exact per-interval increments `V_i^2 dt`.
    pub fn min_gram(&self) -> Result<MinGram> {
        let dt = self.grid.dt();
        let deltas: Vec<f64> = self.vol.iter().map(|v| v * v * dt).collect();
        MinGram::from_increments(&deltas)
    }

    pub fn cov_by_index(&self, i: usize, j: usize) -> Result<f64> {
        let k = i.min(j);
        if i.max(j) >= self.cum.len() {
            return Err(VoltError::IndexOutOfRange {
                index: i.max(j),
                len: self.cum.len(),
            });
        }
        Ok(self.cum[k])
    }

    /// Covariance matrix over two index lists.
    pub fn cov_matrix(&self, idx: &[usize], idx2: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(idx.len(), idx2.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx2.iter().enumerate() {
                m[(a, b)] = self.cov_by_index(i, j)?;
            }
        }
        Ok(m)
    }

    /// Extend the kernel beyond the training grid with sampled future
    /// annualized volatilities; the cumulative sum continues across the
    /// boundary under the same left-Riemann rule.
    pub fn extended(&self, future_vol: &[f64]) -> Result<VoltKernel> {
        let mut vol = self.vol.clone();
        vol.extend_from_slice(future_vol);
        Self::new(self.grid.extended(future_vol.len()), vol)
    }
}

/// Matérn-5/2 covariance; `k(x, x) = amplitude`.
pub fn matern52_cov(x: f64, x2: f64, lengthscale: f64, amplitude: f64) -> Result<f64> {
    if lengthscale <= 0.0 {
        return Err(VoltError::NonPositive {
            context: "matern lengthscale",
            value: lengthscale,
        });
    }
    if amplitude <= 0.0 {
        return Err(VoltError::NonPositive {
            context: "matern amplitude",
            value: amplitude,
        });
    }
    let r = (x - x2).abs() / lengthscale;
    let s = 5.0_f64.sqrt() * r;
    Ok(amplitude * (1.0 + s + s * s / 3.0) * (-s).exp())
}

/// Geodesic exponential kernel on the unit sphere:
/// `k(x, y) = exp(-arccos(x·y) / (2 sigma^2))`.
pub fn geodesic_cov(x: [f64; 3], y: [f64; 3], sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(VoltError::NonPositive {
            context: "geodesic lengthscale",
            value: sigma,
        });
    }
    for v in [x, y] {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(VoltError::Invalid(format!(
                "geodesic kernel input is not a unit vector (norm {norm})"
            )));
        }
    }
    let dot = (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).clamp(-1.0, 1.0);
    Ok((-dot.acos() / (2.0 * sigma * sigma)).exp())
}

/// Latitude/longitude in degrees mapped to a unit 3-vector.
pub fn latlon_to_unit(lat_deg: f64, lon_deg: f64) -> [f64; 3] {
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// Rank-one-plus-diagonal intertask covariance `K_i = a a^T + diag(d)`,
/// positive definite whenever every `d[p] > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntertaskCovariance {
    pub a: Vec<f64>,
    pub d: Vec<f64>,
}

impl IntertaskCovariance {
    pub fn new(a: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if a.len() != d.len() || a.is_empty() {
            return Err(VoltError::DimensionMismatch {
                context: "intertask covariance",
                expected: a.len().max(1),
                got: d.len(),
            });
        }
        for &v in &d {
            if v <= 0.0 || !v.is_finite() {
                return Err(VoltError::NonPositive {
                    context: "intertask diagonal entry",
                    value: v,
                });
            }
        }
        Ok(IntertaskCovariance { a, d })
    }

    pub fn identity(p: usize) -> Self {
        IntertaskCovariance {
            a: vec![0.0; p],
            d: vec![1.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| {
            self.a[i] * self.a[j] + if i == j { self.d[i] } else { 0.0 }
        })
    }
}

/// Normalize a covariance matrix to unit diagonal.
pub fn to_correlation(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let p = cov.nrows();
    DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt())
}

/// Unnormalized LKJ log density `(eta - 1) * log det(corr)`.
pub fn lkj_log_prior(corr: &DMatrix<f64>, eta: f64) -> Result<f64> {
    let p = corr.nrows();
    if corr.ncols() != p {
        return Err(VoltError::DimensionMismatch {
            context: "lkj correlation matrix",
            expected: p,
            got: corr.ncols(),
        });
    }
    for i in 0..p {
        if (corr[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(VoltError::Invalid(
                "lkj prior requires a unit diagonal".into(),
            ));
        }
    }
    let chol = nalgebra::Cholesky::new(corr.clone())
        .ok_or(VoltError::NotPositiveDefinite { context: "lkj prior" })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok((eta - 1.0) * logdet)
}

/// Verify symmetry and positive definiteness after jitter; used by tests and
/// as a guard in multi-task code.
pub fn check_psd(mat: &DMatrix<f64>, context: &'static str) -> Result<()> {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-8 * mat[(i, j)].abs().max(1.0) {
                return Err(VoltError::Invalid(format!("{context}: matrix not symmetric")));
            }
        }
    }
    chol_jitter(mat, context).map(|_| ())
}
