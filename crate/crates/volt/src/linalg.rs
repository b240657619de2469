//! Shared dense and tridiagonal linear algebra.
//!
//! Two workhorses live here. [`chol_jitter`] is the crate-wide positive
//! definiteness safeguard: every Cholesky factorization of a kernel matrix
//! goes through it, first with a small diagonal jitter and once more with a
//! larger one before giving up. [`SymTridiag`] exploits the Markov structure
//! of min-type kernels: the Gram matrix `K[i,j] = c[min(i,j)]` of any path
//! with independent increments has a symmetric tridiagonal inverse, which
//! turns the O(n^3) solves of generic GP algebra into O(n) recurrences.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, VoltError};

pub const JITTER: f64 = 1e-6;
pub const JITTER_RETRY: f64 = 1e-4;

/// Cholesky with diagonal jitter and one retry at a larger jitter.
pub fn chol_jitter(mat: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    for jitter in [JITTER, JITTER_RETRY] {
        let mut m = mat.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
    }
    Err(VoltError::NotPositiveDefinite { context })
}

/// Cholesky trying the matrix untouched first, then the jitter ladder.
/// Preferred where exactness matters and the matrix is usually PD already.
pub fn chol_ladder(mat: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(mat.clone()) {
        return Ok(c);
    }
    chol_jitter(mat, context)
}

/// Cholesky without jitter; used where exactness matters and the matrix is
/// PD by construction.
pub fn chol_exact(mat: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(mat.clone()).ok_or(VoltError::NotPositiveDefinite { context })
}

/// log det from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// Symmetric positive-definite tridiagonal matrix, stored as diagonal and
/// sub-diagonal bands.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// off[i] couples entries i and i+1; length n-1.
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// y = T x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            y[i] = v;
        }
        y
    }

    /// LDL^T factorization; returns (l, d) with unit lower bidiagonal l.
    pub fn ldl(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = self.diag[0];
        if d[0] <= 0.0 || !d[0].is_finite() {
            return Err(VoltError::NotPositiveDefinite { context: "tridiagonal ldl" });
        }
        for i in 1..n {
            l[i - 1] = self.off[i - 1] / d[i - 1];
            d[i] = self.diag[i] - l[i - 1] * self.off[i - 1];
            if d[i] <= 0.0 || !d[i].is_finite() {
                return Err(VoltError::NotPositiveDefinite { context: "tridiagonal ldl" });
            }
        }
        Ok((l, d))
    }

    /// Solve T x = b via LDL^T (Thomas algorithm).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (l, d) = self.ldl()?;
        Ok(Self::solve_with_ldl(&l, &d, b))
    }

    pub fn solve_with_ldl(l: &[f64], d: &[f64], b: &[f64]) -> Vec<f64> {
        let n = d.len();
        let mut x = b.to_vec();
        for i in 1..n {
            x[i] -= l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= l[i] * x[i + 1];
        }
        x
    }

    pub fn logdet(&self) -> Result<f64> {
        let (_, d) = self.ldl()?;
        Ok(d.iter().map(|x| x.ln()).sum())
    }

    /// Band entries of the inverse: returns (inv_diag, inv_off).
    ///
    /// Takahashi recurrences on the LDL^T factor; only the tridiagonal band
    /// of the (dense) inverse is produced.
    pub fn inverse_band(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (l, d) = self.ldl()?;
        let n = d.len();
        let mut zd = vec![0.0; n];
        let mut zo = vec![0.0; n.saturating_sub(1)];
        zd[n - 1] = 1.0 / d[n - 1];
        for i in (0..n - 1).rev() {
            zo[i] = -l[i] * zd[i + 1];
            zd[i] = 1.0 / d[i] - l[i] * zo[i];
        }
        Ok((zd, zo))
    }

    /// tr(self * other) for two symmetric tridiagonals of equal size.
    pub fn trace_product(&self, other_diag: &[f64], other_off: &[f64]) -> f64 {
        let mut t = 0.0;
        for i in 0..self.n() {
            t += self.diag[i] * other_diag[i];
        }
        for i in 0..self.off.len() {
            t += 2.0 * self.off[i] * other_off[i];
        }
        t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// A min-type Gram matrix `K[i,j] = cum[min(i,j)]` described by its strictly
/// positive increments `delta[i] = cum[i] - cum[i-1]` (with `cum[-1] = 0`).
/// The increments are authoritative — positivity never depends on adding a
/// tiny increment to a large accumulated value.
///
/// Covers both the Brownian-motion kernel (`delta[i] = t[i] - t[i-1]`) and the
/// integrated-volatility kernel (`delta[i] = V[i]^2 dt`).
#[derive(Debug, Clone)]
pub struct MinGram {
    deltas: Vec<f64>,
}

impl MinGram {
    pub fn from_increments(deltas: &[f64]) -> Result<Self> {
        for &d in deltas {
            if d <= 0.0 || !d.is_finite() {
                return Err(VoltError::NonPositive {
                    context: "min-gram increment",
                    value: d,
                });
            }
        }
        Ok(MinGram {
            deltas: deltas.to_vec(),
        })
    }

    pub fn from_cum(cum: &[f64]) -> Result<Self> {
        let mut deltas = Vec::with_capacity(cum.len());
        let mut prev = 0.0;
        for &c in cum {
            if c <= prev || !c.is_finite() {
                return Err(VoltError::NonPositive {
                    context: "min-gram cumulative value",
                    value: c - prev,
                });
            }
            deltas.push(c - prev);
            prev = c;
        }
        Ok(MinGram { deltas })
    }

    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.deltas[i]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn cum(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.deltas
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    }

    /// Exact tridiagonal inverse of the Gram matrix.
    pub fn precision(&self) -> SymTridiag {
        let n = self.n();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut v = 1.0 / self.delta(i);
            if i + 1 < n {
                v += 1.0 / self.delta(i + 1);
                off[i] = -1.0 / self.delta(i + 1);
            }
            diag[i] = v;
        }
        SymTridiag { diag, off }
    }

    pub fn logdet(&self) -> f64 {
        (0..self.n()).map(|i| self.delta(i).ln()).sum()
    }

    /// y = K x in O(n) using prefix/suffix sums.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        // (Kx)_i = sum_{l<=i} delta_l * suffix(x, l)  where suffix(x, l) = sum_{j>=l} x_j
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + x[i];
        }
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.delta(i) * suffix[i];
            y[i] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let cum = self.cum();
        DMatrix::from_fn(n, n, |i, j| cum[i.min(j)])
    }
}

/// Analytic eigendecomposition of the 1-based min matrix `M[i,j] = min(i,j)+1`
/// (0-indexed): eigenvalues `1 / (4 sin^2((2k-1) pi / (2(2n+1))))` with
/// orthonormal discrete-sine eigenvectors. `B = dt * M` is the Brownian Gram
/// matrix on the uniform grid `dt, 2dt, ...`.
pub fn min_matrix_eigen(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = 2 * n + 1;
    let norm = 2.0 / (m as f64).sqrt();
    let mut lambdas = Vec::with_capacity(n);
    let mut q = DMatrix::zeros(n, n);
    for k in 0..n {
        let odd = (2 * k + 1) as f64;
        let s = (odd * std::f64::consts::PI / (2.0 * m as f64)).sin();
        lambdas.push(1.0 / (4.0 * s * s));
        for i in 0..n {
            q[(i, k)] = norm * ((odd * (i as f64 + 1.0) * std::f64::consts::PI) / m as f64).sin();
        }
    }
    (lambdas, q)
}

/// Draw `n_paths` samples from N(mean, cov); rows are paths.
///
/// The covariance factor is taken once; repeated draws reuse it.
pub fn sample_mvn(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n_paths: usize,
    rng: &mut impl rand::Rng,
) -> Result<DMatrix<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let n = mean.len();
    if n == 0 {
        return Ok(DMatrix::zeros(n_paths, 0));
    }
    let chol = chol_jitter(cov, "mvn sampling")?;
    let l = chol.l();
    let mut out = DMatrix::zeros(n_paths, n);
    let mut z = DVector::zeros(n);
    for p in 0..n_paths {
        for i in 0..n {
            z[i] = StandardNormal.sample(rng);
        }
        let x = &l * &z;
        for i in 0..n {
            out[(p, i)] = mean[i] + x[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_increments(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.1..2.0)).collect()
    }

    #[test]
    fn precision_inverts_min_gram() {
        let g = MinGram::from_increments(&random_increments(8, 1)).unwrap();
        let dense = g.to_dense();
        let prec = g.precision().to_dense();
        let prod = &dense * &prec;
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn logdet_matches_dense() {
        let g = MinGram::from_increments(&random_increments(10, 2)).unwrap();
        let dense_logdet = chol_exact(&g.to_dense(), "test").unwrap();
        assert_relative_eq!(g.logdet(), chol_logdet(&dense_logdet), epsilon = 1e-10);

        let t = g.precision();
        assert_relative_eq!(t.logdet().unwrap(), -g.logdet(), epsilon = 1e-10);
    }

    #[test]
    fn tridiag_solve_and_mul() {
        let g = MinGram::from_increments(&random_increments(12, 3)).unwrap();
        let t = g.precision();
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = t.solve(&b).unwrap();
        let back = t.mul_vec(&x);
        for i in 0..12 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-10);
        }
        // K b computed two ways
        let kb = g.mul_vec(&b);
        let kb_dense = g.to_dense() * DVector::from_column_slice(&b);
        for i in 0..12 {
            assert_relative_eq!(kb[i], kb_dense[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn inverse_band_matches_dense_inverse() {
        let g = MinGram::from_increments(&random_increments(9, 4)).unwrap();
        let mut t = g.precision();
        // make it strictly diagonally dominant-ish: add identity
        for v in t.diag.iter_mut() {
            *v += 0.5;
        }
        let dense = t.to_dense();
        let inv = dense.try_inverse().unwrap();
        let (zd, zo) = t.inverse_band().unwrap();
        for i in 0..9 {
            assert_relative_eq!(zd[i], inv[(i, i)], epsilon = 1e-9);
            if i + 1 < 9 {
                assert_relative_eq!(zo[i], inv[(i, i + 1)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn trace_product_matches_dense() {
        let g = MinGram::from_increments(&random_increments(7, 5)).unwrap();
        let t = g.precision();
        let other = MinGram::from_increments(&random_increments(7, 6)).unwrap();
        let o = other.precision();
        let dense = (t.to_dense() * o.to_dense()).trace();
        assert_relative_eq!(t.trace_product(&o.diag, &o.off), dense, epsilon = 1e-10);
    }

    #[test]
    fn min_matrix_eigen_matches_numeric() {
        let n = 12;
        let (lambdas, q) = min_matrix_eigen(n);
        let m = DMatrix::from_fn(n, n, |i, j| (i.min(j) + 1) as f64);
        // Q diag(lambda) Q^T reconstructs M and Q is orthonormal
        let mut d = DMatrix::zeros(n, n);
        for k in 0..n {
            d[(k, k)] = lambdas[k];
        }
        let recon = &q * d * q.transpose();
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(recon[(i, j)], m[(i, j)], epsilon = 1e-9);
            }
        }
        let qtq = q.transpose() * &q;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(qtq[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mvn_sampling_moments() {
        use rand::SeedableRng;
        let mean = DVector::from_column_slice(&[1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s = sample_mvn(&mean, &cov, 40_000, &mut rng).unwrap();
        let m0 = s.column(0).mean();
        let m1 = s.column(1).mean();
        assert_relative_eq!(m0, 1.0, epsilon = 0.05);
        assert_relative_eq!(m1, -2.0, epsilon = 0.05);
        let c01: f64 = (0..40_000)
            .map(|p| (s[(p, 0)] - m0) * (s[(p, 1)] - m1))
            .sum::<f64>()
            / 40_000.0;
        assert_relative_eq!(c01, 0.6, epsilon = 0.05);
    }
}
