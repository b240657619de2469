//! Dense GP engine: works for any kernel/mean family, O(n^3) per likelihood
//! evaluation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, VoltError};
use crate::gp::GaussianPredictive;
use crate::opt::{adam_maximize, AdamConfig};

/// Observation noise never drops below this; keeps the train system
/// invertible when the fitted noise collapses.
pub const NOISE_FLOOR: f64 = 1e-8;

/// A kernel + mean family with a flat unconstrained parameter vector
/// (positive quantities are carried in log space).
pub trait GpPrior {
    fn n_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    fn param_names(&self) -> Vec<String>;

    fn mean(&self, times: &[f64]) -> DVector<f64>;
    fn cov(&self, a: &[f64], b: &[f64]) -> DMatrix<f64>;

    /// dK/d(param k) on the training grid; `None` means identically zero.
    fn cov_grad(&self, times: &[f64], k: usize) -> Option<DMatrix<f64>>;
    /// d mean / d(param k); `None` means identically zero.
    fn mean_grad(&self, times: &[f64], k: usize) -> Option<DVector<f64>>;
}

/// Exact GP regression model with fitted observation noise.
#[derive(Debug, Clone)]
pub struct GpModel<P: GpPrior> {
    pub prior: P,
    pub train_t: Vec<f64>,
    pub train_y: Vec<f64>,
    /// noise = NOISE_FLOOR + exp(log_noise)
    pub log_noise: f64,
}

fn chol_ladder(k: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    // The noise floor usually regularizes enough on its own; fall back to the
    // standard jitter ladder when it does not.
    for extra in [0.0, crate::linalg::JITTER, crate::linalg::JITTER_RETRY] {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += extra;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
    }
    Err(VoltError::NotPositiveDefinite { context })
}

impl<P: GpPrior> GpModel<P> {
    pub fn new(prior: P, train_t: Vec<f64>, train_y: Vec<f64>, noise_init: f64) -> Result<Self> {
        if train_t.len() != train_y.len() {
            return Err(VoltError::DimensionMismatch {
                context: "gp training data",
                expected: train_t.len(),
                got: train_y.len(),
            });
        }
        if noise_init <= NOISE_FLOOR {
            return Err(VoltError::NonPositive {
                context: "gp noise initialization",
                value: noise_init,
            });
        }
        Ok(GpModel {
            prior,
            train_t,
            train_y,
            log_noise: (noise_init - NOISE_FLOOR).ln(),
        })
    }

    pub fn noise(&self) -> f64 {
        NOISE_FLOOR + self.log_noise.exp()
    }

    pub fn n(&self) -> usize {
        self.train_t.len()
    }

    /// Full unconstrained parameter vector: prior params then log-noise.
    pub fn all_params(&self) -> Vec<f64> {
        let mut p = self.prior.params();
        p.push(self.log_noise);
        p
    }

    pub fn set_all_params(&mut self, p: &[f64]) {
        let np = self.prior.n_params();
        self.prior.set_params(&p[..np]);
        self.log_noise = p[np];
    }

    fn train_system(&self) -> Result<(Cholesky<f64, Dyn>, DVector<f64>, DVector<f64>)> {
        let mut k = self.prior.cov(&self.train_t, &self.train_t);
        let noise = self.noise();
        for i in 0..self.n() {
            k[(i, i)] += noise;
        }
        let chol = chol_ladder(&k, "gp train covariance")?;
        let r = DVector::from_column_slice(&self.train_y) - self.prior.mean(&self.train_t);
        let alpha = chol.solve(&r);
        Ok((chol, r, alpha))
    }

    /// Log marginal likelihood
    /// `-1/2 r^T (K+s I)^{-1} r - 1/2 log det(K+s I) - n/2 log 2 pi`.
    pub fn mll(&self) -> Result<f64> {
        if self.n() == 0 {
            return Ok(0.0);
        }
        let (chol, r, alpha) = self.train_system()?;
        let logdet = crate::linalg::chol_logdet(&chol);
        let n = self.n() as f64;
        Ok(-0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// MLL and its gradient with respect to `all_params`.
    ///
    /// Kernel parameters use the trace identity
    /// `d mll = 1/2 tr((alpha alpha^T - A^{-1}) dK)`; mean parameters
    /// contribute `alpha^T d mu`.
    pub fn mll_grad(&self) -> Result<(f64, Vec<f64>)> {
        let (chol, r, alpha) = self.train_system()?;
        let logdet = crate::linalg::chol_logdet(&chol);
        let n = self.n() as f64;
        let value =
            -0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

        let a_inv = chol.inverse();
        let np = self.prior.n_params();
        let mut grad = vec![0.0; np + 1];
        for k in 0..np {
            let mut g = 0.0;
            if let Some(dk) = self.prior.cov_grad(&self.train_t, k) {
                // 1/2 * [alpha^T dK alpha - tr(A^{-1} dK)]
                let da = &dk * &alpha;
                g += 0.5 * alpha.dot(&da);
                let mut tr = 0.0;
                for i in 0..self.n() {
                    for j in 0..self.n() {
                        tr += a_inv[(i, j)] * dk[(j, i)];
                    }
                }
                g -= 0.5 * tr;
            }
            if let Some(dm) = self.prior.mean_grad(&self.train_t, k) {
                g += alpha.dot(&dm);
            }
            grad[k] = g;
        }
        // noise parameter: dA/d(log_noise) = exp(log_noise) I
        let dn = self.log_noise.exp();
        let tr_inv: f64 = (0..self.n()).map(|i| a_inv[(i, i)]).sum();
        grad[np] = 0.5 * (alpha.dot(&alpha) - tr_inv) * dn;
        Ok((value, grad))
    }

    /// Posterior over query times; the prior when the training set is empty.
    pub fn predict(&self, query: &[f64]) -> Result<GaussianPredictive> {
        let mean_q = self.prior.mean(query);
        let k_qq = self.prior.cov(query, query);
        if self.n() == 0 {
            return Ok(GaussianPredictive {
                times: query.to_vec(),
                mean: mean_q,
                cov: k_qq,
            });
        }
        let (chol, _r, alpha) = self.train_system()?;
        let k_qt = self.prior.cov(query, &self.train_t);
        let mean = &mean_q + &k_qt * &alpha;
        let v = chol.solve(&k_qt.transpose());
        let mut cov = &k_qq - &k_qt * v;
        // symmetrize against rounding
        for i in 0..cov.nrows() {
            for j in (i + 1)..cov.ncols() {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        Ok(GaussianPredictive {
            times: query.to_vec(),
            mean,
            cov,
        })
    }
}

impl<P: GpPrior + Clone> GpModel<P> {
    /// Adam ascent of the marginal likelihood; returns the loss trace.
    pub fn fit(&mut self, cfg: AdamConfig) -> Result<Vec<f64>> {
        let init = self.all_params();
        let mut scratch = GpModel {
            prior: self.prior.clone(),
            train_t: self.train_t.clone(),
            train_y: self.train_y.clone(),
            log_noise: self.log_noise,
        };
        let (params, trace) = adam_maximize(
            |p| {
                scratch.set_all_params(p);
                scratch.mll_grad()
            },
            &init,
            cfg,
        )?;
        self.set_all_params(&params);
        Ok(trace)
    }
}

/// Matérn-5/2 kernel with a constant mean: the stationary baseline model.
/// Parameters: log lengthscale, log amplitude, mean level.
#[derive(Debug, Clone)]
pub struct MaternPrior {
    pub log_lengthscale: f64,
    pub log_amplitude: f64,
    pub mean_c: f64,
}

impl MaternPrior {
    pub fn new(lengthscale: f64, amplitude: f64, mean_c: f64) -> Result<Self> {
        if lengthscale <= 0.0 || amplitude <= 0.0 {
            return Err(VoltError::NonPositive {
                context: "matern hyperparameter",
                value: lengthscale.min(amplitude),
            });
        }
        Ok(MaternPrior {
            log_lengthscale: lengthscale.ln(),
            log_amplitude: amplitude.ln(),
            mean_c,
        })
    }

    fn scaled_dist(&self, a: f64, b: f64) -> f64 {
        5.0_f64.sqrt() * (a - b).abs() / self.log_lengthscale.exp()
    }
}

impl GpPrior for MaternPrior {
    fn n_params(&self) -> usize {
        3
    }

    fn params(&self) -> Vec<f64> {
        vec![self.log_lengthscale, self.log_amplitude, self.mean_c]
    }

    fn set_params(&mut self, p: &[f64]) {
        self.log_lengthscale = p[0];
        self.log_amplitude = p[1];
        self.mean_c = p[2];
    }

    fn param_names(&self) -> Vec<String> {
        vec!["log_lengthscale".into(), "log_amplitude".into(), "mean_c".into()]
    }

    fn mean(&self, times: &[f64]) -> DVector<f64> {
        DVector::from_element(times.len(), self.mean_c)
    }

    fn cov(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        let amp = self.log_amplitude.exp();
        DMatrix::from_fn(a.len(), b.len(), |i, j| {
            let s = self.scaled_dist(a[i], b[j]);
            amp * (1.0 + s + s * s / 3.0) * (-s).exp()
        })
    }

    fn cov_grad(&self, times: &[f64], k: usize) -> Option<DMatrix<f64>> {
        let amp = self.log_amplitude.exp();
        match k {
            // d/d log_ls: amp * s^2 (1+s) e^{-s} / 3
            0 => Some(DMatrix::from_fn(times.len(), times.len(), |i, j| {
                let s = self.scaled_dist(times[i], times[j]);
                amp * s * s * (1.0 + s) * (-s).exp() / 3.0
            })),
            1 => Some(self.cov(times, times)),
            _ => None,
        }
    }

    fn mean_grad(&self, times: &[f64], k: usize) -> Option<DVector<f64>> {
        (k == 2).then(|| DVector::from_element(times.len(), 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::grad_check;
    use approx::assert_relative_eq;

    /// Fixed SPD kernel over named points, for oracle comparisons.
    #[derive(Debug, Clone)]
    struct FixedKernel {
        points: Vec<f64>,
        k: DMatrix<f64>,
        mean: f64,
    }

    impl FixedKernel {
        fn idx(&self, t: f64) -> usize {
            self.points
                .iter()
                .position(|&p| (p - t).abs() < 1e-12)
                .expect("query not a known point")
        }
    }

    impl GpPrior for FixedKernel {
        fn n_params(&self) -> usize {
            0
        }
        fn params(&self) -> Vec<f64> {
            vec![]
        }
        fn set_params(&mut self, _p: &[f64]) {}
        fn param_names(&self) -> Vec<String> {
            vec![]
        }
        fn mean(&self, times: &[f64]) -> DVector<f64> {
            DVector::from_element(times.len(), self.mean)
        }
        fn cov(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
            DMatrix::from_fn(a.len(), b.len(), |i, j| {
                self.k[(self.idx(a[i]), self.idx(b[j]))]
            })
        }
        fn cov_grad(&self, _times: &[f64], _k: usize) -> Option<DMatrix<f64>> {
            None
        }
        fn mean_grad(&self, _times: &[f64], _k: usize) -> Option<DVector<f64>> {
            None
        }
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn mll_standard_normal_cases() {
        // n=1, k(t,t)=1, noise ~ 0, y = mean: density of N(0,1) at 0
        let prior = FixedKernel {
            points: vec![1.0],
            k: DMatrix::from_element(1, 1, 1.0),
            mean: 0.0,
        };
        let m = GpModel::new(prior.clone(), vec![1.0], vec![0.0], 2e-8).unwrap();
        assert_relative_eq!(m.mll().unwrap(), -0.9189385332046727, epsilon = 1e-7);

        // y - mean = 1: standard normal at 1
        let m = GpModel::new(prior, vec![1.0], vec![1.0], 2e-8).unwrap();
        assert_relative_eq!(m.mll().unwrap(), -0.9189385332046727 - 0.5, epsilon = 1e-6);
    }

    #[test]
    fn mll_matches_independent_dense_oracle() {
        // oracle: direct evaluation of the quadratic-form formula with a
        // generic inverse and determinant, no Cholesky
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5u64 {
            let n = 3;
            let k = random_spd(n, 100 + seed);
            let points = vec![1.0, 2.0, 3.0];
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise = 0.05;
            let m = GpModel::new(
                FixedKernel {
                    points: points.clone(),
                    k: k.clone(),
                    mean: 0.3,
                },
                points,
                y.clone(),
                noise,
            )
            .unwrap();

            let mut a = k.clone();
            for i in 0..n {
                a[(i, i)] += m.noise();
            }
            let a_inv = a.clone().try_inverse().unwrap();
            let r = DVector::from_column_slice(&y).add_scalar(-0.3);
            let quad = (r.transpose() * &a_inv * &r)[(0, 0)];
            let oracle = -0.5 * quad
                - 0.5 * a.determinant().ln()
                - 0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln();
            assert_relative_eq!(m.mll().unwrap(), oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn predict_matches_dense_conditioning_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let q = 3;
        let all = random_spd(n + q, 42);
        let points: Vec<f64> = (0..n + q).map(|i| i as f64 + 1.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = 0.1;
        let model = GpModel::new(
            FixedKernel {
                points: points.clone(),
                k: all.clone(),
                mean: 0.0,
            },
            points[..n].to_vec(),
            y.clone(),
            noise,
        )
        .unwrap();
        let pred = model.predict(&points[n..]).unwrap();

        // oracle: blockwise conditioning with generic inverse
        let ktt = all.view((0, 0), (n, n)).into_owned();
        let kqt = all.view((n, 0), (q, n)).into_owned();
        let kqq = all.view((n, n), (q, q)).into_owned();
        let mut a = ktt;
        for i in 0..n {
            a[(i, i)] += model.noise();
        }
        let a_inv = a.try_inverse().unwrap();
        let yv = DVector::from_column_slice(&y);
        let mean_o = &kqt * &a_inv * &yv;
        let cov_o = &kqq - &kqt * &a_inv * kqt.transpose();
        for i in 0..q {
            assert_relative_eq!(pred.mean[i], mean_o[i], epsilon = 1e-8);
            for j in 0..q {
                assert_relative_eq!(pred.cov[(i, j)], cov_o[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn predict_interpolates_training_points_when_noise_free() {
        let t: Vec<f64> = (1..=6).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| (x * 8.0).sin()).collect();
        let prior = MaternPrior::new(0.3, 1.0, 0.0).unwrap();
        let m = GpModel::new(prior, t.clone(), y.clone(), 2e-8).unwrap();
        let pred = m.predict(&t).unwrap();
        for i in 0..t.len() {
            assert_relative_eq!(pred.mean[i], y[i], epsilon = 1e-5);
            assert!(pred.cov[(i, i)] <= 1e-7, "var {}", pred.cov[(i, i)]);
        }
    }

    #[test]
    fn predict_empty_training_returns_prior() {
        let prior = MaternPrior::new(0.5, 2.0, 1.5).unwrap();
        let m = GpModel::new(prior.clone(), vec![], vec![], 1e-4).unwrap();
        let pred = m.predict(&[0.4, 0.9]).unwrap();
        assert_relative_eq!(pred.mean[0], 1.5);
        assert_relative_eq!(pred.cov[(0, 0)], 2.0);
        assert_relative_eq!(pred.cov[(0, 1)], prior.cov(&[0.4], &[0.9])[(0, 0)]);
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let t: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|x| (x * 5.0).cos()).collect();
        let prior = MaternPrior::new(0.2, 1.3, 0.0).unwrap();
        let m = GpModel::new(prior.clone(), t, y, 1e-4).unwrap();
        let query: Vec<f64> = (0..50).map(|i| 0.03 + i as f64 * 0.027).collect();
        let pred = m.predict(&query).unwrap();
        let prior_cov = prior.cov(&query, &query);
        for i in 0..query.len() {
            assert!(pred.cov[(i, i)] <= prior_cov[(i, i)] + 1e-10);
        }
    }

    #[test]
    fn mll_gradient_passes_grad_check() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let t: Vec<f64> = (1..=25).map(|i| i as f64 * 0.08).collect();
        let y: Vec<f64> = t.iter().map(|x| (x * 3.0).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let prior = MaternPrior::new(0.4, 0.8, 0.2).unwrap();
        let model = GpModel::new(prior, t, y, 1e-3).unwrap();
        let (_v, grad) = model.mll_grad().unwrap();
        let params = model.all_params();
        let mut scratch = model.clone();
        let err = grad_check(
            |p| {
                scratch.set_all_params(p);
                scratch.mll().unwrap()
            },
            &grad,
            &params,
            1e-5,
        );
        assert!(err <= 1e-4, "mll grad check error {err}");
    }

    #[test]
    fn fit_zero_variance_data_drives_noise_to_floor() {
        let t: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
        let y = vec![2.5; 30];
        let prior = MaternPrior::new(0.5, 1.0, 0.0).unwrap();
        let mut model = GpModel::new(prior, t, y, 1e-2).unwrap();
        let trace = model.fit(AdamConfig::new(800, 0.1)).unwrap();
        assert!(model.noise() < 1e-4, "noise {}", model.noise());
        assert_relative_eq!(model.prior.mean_c, 2.5, epsilon = 1e-2);
        // monotone over the trailing 100 steps within tolerance
        let tail = &trace[trace.len() - 100..];
        for w in tail.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "mll decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_zero_steps_keeps_hypers() {
        let t = vec![0.1, 0.2, 0.3];
        let y = vec![1.0, 2.0, 1.5];
        let prior = MaternPrior::new(0.5, 1.0, 0.0).unwrap();
        let mut model = GpModel::new(prior, t, y, 1e-4).unwrap();
        let before = model.all_params();
        model.fit(AdamConfig::new(0, 0.1)).unwrap();
        assert_eq!(model.all_params(), before);
    }

    #[test]
    fn one_step_predictive_decomposition_matches_mll() {
        // chain rule of Gaussians: sum_i log p(y_i | y_{<i}) equals the mll
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let t: Vec<f64> = (1..=8).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let prior = MaternPrior::new(0.35, 1.1, 0.1).unwrap();
        let model = GpModel::new(prior.clone(), t.clone(), y.clone(), 5e-3).unwrap();
        let mll = model.mll().unwrap();

        let mut acc = 0.0;
        for i in 0..t.len() {
            let sub = GpModel::new(prior.clone(), t[..i].to_vec(), y[..i].to_vec(), 5e-3).unwrap();
            let pred = sub.predict(&t[i..=i]).unwrap();
            let var = pred.cov[(0, 0)] + sub.noise();
            let resid = y[i] - pred.mean[0];
            acc += -0.5 * (resid * resid / var)
                - 0.5 * var.ln()
                - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        assert_relative_eq!(acc, mll, epsilon = 1e-8);
    }
}
