//! Multi-task GP over log volatility: intrinsic coregionalization.
//!
//! The joint covariance over `P` tasks and `T` times is
//! `sigma^2 (K_p ⊗ B) + noise I` with `B` the Brownian Gram matrix on the
//! uniform grid and `K_p` a `P x P` intertask covariance (rank-one-plus-
//! diagonal and LKJ-regularized, geodesic, or fixed). The uniform grid gives
//! `B` an analytic discrete-sine eigendecomposition, and `K_p` is tiny, so
//! the marginal likelihood and its gradients cost O(P^2 T + P^3) per step
//! after a one-time O(T^2) basis materialization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::gp::exact::NOISE_FLOOR;
use crate::gpcv::multi::IntertaskSpec;
use crate::kernels::{lkj_log_prior, to_correlation, IntertaskCovariance};
use crate::linalg::{chol_ladder, min_matrix_eigen};
use crate::opt::{adam_maximize, AdamConfig};
use crate::rng::stream_rng;
use crate::timeseries::TimeGrid;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum TaskCovState {
    Fixed(Vec<Vec<f64>>),
    RankOnePlusDiag {
        a: Vec<f64>,
        log_d: Vec<f64>,
        eta: f64,
    },
    Geodesic {
        coords: Vec<[f64; 3]>,
        log_sigma: f64,
    },
}

impl TaskCovState {
    fn from_spec(spec: &IntertaskSpec, p: usize) -> Result<Self> {
        Ok(match spec {
            IntertaskSpec::Fixed(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(VoltError::DimensionMismatch {
                        context: "fixed intertask matrix",
                        expected: p,
                        got: rows.len(),
                    });
                }
                TaskCovState::Fixed(rows.clone())
            }
            IntertaskSpec::RankOnePlusDiag { eta } => TaskCovState::RankOnePlusDiag {
                a: vec![0.3; p],
                log_d: vec![0.91_f64.ln(); p],
                eta: *eta,
            },
            IntertaskSpec::Geodesic { coords, sigma_init } => {
                if coords.len() != p {
                    return Err(VoltError::DimensionMismatch {
                        context: "geodesic coordinates",
                        expected: p,
                        got: coords.len(),
                    });
                }
                TaskCovState::Geodesic {
                    coords: coords.clone(),
                    log_sigma: sigma_init.ln(),
                }
            }
        })
    }

    fn n_params(&self, p: usize) -> usize {
        match self {
            TaskCovState::Fixed(_) => 0,
            TaskCovState::RankOnePlusDiag { .. } => 2 * p,
            TaskCovState::Geodesic { .. } => 1,
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            TaskCovState::Fixed(_) => vec![],
            TaskCovState::RankOnePlusDiag { a, log_d, .. } => {
                let mut v = a.clone();
                v.extend_from_slice(log_d);
                v
            }
            TaskCovState::Geodesic { log_sigma, .. } => vec![*log_sigma],
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            TaskCovState::Fixed(_) => {}
            TaskCovState::RankOnePlusDiag { a, log_d, .. } => {
                let n = a.len();
                a.copy_from_slice(&p[..n]);
                log_d.copy_from_slice(&p[n..2 * n]);
            }
            TaskCovState::Geodesic { log_sigma, .. } => *log_sigma = p[0],
        }
    }

    fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            TaskCovState::Fixed(rows) => Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j])),
            TaskCovState::RankOnePlusDiag { a, log_d, .. } => {
                let cov =
                    IntertaskCovariance::new(a.clone(), log_d.iter().map(|x| x.exp()).collect())?;
                Ok(cov.matrix())
            }
            TaskCovState::Geodesic { coords, log_sigma } => {
                let sigma = log_sigma.exp();
                let mut m = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in 0..p {
                        m[(i, j)] = crate::kernels::geodesic_cov(coords[i], coords[j], sigma)?;
                    }
                }
                Ok(m)
            }
        }
    }
}

/// ICM GP over per-task log-volatility series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtVolGp {
    pub grid: TimeGrid,
    /// Row per task: log annualized volatility.
    pub y: Vec<Vec<f64>>,
    /// Per-task constant mean level.
    pub c: Vec<f64>,
    pub log_sigma2: f64,
    pub log_noise: f64,
    /// Include the per-task drift `-t sigma^2 K_p[q,q] / 2` in the mean.
    pub tied_drift: bool,
    pub(crate) taskcov: TaskCovState,
}

/// Cached discrete-sine basis of the Brownian Gram matrix.
struct Basis {
    /// Eigenvalues of B = dt * M.
    lam_b: Vec<f64>,
    /// Orthonormal eigenvectors (columns).
    qb: DMatrix<f64>,
    /// Y rotated: row per task, times Q_B.
    y_qb: DMatrix<f64>,
    /// 1^T Q_B and t^T Q_B.
    one_qb: Vec<f64>,
    t_qb: Vec<f64>,
}

impl MtVolGp {
    pub fn new(
        grid: TimeGrid,
        y: Vec<Vec<f64>>,
        spec: &IntertaskSpec,
        noise_init: f64,
        tied_drift: bool,
    ) -> Result<Self> {
        let p = y.len();
        if p == 0 {
            return Err(VoltError::invalid_param("panel", "need at least one task"));
        }
        let t = grid.len();
        if y.iter().any(|row| row.len() != t) {
            return Err(VoltError::DimensionMismatch {
                context: "mt vol gp data",
                expected: t,
                got: y.iter().map(|r| r.len()).min().unwrap_or(0),
            });
        }
        if noise_init <= NOISE_FLOOR {
            return Err(VoltError::NonPositive {
                context: "mt vol gp noise",
                value: noise_init,
            });
        }
        let c: Vec<f64> = y
            .iter()
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        Ok(MtVolGp {
            grid,
            y,
            c,
            log_sigma2: 0.0,
            log_noise: (noise_init - NOISE_FLOOR).ln(),
            tied_drift,
            taskcov: TaskCovState::from_spec(spec, p)?,
        })
    }

    pub fn p(&self) -> usize {
        self.y.len()
    }

    pub fn t_len(&self) -> usize {
        self.grid.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn noise(&self) -> f64 {
        NOISE_FLOOR + self.log_noise.exp()
    }

    pub fn task_cov(&self) -> Result<DMatrix<f64>> {
        self.taskcov.matrix(self.p())
    }

    pub fn task_correlation(&self) -> Result<DMatrix<f64>> {
        Ok(to_correlation(&self.task_cov()?))
    }

    fn basis(&self) -> Basis {
        let t = self.t_len();
        let dt = self.grid.dt();
        let (lam_m, qb) = min_matrix_eigen(t);
        let lam_b: Vec<f64> = lam_m.iter().map(|l| l * dt).collect();
        let p = self.p();
        let mut y_mat = DMatrix::zeros(p, t);
        for q in 0..p {
            for i in 0..t {
                y_mat[(q, i)] = self.y[q][i];
            }
        }
        let y_qb = &y_mat * &qb;
        let ones = nalgebra::DVector::from_element(t, 1.0);
        let tv = nalgebra::DVector::from_column_slice(&self.grid.times());
        let one_qb = (qb.transpose() * ones).iter().cloned().collect();
        let t_qb = (qb.transpose() * tv).iter().cloned().collect();
        Basis {
            lam_b,
            qb,
            y_qb,
            one_qb,
            t_qb,
        }
    }

    fn pack_params(&self) -> Vec<f64> {
        let mut out = self.c.clone();
        out.push(self.log_sigma2);
        out.push(self.log_noise);
        out.extend(self.taskcov.params());
        out
    }

    fn unpack_params(&mut self, params: &[f64]) {
        let p = self.p();
        self.c.copy_from_slice(&params[..p]);
        self.log_sigma2 = params[p];
        self.log_noise = params[p + 1];
        let ni = self.taskcov.n_params(p);
        self.taskcov.set_params(&params[p + 2..p + 2 + ni]);
    }

    pub fn packed_params(&self) -> Vec<f64> {
        self.pack_params()
    }

    pub fn set_packed_params(&mut self, p: &[f64]) {
        self.unpack_params(p);
    }

    pub fn mll(&self) -> Result<f64> {
        let basis = self.basis();
        self.mll_grad_with(&basis, false).map(|(v, _)| v)
    }

    pub fn mll_with_grad(&self) -> Result<(f64, Vec<f64>)> {
        let basis = self.basis();
        self.mll_grad_with(&basis, true)
    }

    /// Objective = MLL plus the LKJ log prior when the task covariance is
    /// free-form.
    fn mll_grad_with(&self, basis: &Basis, want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let p = self.p();
        let t = self.t_len();
        let s2 = self.sigma2();
        let noise = self.noise();
        let kp = self.taskcov.matrix(p)?;
        let eig = kp.clone().symmetric_eigen();
        let qx = eig.eigenvectors;
        let lam_x = eig.eigenvalues;
        if lam_x.iter().any(|&l| l <= 0.0) {
            return Err(VoltError::NotPositiveDefinite {
                context: "mt vol task covariance",
            });
        }

        // rotated residual R~ = Qx^T (Y - mean) Q_B, assembled from the
        // cached rotations of Y, 1 and t
        let rates: Vec<f64> = (0..p)
            .map(|q| {
                if self.tied_drift {
                    s2 * kp[(q, q)] / 2.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut r_qb = basis.y_qb.clone();
        for q in 0..p {
            for j in 0..t {
                r_qb[(q, j)] -= self.c[q] * basis.one_qb[j] - rates[q] * basis.t_qb[j];
            }
        }
        let r_tilde = qx.transpose() * &r_qb;

        let mut quad = 0.0;
        let mut logdet = 0.0;
        let mut alpha_tilde = DMatrix::zeros(p, t);
        for q in 0..p {
            for j in 0..t {
                let lam = s2 * lam_x[q] * basis.lam_b[j] + noise;
                let a = r_tilde[(q, j)] / lam;
                alpha_tilde[(q, j)] = a;
                quad += r_tilde[(q, j)] * a;
                logdet += lam.ln();
            }
        }
        let mll = -0.5 * quad - 0.5 * logdet
            - 0.5 * (p * t) as f64 * (2.0 * std::f64::consts::PI).ln();

        let lkj = match &self.taskcov {
            TaskCovState::RankOnePlusDiag { eta, .. } => lkj_log_prior(&to_correlation(&kp), *eta)?,
            _ => 0.0,
        };
        let value = mll + lkj;
        if !value.is_finite() {
            return Err(VoltError::NonFinite("mt vol gp mll"));
        }
        if !want_grad {
            return Ok((value, vec![]));
        }

        // alpha in natural coordinates (P x T), and its rotation back in time
        // only (for mean-parameter gradients)
        let alpha_qx = &qx * &alpha_tilde; // P x T, still in the Q_B time basis
        let alpha = &alpha_qx * basis.qb.transpose();

        let mut grad = Vec::with_capacity(self.pack_params().len());
        // c_q: alpha^T dmean/dc_q, dmean = e_q (x) 1
        for q in 0..p {
            grad.push((0..t).map(|i| alpha[(q, i)]).sum());
        }
        // log sigma2: kernel part + tied drift mean part
        let mut g_psi = 0.0;
        for q in 0..p {
            for j in 0..t {
                let dk = s2 * lam_x[q] * basis.lam_b[j];
                let lam = dk + noise;
                g_psi += 0.5 * (alpha_tilde[(q, j)] * alpha_tilde[(q, j)] - 1.0 / lam) * dk;
            }
        }
        if self.tied_drift {
            for q in 0..p {
                let rate = s2 * kp[(q, q)] / 2.0;
                g_psi -= rate * (0..t).map(|i| alpha[(q, i)] * self.grid.time(i)).sum::<f64>();
            }
        }
        grad.push(g_psi);
        // log noise
        let mut g_noise = 0.0;
        for q in 0..p {
            for j in 0..t {
                let lam = s2 * lam_x[q] * basis.lam_b[j] + noise;
                g_noise += 0.5 * (alpha_tilde[(q, j)] * alpha_tilde[(q, j)] - 1.0 / lam);
            }
        }
        grad.push(g_noise * self.log_noise.exp());

        // task covariance parameters via the trace weight dMLL/dKp
        let ni = self.taskcov.n_params(p);
        if ni > 0 {
            // quadratic part: sigma2/2 * alpha B alpha^T, with B applied in
            // its eigenbasis
            let mut abat = DMatrix::zeros(p, p);
            for a in 0..p {
                for b in 0..p {
                    let mut acc = 0.0;
                    for j in 0..t {
                        acc += alpha_qx[(a, j)] * basis.lam_b[j] * alpha_qx[(b, j)];
                    }
                    abat[(a, b)] = acc;
                }
            }
            let mut g_total = abat * (0.5 * s2);
            // trace part: -sigma2/2 * Qx diag(sum_j lam_b/Lam) Qx^T
            let mut h = vec![0.0; p];
            for q in 0..p {
                for j in 0..t {
                    let lam = s2 * lam_x[q] * basis.lam_b[j] + noise;
                    h[q] += basis.lam_b[j] / lam;
                }
            }
            for a in 0..p {
                for b in 0..p {
                    let mut acc = 0.0;
                    for q in 0..p {
                        acc += qx[(a, q)] * h[q] * qx[(b, q)];
                    }
                    g_total[(a, b)] -= 0.5 * s2 * acc;
                }
            }
            // tied drift: dmean[q,i]/dKp_qq = -t_i sigma2 / 2
            if self.tied_drift {
                for q in 0..p {
                    let w: f64 = (0..t)
                        .map(|i| alpha[(q, i)] * (-self.grid.time(i) * s2 / 2.0))
                        .sum();
                    g_total[(q, q)] += w;
                }
            }
            if let TaskCovState::RankOnePlusDiag { eta, .. } = &self.taskcov {
                let kp_inv = chol_ladder(&kp, "task covariance")?.inverse();
                let mut gl = kp_inv * (*eta - 1.0);
                for q in 0..p {
                    gl[(q, q)] -= (*eta - 1.0) / kp[(q, q)];
                }
                g_total += gl;
            }
            match &self.taskcov {
                TaskCovState::RankOnePlusDiag { a, log_d, .. } => {
                    let av = nalgebra::DVector::from_column_slice(a);
                    let ga = &g_total * &av;
                    for l in 0..p {
                        grad.push(2.0 * ga[l]);
                    }
                    for l in 0..p {
                        grad.push(g_total[(l, l)] * log_d[l].exp());
                    }
                }
                TaskCovState::Geodesic { coords, log_sigma } => {
                    let sg = log_sigma.exp();
                    let mut gv = 0.0;
                    for i in 0..p {
                        for j in 0..p {
                            let dotp = (coords[i][0] * coords[j][0]
                                + coords[i][1] * coords[j][1]
                                + coords[i][2] * coords[j][2])
                                .clamp(-1.0, 1.0);
                            gv += g_total[(i, j)] * kp[(i, j)] * dotp.acos() / (sg * sg);
                        }
                    }
                    grad.push(gv);
                }
                TaskCovState::Fixed(_) => {}
            }
        }
        Ok((value, grad))
    }

    pub fn fit(&mut self, cfg: AdamConfig) -> Result<Vec<f64>> {
        let basis = self.basis();
        let init = self.pack_params();
        let mut scratch = self.clone();
        let (params, trace) = adam_maximize(
            |pv| {
                scratch.unpack_params(pv);
                scratch.mll_grad_with(&basis, true)
            },
            &init,
            cfg,
        )?;
        self.unpack_params(&params);
        Ok(trace)
    }

    /// Joint posterior law over the next `h` steps for all tasks.
    pub fn future_law(&self, h: usize) -> Result<MtVolFutureLaw> {
        let p = self.p();
        let t = self.t_len();
        let s2 = self.sigma2();
        let noise = self.noise();
        let dt = self.grid.dt();
        let basis = self.basis();
        let kp = self.taskcov.matrix(p)?;
        let eig = kp.clone().symmetric_eigen();
        let qx = eig.eigenvectors;
        let lam_x = eig.eigenvalues;

        let rates: Vec<f64> = (0..p)
            .map(|q| {
                if self.tied_drift {
                    s2 * kp[(q, q)] / 2.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut r_qb = basis.y_qb.clone();
        for q in 0..p {
            for j in 0..t {
                r_qb[(q, j)] -= self.c[q] * basis.one_qb[j] - rates[q] * basis.t_qb[j];
            }
        }
        let r_tilde = qx.transpose() * &r_qb;
        let mut alpha_tilde = DMatrix::zeros(p, t);
        for q in 0..p {
            for j in 0..t {
                let lam = s2 * lam_x[q] * basis.lam_b[j] + noise;
                alpha_tilde[(q, j)] = r_tilde[(q, j)] / lam;
            }
        }
        let alpha = &qx * &alpha_tilde * basis.qb.transpose();

        // level correction per task: kappa_q = sigma2 sum_p Kp[q,p] <t, alpha_p>
        let tv = self.grid.times();
        let t_dot_alpha: Vec<f64> = (0..p)
            .map(|q| (0..t).map(|i| tv[i] * alpha[(q, i)]).sum())
            .collect();
        let mut kappa = vec![0.0; p];
        for q in 0..p {
            for b in 0..p {
                kappa[q] += s2 * kp[(q, b)] * t_dot_alpha[b];
            }
        }

        // level covariance: sigma2 t_n Kp - C, with
        // C[q,q'] = sigma4 (Kp e_q (x) t)^T (K + nI)^{-1} (Kp e_q' (x) t)
        let t_qb_v = nalgebra::DVector::from_column_slice(&basis.t_qb);
        let mut c_mat = DMatrix::zeros(p, p);
        // rotated RHS for task q: (Qx^T Kp e_q) outer (Qb^T t)
        let qx_kp = qx.transpose() * &kp;
        for q in 0..p {
            for q2 in 0..p {
                let mut acc = 0.0;
                for a in 0..p {
                    for j in 0..t {
                        let lam = s2 * lam_x[a] * basis.lam_b[j] + noise;
                        acc += qx_kp[(a, q)] * t_qb_v[j] * qx_kp[(a, q2)] * t_qb_v[j] / lam;
                    }
                }
                c_mat[(q, q2)] = s2 * s2 * acc;
            }
        }
        let t_last = self.grid.time(t - 1);
        let mut level_cov = kp.clone() * (s2 * t_last) - c_mat;
        // guard tiny negative rounding
        for q in 0..p {
            level_cov[(q, q)] = level_cov[(q, q)].max(0.0);
        }
        let level_chol = chol_ladder(&level_cov, "mt vol level covariance")?.l();
        let incr_chol = chol_ladder(&kp, "task covariance")?.l() * (s2 * dt).sqrt();

        let means: Vec<Vec<f64>> = (0..p)
            .map(|q| {
                self.grid
                    .future_times(h)
                    .iter()
                    .map(|tf| self.c[q] - tf * rates[q] + kappa[q])
                    .collect()
            })
            .collect();
        Ok(MtVolFutureLaw {
            means,
            level_chol,
            incr_chol,
        })
    }
}

/// Joint posterior of all tasks' future log volatility: a correlated level
/// plus correlated Brownian increments.
#[derive(Debug, Clone)]
pub struct MtVolFutureLaw {
    /// Per task, per step: prior mean plus level correction.
    pub means: Vec<Vec<f64>>,
    pub level_chol: DMatrix<f64>,
    pub incr_chol: DMatrix<f64>,
}

impl MtVolFutureLaw {
    pub fn p(&self) -> usize {
        self.means.len()
    }

    pub fn horizon(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    /// One joint draw of annualized volatility paths for all tasks.
    ///
    /// Task `q` consumes stream `path * P + q`, one normal for the level and
    /// one per step, mixed across tasks through the Cholesky factors — with
    /// an identity task covariance each task's path depends only on its own
    /// stream.
    pub fn sample(&self, seed: u64, path: usize) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        let p = self.p();
        let h = self.horizon();
        let mut rngs: Vec<_> = (0..p)
            .map(|q| stream_rng(seed, (path * p + q) as u64))
            .collect();
        let eta0: Vec<f64> = rngs
            .iter_mut()
            .map(|r| StandardNormal.sample(r))
            .collect();
        let mut acc: Vec<f64> = (0..p)
            .map(|q| (0..p).map(|b| self.level_chol[(q, b)] * eta0[b]).sum())
            .collect();
        let mut out = vec![Vec::with_capacity(h); p];
        for step in 0..h {
            let eta: Vec<f64> = rngs
                .iter_mut()
                .map(|r| StandardNormal.sample(r))
                .collect();
            for q in 0..p {
                let incr: f64 = (0..p).map(|b| self.incr_chol[(q, b)] * eta[b]).sum();
                acc[q] += incr;
                out[q].push((self.means[q][step] + acc[q]).exp());
            }
        }
        out
    }
}
