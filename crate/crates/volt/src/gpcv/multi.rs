//! Multi-task GPCV with Kronecker-structured variational inference.
//!
//! The latent processes of `P` tasks share the temporal Brownian kernel and
//! are coupled by a `P x P` intertask covariance:
//! `k([t,p],[t',p']) = K_v(t,t') K_i(p,p')`. The variational posterior is
//! Kronecker, `q(u) = N(m, S_x ⊗ S_t)`, with inducing points fixed to the
//! training times; the latent marginal of task `p` at time `i` is
//! `N(m[p,i], S_x[p,p] S_t[i,i])` and the KL factors through Kronecker
//! identities, so each optimizer step costs O(T^2 + P^3 + P^2 T).
//!
//! `S_x` is pinned to 1 when `P = 1`, which makes the single-task reduction
//! exact: the P=1 model has the same parameters, ELBO and gradients as
//! [`GpcvModel`].
//!
//! A free-form `K_i` is parameterized rank-one-plus-diagonal and regularized
//! with an LKJ prior on its correlation; spatial tasks can instead derive
//! `K_i` from a geodesic exponential kernel over unit-sphere coordinates
//! with a fitted lengthscale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::gpcv::{
    expected_loglik, init_mean, laplace_cov, tridiag_times_lower, CholParam, GpcvModel,
};
use crate::kernels::{geodesic_cov, lkj_log_prior, to_correlation, IntertaskCovariance};
use crate::linalg::{chol_ladder, MinGram};
use crate::opt::{adam_maximize, AdamConfig};
use crate::rng::stream_rng;
use crate::timeseries::{ReturnSeries, TimeGrid, VolUnit, VolatilityPath};

/// How the intertask covariance is built and (possibly) learned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum IntertaskSpec {
    /// Fixed matrix; no parameters are fitted.
    Fixed(Vec<Vec<f64>>),
    /// `K_i = a a^T + diag(d)`, fitted, LKJ-regularized with strength `eta`.
    RankOnePlusDiag { eta: f64 },
    /// Geodesic exponential kernel over unit-sphere coordinates with a
    /// fitted lengthscale.
    Geodesic {
        coords: Vec<[f64; 3]>,
        sigma_init: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum IntertaskState {
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

impl IntertaskState {
    fn n_params(&self, p: usize) -> usize {
        match self {
            IntertaskState::Fixed(_) => 0,
            IntertaskState::RankOnePlusDiag { .. } => 2 * p,
            IntertaskState::Geodesic { .. } => 1,
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            IntertaskState::Fixed(_) => vec![],
            IntertaskState::RankOnePlusDiag { a, log_d, .. } => {
                let mut v = a.clone();
                v.extend_from_slice(log_d);
                v
            }
            IntertaskState::Geodesic { log_sigma, .. } => vec![*log_sigma],
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            IntertaskState::Fixed(_) => {}
            IntertaskState::RankOnePlusDiag { a, log_d, .. } => {
                let n = a.len();
                a.copy_from_slice(&p[..n]);
                log_d.copy_from_slice(&p[n..2 * n]);
            }
            IntertaskState::Geodesic { log_sigma, .. } => *log_sigma = p[0],
        }
    }

    fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            IntertaskState::Fixed(rows) => Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j])),
            IntertaskState::RankOnePlusDiag { a, log_d, .. } => {
                let cov =
                    IntertaskCovariance::new(a.clone(), log_d.iter().map(|x| x.exp()).collect())?;
                Ok(cov.matrix())
            }
            IntertaskState::Geodesic { coords, log_sigma } => {
                let sigma = log_sigma.exp();
                let mut m = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in 0..p {
                        m[(i, j)] = geodesic_cov(coords[i], coords[j], sigma)?;
                    }
                }
                Ok(m)
            }
        }
    }
}

/// Multi-task GPCV model over a complete `P x T` return panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtGpcvModel {
    pub times: Vec<f64>,
    /// Row `p` holds task `p`'s returns.
    pub returns: Vec<Vec<f64>>,
    pub dt: f64,
    pub c: f64,
    pub log_sigma2: f64,
    /// Variational mean, row per task.
    pub(crate) m_rows: Vec<Vec<f64>>,
    pub(crate) l_t: CholParam,
    /// Intertask variational factor; pinned to 1 when `P == 1`.
    pub(crate) l_x: Option<CholParam>,
    pub(crate) intertask: IntertaskState,
}

impl MtGpcvModel {
    pub fn p(&self) -> usize {
        self.returns.len()
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    /// Current intertask covariance matrix.
    pub fn intertask_matrix(&self) -> Result<DMatrix<f64>> {
        self.intertask.matrix(self.p())
    }

    /// Intertask covariance normalized to unit diagonal.
    pub fn intertask_correlation(&self) -> Result<DMatrix<f64>> {
        Ok(to_correlation(&self.intertask_matrix()?))
    }

    pub fn s_x_matrix(&self) -> DMatrix<f64> {
        match &self.l_x {
            None => DMatrix::identity(1, 1),
            Some(lx) => {
                let l = lx.to_matrix();
                &l * l.transpose()
            }
        }
    }

    pub fn s_t_matrix(&self) -> DMatrix<f64> {
        let l = self.l_t.to_matrix();
        &l * l.transpose()
    }

    /// Marginal latent means and variances of one task.
    pub fn task_marginals(&self, q: usize) -> (Vec<f64>, Vec<f64>) {
        let l_t = self.l_t.to_matrix();
        let sx = self.s_x_matrix();
        let vars: Vec<f64> = (0..self.t_len())
            .map(|i| sx[(q, q)] * (0..=i).map(|k| l_t[(i, k)] * l_t[(i, k)]).sum::<f64>())
            .collect();
        (self.m_rows[q].clone(), vars)
    }

    fn pack_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for row in &self.m_rows {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.l_t.raw);
        if let Some(lx) = &self.l_x {
            out.extend_from_slice(&lx.raw);
        }
        out.push(self.c);
        out.push(self.log_sigma2);
        out.extend(self.intertask.params());
        out
    }

    fn unpack_params(&mut self, params: &[f64]) {
        let (p, t) = (self.p(), self.t_len());
        let mut k = 0;
        for row in self.m_rows.iter_mut() {
            row.copy_from_slice(&params[k..k + t]);
            k += t;
        }
        let nt = CholParam::n_entries(t);
        self.l_t.raw.copy_from_slice(&params[k..k + nt]);
        k += nt;
        if let Some(lx) = &mut self.l_x {
            let nx = CholParam::n_entries(p);
            lx.raw.copy_from_slice(&params[k..k + nx]);
            k += nx;
        }
        self.c = params[k];
        self.log_sigma2 = params[k + 1];
        k += 2;
        let ni = self.intertask.n_params(p);
        self.intertask.set_params(&params[k..k + ni]);
    }

    /// Kronecker ELBO, including the LKJ penalty for free-form intertask
    /// covariances.
    pub fn elbo(&self) -> Result<f64> {
        self.elbo_grad(false).map(|(v, _)| v)
    }

    pub fn elbo_with_grad(&self) -> Result<(f64, Vec<f64>)> {
        self.elbo_grad(true)
    }

    fn elbo_grad(&self, want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let p = self.p();
        let t = self.t_len();
        let s2 = self.sigma2();
        let base = MinGram::from_cum(&self.times)?;
        let t0 = base.precision();
        let l_t = self.l_t.to_matrix();
        let l_x = self.l_x.as_ref().map(|lx| lx.to_matrix());

        let kx = self.intertask.matrix(p)?;
        let kx_chol = chol_ladder(&kx, "intertask covariance")?;
        let kx_inv = kx_chol.inverse();
        let log_det_kx = crate::linalg::chol_logdet(&kx_chol);

        // variational marginal factors
        let st_diag: Vec<f64> = (0..t)
            .map(|i| (0..=i).map(|j| l_t[(i, j)] * l_t[(i, j)]).sum())
            .collect();
        let sx_diag: Vec<f64> = match &l_x {
            None => vec![1.0],
            Some(lx) => (0..p)
                .map(|q| (0..=q).map(|j| lx[(q, j)] * lx[(q, j)]).sum())
                .collect(),
        };

        // expected log-likelihood
        let mut ell = 0.0;
        let mut dell_dm = vec![vec![0.0; t]; p];
        let mut dell_dvar = vec![vec![0.0; t]; p];
        for q in 0..p {
            for i in 0..t {
                let w = self.returns[q][i];
                let var = sx_diag[q] * st_diag[i];
                ell += expected_loglik(self.m_rows[q][i], var, w);
                if want_grad {
                    let e = if w == 0.0 {
                        0.0
                    } else {
                        w * w * (-2.0 * self.m_rows[q][i] + 2.0 * var).exp()
                    };
                    dell_dm[q][i] = -1.0 + e;
                    dell_dvar[q][i] = -e;
                }
            }
        }
        if !ell.is_finite() {
            return Err(VoltError::NonFinite("mt gpcv expected log-likelihood"));
        }

        // D = mu0 - m, row per task; mu0[q][i] = c - tau_i sigma2 Kx[q,q]/2
        let mut d = vec![vec![0.0; t]; p];
        for q in 0..p {
            let rate = s2 * kx[(q, q)] / 2.0;
            for i in 0..t {
                d[q][i] = self.c - self.times[i] * rate - self.m_rows[q][i];
            }
        }
        let dt0: Vec<Vec<f64>> = d.iter().map(|row| t0.mul_vec(row)).collect();
        // M = D T0 D^T (P x P)
        let mut m_mat = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                m_mat[(a, b)] = dot(&dt0[a], &d[b]);
            }
        }
        let quad = (kx_inv.clone() * &m_mat).trace() / s2;

        let t0_lt = tridiag_times_lower(&t0, &l_t);
        let mut tr_t0_st = 0.0;
        for i in 0..t {
            for j in 0..=i {
                tr_t0_st += t0_lt[(i, j)] * l_t[(i, j)];
            }
        }
        let trt = tr_t0_st / s2;
        let s_x = self.s_x_matrix();
        let trx = (kx_inv.clone() * &s_x).trace();
        let log_det_st: f64 = (0..t).map(|i| 2.0 * l_t[(i, i)].ln()).sum();
        let log_det_sx: f64 = match &l_x {
            None => 0.0,
            Some(lx) => (0..p).map(|q| 2.0 * lx[(q, q)].ln()).sum(),
        };
        let log_det_kt = t as f64 * s2.ln() + base.logdet();

        let kl = 0.5
            * (trx * trt + quad - (p * t) as f64
                + t as f64 * log_det_kx
                + p as f64 * log_det_kt
                - t as f64 * log_det_sx
                - p as f64 * log_det_st);

        // LKJ penalty on the correlation of a free-form Kx
        let lkj = match &self.intertask {
            IntertaskState::RankOnePlusDiag { eta, .. } => {
                lkj_log_prior(&to_correlation(&kx), *eta)?
            }
            _ => 0.0,
        };

        let value = ell - kl + lkj;
        if !value.is_finite() {
            return Err(VoltError::NonFinite("mt gpcv elbo"));
        }
        if !want_grad {
            return Ok((value, vec![]));
        }

        // --- gradients ---
        // W = dKL/dD = Kx^{-1} D T0 / sigma2
        let mut w_mat = vec![vec![0.0; t]; p];
        for a in 0..p {
            for i in 0..t {
                let mut acc = 0.0;
                for b in 0..p {
                    acc += kx_inv[(a, b)] * dt0[b][i];
                }
                w_mat[a][i] = acc / s2;
            }
        }

        let mut grad = Vec::with_capacity(self.pack_params().len());
        // m
        for q in 0..p {
            for i in 0..t {
                grad.push(dell_dm[q][i] + w_mat[q][i]);
            }
        }
        // L_t
        let et: Vec<f64> = (0..t)
            .map(|i| (0..p).map(|q| dell_dvar[q][i] * sx_diag[q]).sum())
            .collect();
        let mut dlt = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..=i {
                let mut g = 2.0 * et[i] * l_t[(i, j)] - trx * t0_lt[(i, j)] / s2;
                if i == j {
                    g += p as f64 / l_t[(i, i)];
                }
                dlt[(i, j)] = g;
            }
        }
        grad.extend(self.l_t.grad_to_raw(&dlt));
        // L_x
        if let Some(lx_param) = &self.l_x {
            let lx = l_x.as_ref().unwrap();
            let ex: Vec<f64> = (0..p)
                .map(|q| (0..t).map(|i| dell_dvar[q][i] * st_diag[i]).sum())
                .collect();
            let kxinv_lx = &kx_inv * lx;
            let mut dlx = DMatrix::zeros(p, p);
            for q in 0..p {
                for j in 0..=q {
                    let mut g = 2.0 * ex[q] * lx[(q, j)] - trt * kxinv_lx[(q, j)];
                    if q == j {
                        g += t as f64 / lx[(q, q)];
                    }
                    dlx[(q, j)] = g;
                }
            }
            grad.extend(lx_param.grad_to_raw(&dlx));
        }
        // c: dELBO/dmu0 = -W summed
        let w_total: f64 = w_mat.iter().map(|row| row.iter().sum::<f64>()).sum();
        grad.push(-w_total);
        // log sigma2
        let drift: f64 = (0..p)
            .map(|q| {
                let rate = s2 * kx[(q, q)] / 2.0;
                (0..t)
                    .map(|i| w_mat[q][i] * self.times[i] * rate)
                    .sum::<f64>()
            })
            .sum();
        let g_psi = -(0.5 * (-trx * trt - quad + (p * t) as f64) - drift);
        grad.push(g_psi);

        // intertask parameters
        let ni = self.intertask.n_params(p);
        if ni > 0 {
            // ELBO-side trace weight against dKx
            let kxi_sx_kxi = &kx_inv * &s_x * &kx_inv;
            let kxi_m_kxi = &kx_inv * &m_mat * &kx_inv;
            let mut g_total =
                (kxi_sx_kxi * trt + kxi_m_kxi / s2 - kx_inv.clone() * t as f64) * 0.5;
            // mean dependence: dmu0[q][i]/dKx_qq = -tau_i sigma2/2 and
            // dELBO/dmu0 = -W, so the diagonal picks up +sigma2/2 sum(W tau)
            for q in 0..p {
                let wq: f64 = (s2 / 2.0)
                    * (0..t)
                        .map(|i| w_mat[q][i] * self.times[i])
                        .sum::<f64>();
                g_total[(q, q)] += wq;
            }
            if let IntertaskState::RankOnePlusDiag { eta, .. } = &self.intertask {
                let mut gl = kx_inv.clone() * (*eta - 1.0);
                for q in 0..p {
                    gl[(q, q)] -= (*eta - 1.0) / kx[(q, q)];
                }
                g_total += gl;
            }
            match &self.intertask {
                IntertaskState::RankOnePlusDiag { a, log_d, .. } => {
                    let av = nalgebra::DVector::from_column_slice(a);
                    let ga = &g_total * &av;
                    for l in 0..p {
                        grad.push(2.0 * ga[l]);
                    }
                    for l in 0..p {
                        grad.push(g_total[(l, l)] * log_d[l].exp());
                    }
                }
                IntertaskState::Geodesic { coords, log_sigma } => {
                    let sigma_g = log_sigma.exp();
                    let mut gv = 0.0;
                    for i in 0..p {
                        for j in 0..p {
                            let dotp = (coords[i][0] * coords[j][0]
                                + coords[i][1] * coords[j][1]
                                + coords[i][2] * coords[j][2])
                                .clamp(-1.0, 1.0);
                            let theta = dotp.acos();
                            gv += g_total[(i, j)] * kx[(i, j)] * theta / (sigma_g * sigma_g);
                        }
                    }
                    grad.push(gv);
                }
                IntertaskState::Fixed(_) => {}
            }
        }
        Ok((value, grad))
    }

    pub fn packed_params(&self) -> Vec<f64> {
        self.pack_params()
    }

    pub fn set_packed_params(&mut self, p: &[f64]) {
        self.unpack_params(p);
    }

    /// Per-task volatility estimates on the data grid (see
    /// [`GpcvModel::estimate_vol`] for the grid convention).
    pub fn estimate_vols(&self, grid: &TimeGrid, j: usize, seed: u64) -> Result<Vec<VolatilityPath>> {
        use rand_distr::{Distribution, StandardNormal};
        if j == 0 {
            return Err(VoltError::invalid_param("J", "need at least one sample"));
        }
        let t = self.t_len();
        if grid.len() != t + 1 || (grid.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(VoltError::DimensionMismatch {
                context: "volatility estimation grid",
                expected: t + 1,
                got: grid.len(),
            });
        }
        let l_t = self.l_t.to_matrix();
        let sx = self.s_x_matrix();
        let mut out = Vec::with_capacity(self.p());
        for q in 0..self.p() {
            let scale = sx[(q, q)].sqrt();
            let mut acc = vec![0.0; t];
            let mut z = vec![0.0; t];
            for path in 0..j {
                let mut rng = stream_rng(seed.wrapping_add(q as u64), path as u64);
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                for i in 0..t {
                    let mut f = self.m_rows[q][i];
                    for k in 0..=i {
                        f += scale * l_t[(i, k)] * z[k];
                    }
                    acc[i] += f.exp();
                }
            }
            let mut values = Vec::with_capacity(t + 1);
            values.push(acc[0] / j as f64);
            for a in &acc {
                values.push(a / j as f64);
            }
            out.push(VolatilityPath::new(
                grid.clone(),
                values,
                VolUnit::PerStep,
                j,
            )?);
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares `a a^T` fit to the off-diagonal of a correlation matrix by
/// alternating updates; `a[i]` clamped to (0, 1) so `d = 1 - a^2` stays
/// positive.
pub(crate) fn rank_one_offdiag_fit(corr: &DMatrix<f64>) -> Vec<f64> {
    let p = corr.nrows();
    if p == 1 {
        return vec![0.3];
    }
    let mut a: Vec<f64> = (0..p)
        .map(|i| {
            let mean_off: f64 = (0..p)
                .filter(|&j| j != i)
                .map(|j| corr[(i, j)].abs())
                .sum::<f64>()
                / (p - 1) as f64;
            mean_off.sqrt().clamp(0.05, 0.95)
        })
        .collect();
    for _ in 0..20 {
        for i in 0..p {
            let num: f64 = (0..p).filter(|&j| j != i).map(|j| corr[(i, j)] * a[j]).sum();
            let den: f64 = (0..p).filter(|&j| j != i).map(|j| a[j] * a[j]).sum();
            if den > 1e-12 {
                a[i] = (num / den).clamp(0.05, 0.95);
            }
        }
    }
    a
}

/// Moment estimator of the cross-task correlation of log-volatility
/// increments, computed from the returns panel.
///
/// The returns are cut into non-overlapping blocks; each block's log sample
/// standard deviation estimates the local log volatility with a known,
/// task-independent sampling variance of about `1/(2(B-1))`. Block-to-block
/// increments of these estimates have cross-task covariance equal to the
/// latent increment covariance (the noise is independent across tasks),
/// while their variance adds twice the sampling noise — which is subtracted
/// on the diagonal before normalizing. This debiases the attenuation that a
/// naive correlation of smoothed paths suffers.
pub(crate) fn block_vol_correlation(panel: &[ReturnSeries], block: usize) -> DMatrix<f64> {
    let p = panel.len();
    let t = panel[0].len();
    let k_blocks = t / block;
    if p == 1 || k_blocks < 4 {
        return DMatrix::identity(p, p);
    }
    // per-task block log standard deviations
    let levels: Vec<Vec<f64>> = panel
        .iter()
        .map(|rs| {
            (0..k_blocks)
                .map(|k| {
                    let s = &rs.returns[k * block..(k + 1) * block];
                    let mean = s.iter().sum::<f64>() / block as f64;
                    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                        / (block - 1) as f64;
                    var.sqrt().max(crate::gpcv::VOL_FLOOR).ln()
                })
                .collect()
        })
        .collect();
    let incr: Vec<Vec<f64>> = levels
        .iter()
        .map(|l| l.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    let n = k_blocks - 1;
    let cov = |a: &[f64], b: &[f64]| -> f64 {
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
    };
    // known sampling variance of a block log-std; an increment carries it twice
    let noise = 1.0 / (2.0 * (block as f64 - 1.0));
    let mut corr = DMatrix::identity(p, p);
    let diag: Vec<f64> = (0..p)
        .map(|q| (cov(&incr[q], &incr[q]) - 2.0 * noise).max(1e-8))
        .collect();
    for a in 0..p {
        for b in 0..p {
            if a != b {
                corr[(a, b)] = (cov(&incr[a], &incr[b]) / (diag[a] * diag[b]).sqrt())
                    .clamp(-0.95, 0.95);
            }
        }
    }
    // PD repair: clip eigenvalues and renormalize the diagonal
    let eig = corr.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 1e-6) {
        let mut d = DMatrix::zeros(p, p);
        for k in 0..p {
            d[(k, k)] = eig.eigenvalues[k].max(1e-3);
        }
        let fixed = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        corr = to_correlation(&fixed);
    }
    corr
}

/// Validate a panel: same length, same times, same dt.
fn check_panel(panel: &[ReturnSeries]) -> Result<()> {
    if panel.is_empty() {
        return Err(VoltError::invalid_param("panel", "need at least one task"));
    }
    let t = panel[0].len();
    for rs in panel.iter() {
        if rs.len() != t {
            return Err(VoltError::DimensionMismatch {
                context: "return panel",
                expected: t,
                got: rs.len(),
            });
        }
        if (rs.dt - panel[0].dt).abs() > 1e-12 * panel[0].dt {
            return Err(VoltError::Invalid("panel tasks disagree on dt".into()));
        }
        for (a, b) in rs.times.iter().zip(&panel[0].times) {
            if (a - b).abs() > 1e-9 {
                return Err(VoltError::Invalid("panel tasks disagree on times".into()));
            }
        }
    }
    Ok(())
}

/// Fit a multi-task GPCV on a complete return panel.
pub fn mt_fit(
    panel: &[ReturnSeries],
    intertask: &IntertaskSpec,
    cfg: AdamConfig,
) -> Result<MtGpcvModel> {
    mt_fit_with_sigma2(panel, intertask, cfg, crate::gpcv::SIGMA2_INIT)
}

pub fn mt_fit_with_sigma2(
    panel: &[ReturnSeries],
    intertask: &IntertaskSpec,
    cfg: AdamConfig,
    sigma2_init: f64,
) -> Result<MtGpcvModel> {
    check_panel(panel)?;
    let p = panel.len();
    let t = panel[0].len();
    if t < 2 {
        return Err(VoltError::SeriesTooShort { len: t, min: 2 });
    }

    // per-task initialization: means kept per task, temporal covariance
    // averaged across tasks, intertask variational covariance from the
    // covariance of the initial means (normalized so scale lives in S_t)
    let mut m0 = Vec::with_capacity(p);
    let mut s_t0 = DMatrix::zeros(t, t);
    for rs in panel {
        let m_q = init_mean(rs, sigma2_init)?;
        let s_q = laplace_cov(rs, &m_q, sigma2_init)?;
        s_t0 += s_q / p as f64;
        m0.push(m_q);
    }
    // covariance of the initial means across tasks: seeds both the
    // variational intertask factor and the free-form K_i correlation
    let m0_cov = if p == 1 {
        DMatrix::identity(1, 1)
    } else {
        let means: Vec<f64> = m0
            .iter()
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let mut cmat = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                let cov: f64 = (0..t)
                    .map(|i| (m0[a][i] - means[a]) * (m0[b][i] - means[b]))
                    .sum::<f64>()
                    / t as f64;
                cmat[(a, b)] = cov;
            }
        }
        cmat
    };
    let l_x = if p == 1 {
        None
    } else {
        let mut cmat = m0_cov.clone();
        let mean_diag = (0..p).map(|q| cmat[(q, q)]).sum::<f64>() / p as f64;
        if mean_diag > 0.0 {
            cmat /= mean_diag;
        }
        for q in 0..p {
            cmat[(q, q)] += 1e-3;
        }
        let l = chol_ladder(&cmat, "intertask variational init")?.l();
        Some(CholParam::from_matrix(&l))
    };
    let l_t0 = chol_ladder(&s_t0, "mt variational init")?.l();
    let c0 = m0
        .iter()
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .sum::<f64>()
        / p as f64;

    let state = match intertask {
        IntertaskSpec::Fixed(rows) => {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(VoltError::DimensionMismatch {
                    context: "fixed intertask matrix",
                    expected: p,
                    got: rows.len(),
                });
            }
            IntertaskState::Fixed(rows.clone())
        }
        IntertaskSpec::RankOnePlusDiag { eta } => {
            // fit a a^T to the off-diagonal of the moment-estimated
            // correlation (the diagonal belongs to d, so a plain eigen
            // projection would inflate the correlations)
            let corr0 = block_vol_correlation(panel, crate::gpcv::INIT_STD_WINDOW);
            let a = rank_one_offdiag_fit(&corr0);
            let log_d: Vec<f64> = a.iter().map(|ai| (1.0 - ai * ai).max(0.05).ln()).collect();
            IntertaskState::RankOnePlusDiag {
                a,
                log_d,
                eta: *eta,
            }
        }
        IntertaskSpec::Geodesic { coords, sigma_init } => {
            if coords.len() != p {
                return Err(VoltError::DimensionMismatch {
                    context: "geodesic coordinates",
                    expected: p,
                    got: coords.len(),
                });
            }
            if *sigma_init <= 0.0 {
                return Err(VoltError::invalid_param("sigma_init", "must be > 0"));
            }
            IntertaskState::Geodesic {
                coords: coords.clone(),
                log_sigma: sigma_init.ln(),
            }
        }
    };

    let mut model = MtGpcvModel {
        times: panel[0].times.clone(),
        returns: panel.iter().map(|rs| rs.returns.clone()).collect(),
        dt: panel[0].dt,
        c: c0,
        log_sigma2: sigma2_init.ln(),
        m_rows: m0,
        l_t: CholParam::from_matrix(&l_t0),
        l_x,
        intertask: state,
    };
    let init = model.pack_params();
    let mut scratch = model.clone();
    let (params, _trace) = adam_maximize(
        |pvec| {
            scratch.unpack_params(pvec);
            scratch.elbo_grad(true)
        },
        &init,
        cfg,
    )?;
    model.unpack_params(&params);
    Ok(model)
}

/// Correlation recovered from a fitted model's intertask covariance.
pub fn mt_intertask_correlation(model: &MtGpcvModel) -> Result<DMatrix<f64>> {
    model.intertask_correlation()
}

/// Build a single-task model sharing the same variational state, for the
/// P = 1 reduction (requires `K_i = [[1]]`).
pub fn single_task_view(model: &MtGpcvModel) -> Result<GpcvModel> {
    if model.p() != 1 {
        return Err(VoltError::invalid_param("p", "single-task view needs P = 1"));
    }
    Ok(GpcvModel {
        times: model.times.clone(),
        returns: model.returns[0].clone(),
        dt: model.dt,
        c: model.c,
        log_sigma2: model.log_sigma2,
        chol: model.l_t.clone(),
        m_vec: model.m_rows[0].clone(),
    })
}
