//! O(n) GP engine for min-type kernels.
//!
//! Both GPs in the forecasting pipeline have covariance
//! `K = amp * K0 + noise * I` with `K0[i,j] = c0[min(i,j)]` the Gram matrix
//! of a path with independent increments (Brownian motion for log-volatility,
//! integrated volatility for log-data). `K0` has a tridiagonal inverse `T0`,
//! and the factorization `K = (amp I + noise T0) K0` reduces every quantity
//! the marginal likelihood and its gradients need — solves, log-determinants,
//! traces — to tridiagonal recurrences.
//!
//! The same structure makes forecasting cheap: past the training window the
//! posterior is a random level plus independent increments, so joint samples
//! and sequential rollouts both run in O(horizon) per path.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::gp::exact::NOISE_FLOOR;
use crate::gp::GaussianPredictive;
use crate::linalg::{MinGram, SymTridiag};
use crate::opt::{adam_maximize, AdamConfig};

/// Mean families available to the structured engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarkovMean {
    Constant { c: f64 },
    Linear { mu_s: f64, s0: f64 },
    /// Fixed per-point values (one-step moving-average predictions); carries
    /// no hyperparameters.
    Fixed(Vec<f64>),
}

impl MarkovMean {
    fn n_params(&self) -> usize {
        match self {
            MarkovMean::Constant { .. } => 1,
            MarkovMean::Linear { .. } => 2,
            MarkovMean::Fixed(_) => 0,
        }
    }
}

/// GP with kernel `amp * K0 + noise * I` over a min-type base Gram `K0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovGp {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    /// Unit-amplitude base variance increments.
    base_deltas: Vec<f64>,
    pub mean: MarkovMean,
    pub log_amp: f64,
    pub log_noise: f64,
    /// Adds `-t * amp / 2` to the mean: the drift a log-transformed driftless
    /// process acquires, tied to the kernel amplitude.
    pub tied_drift: bool,
}

impl MarkovGp {
    pub fn new(
        times: Vec<f64>,
        y: Vec<f64>,
        base: MinGram,
        mean: MarkovMean,
        amp_init: f64,
        noise_init: f64,
        tied_drift: bool,
    ) -> Result<Self> {
        let n = times.len();
        if y.len() != n || base.n() != n {
            return Err(VoltError::DimensionMismatch {
                context: "markov gp data",
                expected: n,
                got: y.len().min(base.n()),
            });
        }
        if n == 0 {
            return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
        }
        if let MarkovMean::Fixed(v) = &mean {
            if v.len() != n {
                return Err(VoltError::DimensionMismatch {
                    context: "markov gp fixed mean",
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if amp_init <= 0.0 {
            return Err(VoltError::NonPositive {
                context: "markov gp amplitude",
                value: amp_init,
            });
        }
        if noise_init <= NOISE_FLOOR {
            return Err(VoltError::NonPositive {
                context: "markov gp noise",
                value: noise_init,
            });
        }
        Ok(MarkovGp {
            times,
            y,
            base_deltas: base.deltas().to_vec(),
            mean,
            log_amp: amp_init.ln(),
            log_noise: (noise_init - NOISE_FLOOR).ln(),
            tied_drift,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn amp(&self) -> f64 {
        self.log_amp.exp()
    }

    pub fn noise(&self) -> f64 {
        NOISE_FLOOR + self.log_noise.exp()
    }

    pub fn base_cum(&self) -> Vec<f64> {
        self.base().cum()
    }

    fn base(&self) -> MinGram {
        MinGram::from_increments(&self.base_deltas).expect("increments validated at construction")
    }

    /// Mean vector at the training points.
    pub fn mean_vec(&self) -> Vec<f64> {
        self.mean_at(&self.times)
    }

    /// Mean at arbitrary times (Fixed means are only defined on the training
    /// grid and must not be queried elsewhere).
    fn mean_at(&self, times: &[f64]) -> Vec<f64> {
        let mut m: Vec<f64> = match &self.mean {
            MarkovMean::Constant { c } => vec![*c; times.len()],
            MarkovMean::Linear { mu_s, s0 } => times.iter().map(|t| t * mu_s + s0).collect(),
            MarkovMean::Fixed(v) => {
                assert_eq!(v.len(), times.len(), "fixed mean queried off-grid");
                v.clone()
            }
        };
        if self.tied_drift {
            let amp = self.amp();
            for (mi, t) in m.iter_mut().zip(times) {
                *mi -= t * amp / 2.0;
            }
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.mean.n_params() + 2
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = match &self.mean {
            MarkovMean::Constant { c } => vec![*c],
            MarkovMean::Linear { mu_s, s0 } => vec![*mu_s, *s0],
            MarkovMean::Fixed(_) => vec![],
        };
        p.push(self.log_amp);
        p.push(self.log_noise);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nm = self.mean.n_params();
        match &mut self.mean {
            MarkovMean::Constant { c } => *c = p[0],
            MarkovMean::Linear { mu_s, s0 } => {
                *mu_s = p[0];
                *s0 = p[1];
            }
            MarkovMean::Fixed(_) => {}
        }
        self.log_amp = p[nm];
        self.log_noise = p[nm + 1];
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match &self.mean {
            MarkovMean::Constant { .. } => vec!["mean_c".into()],
            MarkovMean::Linear { .. } => vec!["mean_mu_s".into(), "mean_s0".into()],
            MarkovMean::Fixed(_) => vec![],
        };
        names.push("log_amp".into());
        names.push("log_noise".into());
        names
    }

    /// Workspace for one likelihood evaluation: LDL^T of
    /// `A = amp I + noise T0` plus the pieces shared by value and gradients.
    fn solve_system(&self) -> Result<SolveState> {
        let base = self.base();
        let t0 = base.precision();
        let amp = self.amp();
        let noise = self.noise();
        let n = self.n();
        let mut a = t0.clone();
        for v in a.diag.iter_mut() {
            *v = amp + noise * *v;
        }
        for v in a.off.iter_mut() {
            *v *= noise;
        }
        let (l, d) = a.ldl()?;
        let mean = self.mean_vec();
        let r: Vec<f64> = self.y.iter().zip(&mean).map(|(y, m)| y - m).collect();
        // alpha = (K + noise I)^{-1} r = T0 A^{-1} r
        let u = SymTridiag::solve_with_ldl(&l, &d, &r);
        let alpha = t0.mul_vec(&u);
        let logdet_a: f64 = d.iter().map(|x| x.ln()).sum();
        let logdet = logdet_a + base.logdet();
        let _ = n;
        Ok(SolveState {
            t0,
            a,
            r,
            alpha,
            logdet,
        })
    }

    pub fn mll(&self) -> Result<f64> {
        let st = self.solve_system()?;
        let n = self.n() as f64;
        let quad: f64 = st.r.iter().zip(&st.alpha).map(|(a, b)| a * b).sum();
        Ok(-0.5 * quad - 0.5 * st.logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// MLL and gradient with respect to [`Self::params`].
    pub fn mll_grad(&self) -> Result<(f64, Vec<f64>)> {
        let st = self.solve_system()?;
        let n = self.n();
        let nf = n as f64;
        let quad: f64 = st.r.iter().zip(&st.alpha).map(|(a, b)| a * b).sum();
        let value = -0.5 * quad - 0.5 * st.logdet - 0.5 * nf * (2.0 * std::f64::consts::PI).ln();

        let amp = self.amp();
        let base = self.base();
        // tr((K + noise I)^{-1}) = tr(T0 A^{-1}) via the band of A^{-1}
        let (zd, zo) = st.a.inverse_band()?;
        let tr_inv = st.t0.trace_product(&zd, &zo);
        // tr((K + noise I)^{-1} K0) = (n - noise tr_inv) / amp
        let tr_k0 = (nf - self.noise() * tr_inv) / amp;
        let k0_alpha = base.mul_vec(&st.alpha);
        let quad_k0: f64 = st.alpha.iter().zip(&k0_alpha).map(|(a, b)| a * b).sum();
        let quad_i: f64 = st.alpha.iter().map(|a| a * a).sum();

        let mut grad = vec![0.0; self.n_params()];
        let nm = self.mean.n_params();
        match &self.mean {
            MarkovMean::Constant { .. } => {
                grad[0] = st.alpha.iter().sum::<f64>();
            }
            MarkovMean::Linear { .. } => {
                grad[0] = st.alpha.iter().zip(&self.times).map(|(a, t)| a * t).sum();
                grad[1] = st.alpha.iter().sum::<f64>();
            }
            MarkovMean::Fixed(_) => {}
        }
        // d/d log_amp
        let mut g_amp = 0.5 * (quad_k0 - tr_k0) * amp;
        if self.tied_drift {
            // mean includes -t amp / 2
            let dmean: f64 = st
                .alpha
                .iter()
                .zip(&self.times)
                .map(|(a, t)| a * (-t * amp / 2.0))
                .sum();
            g_amp += dmean;
        }
        grad[nm] = g_amp;
        grad[nm + 1] = 0.5 * (quad_i - tr_inv) * self.log_noise.exp();
        Ok((value, grad))
    }

    pub fn fit(&mut self, cfg: AdamConfig) -> Result<Vec<f64>> {
        let init = self.params();
        let mut scratch = self.clone();
        let (params, trace) = adam_maximize(
            |p| {
                scratch.set_params(p);
                scratch.mll_grad()
            },
            &init,
            cfg,
        )?;
        self.set_params(&params);
        Ok(trace)
    }

    /// Posterior beyond the end of training, summarized by:
    /// level correction `kappa`, level variance `g0`, and per-step variances
    /// `amp * delta_h` for the given future base increments.
    pub fn posterior_summary(&self, future_deltas: &[f64]) -> Result<PosteriorSummary> {
        let st = self.solve_system()?;
        let amp = self.amp();
        let c0 = &self.base_cum();
        let kappa = amp * dot(c0, &st.alpha);
        // g0 = amp c_last - amp^2 c0^T (K + noise I)^{-1} c0
        let u = {
            let (l, d) = st.a.ldl()?;
            SymTridiag::solve_with_ldl(&l, &d, c0)
        };
        let kinv_c0 = st.t0.mul_vec(&u);
        let g0 = (amp * c0[c0.len() - 1] - amp * amp * dot(c0, &kinv_c0)).max(0.0);
        let step_vars: Vec<f64> = future_deltas
            .iter()
            .map(|&dv| {
                if dv <= 0.0 {
                    Err(VoltError::NonPositive {
                        context: "future variance increment",
                        value: dv,
                    })
                } else {
                    Ok(amp * dv)
                }
            })
            .collect::<Result<_>>()?;
        Ok(PosteriorSummary {
            kappa,
            g0,
            step_vars,
        })
    }

    /// Dense posterior over strictly-future times (parametric means only).
    pub fn predict_future(
        &self,
        future_times: &[f64],
        future_deltas: &[f64],
    ) -> Result<GaussianPredictive> {
        if matches!(self.mean, MarkovMean::Fixed(_)) {
            return Err(VoltError::Invalid(
                "joint future prediction requires a parametric mean; use rollouts".into(),
            ));
        }
        if future_times.len() != future_deltas.len() {
            return Err(VoltError::DimensionMismatch {
                context: "future prediction",
                expected: future_times.len(),
                got: future_deltas.len(),
            });
        }
        let summary = self.posterior_summary(future_deltas)?;
        let law = FutureLaw::new(self.mean_at(future_times), summary);
        Ok(law.into_predictive(future_times.to_vec()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SolveState {
    t0: SymTridiag,
    a: SymTridiag,
    r: Vec<f64>,
    alpha: Vec<f64>,
    logdet: f64,
}

/// Conditional law of the process beyond training: a shared Gaussian level
/// plus independent per-step increments.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// Posterior level correction added to the mean at every future time.
    pub kappa: f64,
    /// Variance of the shared level.
    pub g0: f64,
    /// Variance of each future increment.
    pub step_vars: Vec<f64>,
}

/// Posterior over a future window with explicit mean values per step.
#[derive(Debug, Clone)]
pub struct FutureLaw {
    pub means: Vec<f64>,
    pub summary: PosteriorSummary,
}

impl FutureLaw {
    pub fn new(means: Vec<f64>, summary: PosteriorSummary) -> Self {
        assert_eq!(means.len(), summary.step_vars.len());
        FutureLaw { means, summary }
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    pub fn marginal_mean(&self, h: usize) -> f64 {
        self.means[h] + self.summary.kappa
    }

    pub fn marginal_var(&self, h: usize) -> f64 {
        self.summary.g0 + self.summary.step_vars[..=h].iter().sum::<f64>()
    }

    /// One joint path draw.
    pub fn sample_path(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let level: f64 = {
            let z: f64 = StandardNormal.sample(rng);
            self.summary.g0.sqrt() * z
        };
        let mut acc = level + self.summary.kappa;
        let mut out = Vec::with_capacity(self.horizon());
        for h in 0..self.horizon() {
            let z: f64 = StandardNormal.sample(rng);
            acc += self.summary.step_vars[h].sqrt() * z;
            out.push(self.means[h] + acc);
        }
        out
    }

    pub fn into_predictive(self, times: Vec<f64>) -> GaussianPredictive {
        let h = self.horizon();
        let mut cum = 0.0;
        let mut cums = Vec::with_capacity(h);
        for v in &self.summary.step_vars {
            cum += v;
            cums.push(cum);
        }
        let mean =
            nalgebra::DVector::from_fn(h, |i, _| self.means[i] + self.summary.kappa);
        let cov = nalgebra::DMatrix::from_fn(h, h, |i, j| {
            self.summary.g0 + cums[i.min(j)]
        });
        GaussianPredictive { times, mean, cov }
    }
}
