//! Euler–Maruyama simulators for the joint log-normal model and SABR.
//!
//! These generate synthetic ground truth for tests and CLI demos. Two details
//! keep oracle comparisons sharp: the log-volatility process is arithmetic
//! Brownian motion, so it is stepped *exactly* at any dt, and the log-data
//! step uses the volatility at the left endpoint of each interval — the same
//! left-Riemann rule the integrated-volatility kernel discretizes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::rng::stream_rng;
use crate::timeseries::{SeriesMeta, TimeGrid, TimeSeries, VolUnit, VolatilityPath};

/// Parameters of the joint SDE
/// `ds = mu_s dt + V dW`, `dv = -sigma^2/2 dt + sigma dZ`, `V = exp(v)`,
/// with independent drivers `dW`, `dZ`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointSdeParams {
    /// Log-data drift per year.
    pub mu_s: f64,
    /// Volvol: standard deviation rate of log-volatility (1/sqrt(year)).
    pub sigma: f64,
    /// Initial annualized volatility.
    pub v0: f64,
    /// Initial data value.
    pub s0: f64,
}

impl JointSdeParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(VoltError::invalid_param("sigma", "must be >= 0"));
        }
        if self.v0 <= 0.0 {
            return Err(VoltError::invalid_param("v0", "must be > 0"));
        }
        if self.s0 <= 0.0 {
            return Err(VoltError::invalid_param("s0", "must be > 0"));
        }
        Ok(())
    }
}

/// Log-normal SABR (beta = 1): `dS = V S dW`, `dV = alpha V dZ`,
/// `corr(dW, dZ) = rho`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SabrParams {
    pub alpha: f64,
    pub rho: f64,
    pub v0: f64,
    pub s0: f64,
}

impl SabrParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(VoltError::invalid_param("alpha", "must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(VoltError::invalid_param("rho", "must lie in [-1, 1]"));
        }
        if self.v0 <= 0.0 || self.s0 <= 0.0 {
            return Err(VoltError::invalid_param("v0/s0", "must be > 0"));
        }
        Ok(())
    }
}

fn normal(rng: &mut impl rand::Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Simulate the joint model over `n` steps of size `dt`; deterministic per
/// seed. Returns the data series and the annualized volatility path, both on
/// the grid `dt, ..., n dt`.
pub fn simulate_joint(
    params: &JointSdeParams,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<(TimeSeries, VolatilityPath)> {
    params.validate()?;
    if n == 0 {
        return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
    }
    let grid = TimeGrid::new(n, dt)?;
    let mut rng = stream_rng(seed, 0);
    let sqrt_dt = dt.sqrt();
    let mut s = params.s0.ln();
    let mut v = params.v0.ln();
    let mut values = Vec::with_capacity(n);
    let mut vols = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = normal(&mut rng);
        let zeta = normal(&mut rng);
        // left-endpoint volatility for the data step
        s += params.mu_s * dt + v.exp() * sqrt_dt * xi;
        // exact step of the arithmetic BM in log-volatility
        v += -params.sigma * params.sigma * dt / 2.0 + params.sigma * sqrt_dt * zeta;
        values.push(s.exp());
        vols.push(v.exp());
    }
    let series = TimeSeries::from_grid(
        &grid,
        values,
        SeriesMeta {
            label: "simulated".into(),
            ..Default::default()
        },
    )?;
    let vol = VolatilityPath::new(grid, vols, VolUnit::Annualized, 0)?;
    Ok((series, vol))
}

/// Simulate log-normal SABR; the volatility GBM is stepped exactly and the
/// log-data step uses left-endpoint volatility with the Itô correction.
pub fn simulate_sabr(
    params: &SabrParams,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<(TimeSeries, VolatilityPath)> {
    params.validate()?;
    if n == 0 {
        return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
    }
    let grid = TimeGrid::new(n, dt)?;
    let mut rng = stream_rng(seed, 0);
    let out = sabr_path(params, n, dt, &mut rng);
    let series = TimeSeries::from_grid(
        &grid,
        out.0,
        SeriesMeta {
            label: "sabr".into(),
            ..Default::default()
        },
    )?;
    let vol = VolatilityPath::new(grid, out.1, VolUnit::Annualized, 0)?;
    Ok((series, vol))
}

fn sabr_path(params: &SabrParams, n: usize, dt: f64, rng: &mut impl rand::Rng) -> (Vec<f64>, Vec<f64>) {
    let sqrt_dt = dt.sqrt();
    let rho_bar = (1.0 - params.rho * params.rho).sqrt();
    let mut s = params.s0.ln();
    let mut vol = params.v0;
    let mut values = Vec::with_capacity(n);
    let mut vols = Vec::with_capacity(n);
    for _ in 0..n {
        let zeta = normal(rng);
        let eta = normal(rng);
        let xi = params.rho * zeta + rho_bar * eta;
        s += -vol * vol * dt / 2.0 + vol * sqrt_dt * xi;
        // exact GBM step for the volatility
        vol *= (-params.alpha * params.alpha * dt / 2.0 + params.alpha * sqrt_dt * zeta).exp();
        values.push(s.exp());
        vols.push(vol);
    }
    (values, vols)
}

/// Multi-task SABR: volatility drivers `dZ_p` correlated by `intertask_corr`,
/// price drivers independent across tasks (use `rho = 0` for exactly
/// independent prices given volatilities).
pub fn simulate_corr_sabr(
    p: usize,
    intertask_corr: &nalgebra::DMatrix<f64>,
    params: &SabrParams,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<(TimeSeries, VolatilityPath)>> {
    params.validate()?;
    if p == 0 {
        return Err(VoltError::invalid_param("p", "need at least one task"));
    }
    if intertask_corr.nrows() != p || intertask_corr.ncols() != p {
        return Err(VoltError::DimensionMismatch {
            context: "intertask correlation",
            expected: p,
            got: intertask_corr.nrows(),
        });
    }
    if n == 0 {
        return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
    }
    for i in 0..p {
        if (intertask_corr[(i, i)] - 1.0).abs() > 1e-10 {
            return Err(VoltError::Invalid("intertask correlation needs a unit diagonal".into()));
        }
    }
    let chol = nalgebra::Cholesky::new(intertask_corr.clone()).ok_or(
        VoltError::NotPositiveDefinite {
            context: "intertask correlation",
        },
    )?;
    let l = chol.l();
    let grid = TimeGrid::new(n, dt)?;
    let mut rng = stream_rng(seed, 0);
    let sqrt_dt = dt.sqrt();
    let rho_bar = (1.0 - params.rho * params.rho).sqrt();
    let mut s = vec![params.s0.ln(); p];
    let mut vol = vec![params.v0; p];
    let mut values = vec![Vec::with_capacity(n); p];
    let mut vols = vec![Vec::with_capacity(n); p];
    let mut z = nalgebra::DVector::zeros(p);
    for _ in 0..n {
        for i in 0..p {
            z[i] = normal(&mut rng);
        }
        let zeta = &l * &z;
        for task in 0..p {
            let eta = normal(&mut rng);
            let xi = params.rho * zeta[task] + rho_bar * eta;
            s[task] += -vol[task] * vol[task] * dt / 2.0 + vol[task] * sqrt_dt * xi;
            vol[task] *=
                (-params.alpha * params.alpha * dt / 2.0 + params.alpha * sqrt_dt * zeta[task]).exp();
            values[task].push(s[task].exp());
            vols[task].push(vol[task]);
        }
    }
    let mut out = Vec::with_capacity(p);
    for task in 0..p {
        let series = TimeSeries::from_grid(
            &grid,
            std::mem::take(&mut values[task]),
            SeriesMeta {
                label: format!("sabr_task_{task}"),
                ..Default::default()
            },
        )?;
        let volpath = VolatilityPath::new(grid.clone(), std::mem::take(&mut vols[task]), VolUnit::Annualized, 0)?;
        out.push((series, volpath));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn constant_volatility_gaussian_marginal() {
        // sigma = 0: v stays at log v0, Var[s(t_n)] = v0^2 n dt.
        let params = JointSdeParams {
            mu_s: 0.0,
            sigma: 0.0,
            v0: 0.25,
            s0: 1.0,
        };
        let n = 30;
        let dt = 1.0 / 252.0;
        let n_paths = 10_000;
        let mut finals = Vec::with_capacity(n_paths);
        for seed in 0..n_paths {
            let (series, vol) = simulate_joint(&params, n, dt, seed as u64).unwrap();
            assert!(vol.values.iter().all(|&v| (v - 0.25).abs() < 1e-12));
            finals.push(series.values()[n - 1].ln());
        }
        let (_, var) = mean_and_var(&finals);
        let expect = 0.25 * 0.25 * n as f64 * dt;
        // sampling error of a variance estimate: rel std ~ sqrt(2/N)
        let tol = 3.0 * (2.0 / n_paths as f64).sqrt() * expect;
        assert!((var - expect).abs() < tol, "var {var} vs {expect} (tol {tol})");
    }

    #[test]
    fn deterministic_drift_limit() {
        let params = JointSdeParams {
            mu_s: 1.0,
            sigma: 0.0,
            v0: 1e-12,
            s0: 1.0,
        };
        let (series, _) = simulate_joint(&params, 100, 0.01, 3).unwrap();
        for (i, v) in series.values().iter().enumerate() {
            let t = (i + 1) as f64 * 0.01;
            assert_relative_eq!(v.ln(), t, epsilon = 1e-6);
        }
    }

    #[test]
    fn log_vol_drift_keeps_volatility_mean_constant() {
        let params = JointSdeParams {
            mu_s: 0.0,
            sigma: 0.8,
            v0: 0.3,
            s0: 1.0,
        };
        let n = 50;
        let dt = 1.0 / 252.0;
        let n_paths = 10_000;
        let t = n as f64 * dt;
        let mut log_vols = Vec::with_capacity(n_paths);
        let mut vols = Vec::with_capacity(n_paths);
        for seed in 0..n_paths {
            let (_, vol) = simulate_joint(&params, n, dt, seed as u64).unwrap();
            log_vols.push(vol.values[n - 1].ln());
            vols.push(vol.values[n - 1]);
        }
        let (m_logv, var_logv) = mean_and_var(&log_vols);
        let expect = params.v0.ln() - params.sigma * params.sigma * t / 2.0;
        let se = (var_logv / n_paths as f64).sqrt();
        assert!(
            (m_logv - expect).abs() < 3.0 * se,
            "E[v] {m_logv} vs {expect} (se {se})"
        );
        // and in V-space the mean stays at v0
        let (m_v, var_v) = mean_and_var(&vols);
        let se_v = (var_v / n_paths as f64).sqrt();
        assert!((m_v - params.v0).abs() < 3.0 * se_v);
    }

    #[test]
    fn exact_log_vol_increments() {
        // v increments are exactly N(-sigma^2 dt / 2, sigma^2 dt)
        let params = JointSdeParams {
            mu_s: 0.0,
            sigma: 0.5,
            v0: 0.2,
            s0: 1.0,
        };
        let dt = 0.004;
        let (_, vol) = simulate_joint(&params, 20_000, dt, 11).unwrap();
        let incr: Vec<f64> = vol
            .values
            .windows(2)
            .map(|w| w[1].ln() - w[0].ln())
            .collect();
        let (m, v) = mean_and_var(&incr);
        let expect_m = -0.5 * 0.5 * 0.5 * dt;
        let expect_v = 0.5 * 0.5 * dt;
        assert!((m - expect_m).abs() < 3.0 * (expect_v / incr.len() as f64).sqrt());
        assert!((v - expect_v).abs() < 3.0 * (2.0 / incr.len() as f64).sqrt() * expect_v);
    }

    #[test]
    fn sabr_zero_alpha_is_gbm() {
        let params = SabrParams {
            alpha: 0.0,
            rho: 0.0,
            v0: 0.4,
            s0: 2.0,
        };
        let dt = 1.0 / 252.0;
        let (series, vol) = simulate_sabr(&params, 5_000, dt, 17).unwrap();
        assert!(vol.values.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        let rets: Vec<f64> = series
            .values()
            .windows(2)
            .map(|w| w[1].ln() - w[0].ln())
            .collect();
        let (_, var) = mean_and_var(&rets);
        let expect = 0.4 * 0.4 * dt;
        assert!((var - expect).abs() < 3.0 * (2.0 / rets.len() as f64).sqrt() * expect);
    }

    #[test]
    fn sabr_driver_correlation() {
        let dt = 1.0 / 252.0;
        for (rho, expect) in [(0.0, 0.0), (1.0, 1.0)] {
            let params = SabrParams {
                alpha: 0.6,
                rho,
                v0: 0.3,
                s0: 1.0,
            };
            let (series, vol) = simulate_sabr(&params, 20_000, dt, 23).unwrap();
            // recover the drivers from the paths
            let mut dw = Vec::new();
            let mut dz = Vec::new();
            let mut prev_s = params.s0.ln();
            let mut prev_v = params.v0;
            for i in 0..series.len() {
                let s = series.values()[i].ln();
                let v = vol.values[i];
                dw.push((s - prev_s + prev_v * prev_v * dt / 2.0) / prev_v);
                dz.push((v.ln() - prev_v.ln() + params.alpha * params.alpha * dt / 2.0) / params.alpha);
                prev_s = s;
                prev_v = v;
            }
            let n = dw.len() as f64;
            let (mw, vw) = mean_and_var(&dw);
            let (mz, vz) = mean_and_var(&dz);
            let cov: f64 = dw
                .iter()
                .zip(&dz)
                .map(|(a, b)| (a - mw) * (b - mz))
                .sum::<f64>()
                / (n - 1.0);
            let corr = cov / (vw * vz).sqrt();
            assert!(
                (corr - expect).abs() < 0.03,
                "rho {rho}: sample corr {corr}"
            );
        }
    }

    #[test]
    fn corr_sabr_cross_correlation() {
        let dt = 1.0 / 252.0;
        let params = SabrParams {
            alpha: 0.6,
            rho: 0.0,
            v0: 0.3,
            s0: 1.0,
        };
        for (rho_x, expect) in [(0.0, 0.0), (0.9, 0.9)] {
            let corr = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, rho_x, rho_x, 1.0]);
            let panel = simulate_corr_sabr(2, &corr, &params, 10_000, dt, 29).unwrap();
            let incr = |k: usize| -> Vec<f64> {
                panel[k]
                    .1
                    .values
                    .windows(2)
                    .map(|w| w[1].ln() - w[0].ln())
                    .collect()
            };
            let a = incr(0);
            let b = incr(1);
            let n = a.len() as f64;
            let (ma, va) = mean_and_var(&a);
            let (mb, vb) = mean_and_var(&b);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
            let c = cov / (va * vb).sqrt();
            assert!((c - expect).abs() < 0.03, "expect {expect}, got {c}");
        }
    }

    #[test]
    fn corr_sabr_single_task_reduces_exactly() {
        let params = SabrParams {
            alpha: 0.5,
            rho: 0.3,
            v0: 0.25,
            s0: 3.0,
        };
        let corr = nalgebra::DMatrix::identity(1, 1);
        let panel = simulate_corr_sabr(1, &corr, &params, 200, 0.01, 31).unwrap();
        let (series, vol) = simulate_sabr(&params, 200, 0.01, 31).unwrap();
        assert_eq!(panel[0].0.values(), series.values());
        assert_eq!(panel[0].1.values, vol.values);
    }

    #[test]
    fn simulators_are_bit_reproducible() {
        let params = JointSdeParams {
            mu_s: 0.05,
            sigma: 0.5,
            v0: 0.2,
            s0: 1.0,
        };
        let a = simulate_joint(&params, 50, 0.01, 7).unwrap();
        let b = simulate_joint(&params, 50, 0.01, 7).unwrap();
        assert_eq!(a.0.values(), b.0.values());
        assert_eq!(a.1.values, b.1.values);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = SabrParams {
            alpha: 0.5,
            rho: 2.0,
            v0: 0.2,
            s0: 1.0,
        };
        assert!(simulate_sabr(&bad, 10, 0.01, 0).is_err());
        let corr = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        let ok = SabrParams {
            alpha: 0.5,
            rho: 0.0,
            v0: 0.2,
            s0: 1.0,
        };
        assert!(simulate_corr_sabr(2, &corr, &ok, 10, 0.01, 0).is_err());
    }
}
