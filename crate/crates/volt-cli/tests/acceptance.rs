//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `-- --nocapture` to see them).
//!
//! The criteria are property-based and directional checks on synthetic data
//! generated by the SDE simulators; every tolerance is pinned in code.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use volt::eval::{default_percentile_grid, nll_window, quantile_of, NllSpace};
use volt::gp::exact::{GpModel, GpPrior, MaternPrior};
use volt::gp::markov::{MarkovGp, MarkovMean, PosteriorSummary};
use volt::gp::grad_check;
use volt::gpcv::{self, expected_loglik, IntertaskSpec};
use volt::kernels::VoltKernel;
use volt::linalg::MinGram;
use volt::model::{
    fit_volt, first_step_moments, forecast, prior_simulate, rollout_with_summary, ForecastConfig,
    MeanSpec, PriorParams, VoltConfig,
};
use volt::opt::AdamConfig;
use volt::rng::stream_rng;
use volt::sde::{simulate_corr_sabr, simulate_joint, simulate_sabr, JointSdeParams, SabrParams};
use volt::timeseries::{log_returns, make_grid, TimeSeries, DAILY_DT};

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn train_series(values: &[f64], dt: f64) -> TimeSeries {
    let grid = make_grid(values.len(), dt).unwrap();
    TimeSeries::from_grid(&grid, values.to_vec(), Default::default()).unwrap()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_sde_gp_prior_equivalence() {
    let started = Instant::now();
    let (h, dt, n_paths) = (50usize, DAILY_DT, 2000usize);
    let prior = prior_simulate(
        &PriorParams {
            mu_s: 0.05,
            sigma2: 0.25,
            v0: 0.2,
            s0: 1.0,
        },
        h,
        n_paths,
        dt,
        101,
    )
    .unwrap();
    let sde_params = JointSdeParams {
        mu_s: 0.05,
        sigma: 0.5,
        v0: 0.2,
        s0: 1.0,
    };
    let em: Vec<Vec<f64>> = (0..n_paths)
        .map(|seed| {
            simulate_joint(&sde_params, h, dt, 200_000 + seed as u64)
                .unwrap()
                .0
                .values()
                .to_vec()
        })
        .collect();

    let mut worst_mean_z: f64 = 0.0;
    let mut worst_std_z: f64 = 0.0;
    for step in 0..h {
        let a: Vec<f64> = prior.paths.iter().map(|p| p[step].ln()).collect();
        let b: Vec<f64> = em.iter().map(|p| p[step].ln()).collect();
        let (ma, sa) = mean_and_std(&a);
        let (mb, sb) = mean_and_std(&b);
        let n = n_paths as f64;
        let se_mean = (sa * sa / n + sb * sb / n).sqrt();
        let se_std = (sa * sa / (2.0 * n) + sb * sb / (2.0 * n)).sqrt();
        let zm = (ma - mb).abs() / se_mean;
        let zs = (sa - sb).abs() / se_std;
        assert!(zm < 3.0, "step {step}: mean z = {zm:.2} ({ma} vs {mb})");
        assert!(zs < 3.0, "step {step}: std z = {zs:.2} ({sa} vs {sb})");
        worst_mean_z = worst_mean_z.max(zm);
        worst_std_z = worst_std_z.max(zs);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs <= 60.0, "runtime {secs:.1}s exceeds 1 min");
    println!(
        "PASS criterion 1: hierarchical prior matches the SDE law at every step \
         (worst mean z {worst_mean_z:.2}, worst std z {worst_std_z:.2}, {secs:.1}s)"
    );
}

#[test]
fn criterion_02_kernel_derivations_as_tests() {
    let started = Instant::now();
    let n_paths = 100_000usize;
    let n_grid = 10usize;
    let dt: f64 = 0.02;
    let sigma = 0.5;
    let sigma2 = sigma * sigma;

    // (a) log-volatility paths: empirical Cov(v_i, v_j) vs sigma^2 min(t,t')
    let v0 = 0.2f64;
    let vols: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|seed| {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = stream_rng(777, seed as u64);
            let mut v = v0.ln();
            (0..n_grid)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v += -sigma2 * dt / 2.0 + sigma * dt.sqrt() * z;
                    v
                })
                .collect()
        })
        .collect();
    let mut worst_z: f64 = 0.0;
    let means: Vec<f64> = (0..n_grid)
        .map(|i| vols.iter().map(|p| p[i]).sum::<f64>() / n_paths as f64)
        .collect();
    for i in 0..n_grid {
        for j in 0..n_grid {
            let cov: f64 = vols
                .iter()
                .map(|p| (p[i] - means[i]) * (p[j] - means[j]))
                .sum::<f64>()
                / (n_paths - 1) as f64;
            let ti = (i + 1) as f64 * dt;
            let tj = (j + 1) as f64 * dt;
            let expect = sigma2 * ti.min(tj);
            let var_i = sigma2 * ti;
            let var_j = sigma2 * tj;
            // sampling error of a covariance estimate
            let se = ((var_i * var_j + expect * expect) / n_paths as f64).sqrt();
            let z = (cov - expect).abs() / se;
            assert!(z < 3.0, "v-cov ({i},{j}): z = {z:.2}");
            worst_z = worst_z.max(z);
        }
    }

    // (b) log-data paths under a fixed volatility path vs the volatility
    // integral kernel
    use rand::Rng;
    let mut vrng = stream_rng(778, 0);
    let fixed_vol: Vec<f64> = (0..n_grid).map(|_| vrng.random_range(0.5..2.0)).collect();
    let grid = make_grid(n_grid, dt).unwrap();
    let kernel = VoltKernel::new(grid, fixed_vol.clone()).unwrap();
    let s_paths: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|seed| {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = stream_rng(779, seed as u64);
            let mut s = 0.0;
            (0..n_grid)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s += fixed_vol[k] * dt.sqrt() * z;
                    s
                })
                .collect()
        })
        .collect();
    let idx: Vec<usize> = (0..n_grid).collect();
    let expect_mat = kernel.cov_matrix(&idx, &idx).unwrap();
    let s_means: Vec<f64> = (0..n_grid)
        .map(|i| s_paths.iter().map(|p| p[i]).sum::<f64>() / n_paths as f64)
        .collect();
    let mut worst_z_s: f64 = 0.0;
    for i in 0..n_grid {
        for j in 0..n_grid {
            let cov: f64 = s_paths
                .iter()
                .map(|p| (p[i] - s_means[i]) * (p[j] - s_means[j]))
                .sum::<f64>()
                / (n_paths - 1) as f64;
            let expect = expect_mat[(i, j)];
            let se = ((expect_mat[(i, i)] * expect_mat[(j, j)] + expect * expect)
                / n_paths as f64)
                .sqrt();
            let z = (cov - expect).abs() / se;
            assert!(z < 3.0, "s-cov ({i},{j}): z = {z:.2}");
            worst_z_s = worst_z_s.max(z);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs <= 60.0, "runtime {secs:.1}s exceeds 1 min");
    println!(
        "PASS criterion 2: empirical covariances match the derived kernels \
         (worst z: log-vol {worst_z:.2}, log-data {worst_z_s:.2}, {secs:.1}s)"
    );
}

#[test]
fn criterion_03_self_calibration() {
    let started = Instant::now();
    let n_series = 500usize;
    let (train_n, horizon) = (400usize, 100usize);
    let window = (75usize, 100usize);
    let dt = DAILY_DT;
    let grid = default_percentile_grid();
    let sde_params = JointSdeParams {
        mu_s: 0.05,
        sigma: 0.5,
        v0: 0.2,
        s0: 10.0,
    };

    struct SeriesResult {
        below: Vec<Vec<u32>>, // [percentile][window step]
        steps: usize,
    }

    let results: Vec<SeriesResult> = (0..n_series)
        .into_par_iter()
        .map(|i| {
            let (series, _) =
                simulate_joint(&sde_params, train_n + horizon, dt, 3000 + i as u64).unwrap();
            let train = train_series(&series.values()[..train_n], dt);
            let truth = &series.values()[train_n..];
            let config = VoltConfig {
                seed: i as u64,
                ..Default::default()
            };
            let model = fit_volt(&train, &config).unwrap();
            let ens = forecast(
                &model,
                &ForecastConfig {
                    horizon,
                    n_v: 10,
                    n_s: 100,
                    theta: 0.0,
                    seed: 7000 + i as u64,
                },
            )
            .unwrap();
            let steps: Vec<usize> = (window.0..=window.1).map(|s| s - 1).collect();
            let mut below = vec![vec![0u32; steps.len()]; grid.len()];
            for (si, &step) in steps.iter().enumerate() {
                let samples = ens.step_values(step);
                for (gi, &p) in grid.iter().enumerate() {
                    let q = quantile_of(&samples, p).unwrap();
                    if truth[step] < q {
                        below[gi][si] += 1;
                    }
                }
            }
            SeriesResult {
                below,
                steps: steps.len(),
            }
        })
        .collect();

    let steps = results[0].steps;
    let total = (n_series * steps) as f64;
    let mut worst: f64 = 0.0;
    let mut cal_err = 0.0;
    for (gi, &p) in grid.iter().enumerate() {
        let count: u32 = results
            .iter()
            .map(|r| r.below[gi].iter().sum::<u32>())
            .sum();
        let coverage = count as f64 / total;
        worst = worst.max((coverage - p).abs());
        cal_err += (coverage - p) * (coverage - p);
    }
    cal_err /= grid.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    assert!(
        worst <= 0.07,
        "max |C_p - p| = {worst:.4} exceeds 0.07 (calibration error {cal_err:.5})"
    );
    assert!(cal_err <= 0.002, "calibration error {cal_err:.5} exceeds 0.002");
    assert!(secs <= 1800.0, "runtime {secs:.0}s exceeds 30 min");
    println!(
        "PASS criterion 3: self-calibration over {n_series} series, steps 75-100 \
         (max |C_p - p| {worst:.4}, calibration error {cal_err:.5}, {secs:.0}s)"
    );
}

#[test]
fn criterion_04_directional_nll_ordering() {
    let started = Instant::now();
    let n_series = 50usize;
    let (train_n, horizon) = (400usize, 100usize);
    let window = (75usize, 100usize);
    let dt = DAILY_DT;
    let sde_params = JointSdeParams {
        mu_s: 0.05,
        sigma: 0.5,
        v0: 0.2,
        s0: 10.0,
    };

    let diffs: Vec<(f64, f64)> = (0..n_series)
        .into_par_iter()
        .map(|i| {
            let (series, _) =
                simulate_joint(&sde_params, train_n + horizon, dt, 11_000 + i as u64).unwrap();
            let train = train_series(&series.values()[..train_n], dt);
            let truth = series.values()[train_n..].to_vec();

            // stochastic-volatility model, constant mean
            let model = fit_volt(
                &train,
                &VoltConfig {
                    seed: i as u64,
                    ..Default::default()
                },
            )
            .unwrap();
            let ens_v = forecast(
                &model,
                &ForecastConfig {
                    horizon,
                    n_v: 10,
                    n_s: 100,
                    theta: 0.0,
                    seed: 15_000 + i as u64,
                },
            )
            .unwrap();
            let nll_v = nll_window(&ens_v, &truth, NllSpace::Log, window).unwrap();

            // stationary baseline: Matérn-5/2 + constant mean on log data
            let log_values: Vec<f64> = train.values().iter().map(|v| v.ln()).collect();
            let mean0 = log_values.iter().sum::<f64>() / log_values.len() as f64;
            let var0 = log_values
                .iter()
                .map(|v| (v - mean0) * (v - mean0))
                .sum::<f64>()
                / log_values.len() as f64;
            let prior = MaternPrior::new(0.25, var0.max(1e-4), mean0).unwrap();
            let mut gp = GpModel::new(prior, train.times().to_vec(), log_values, 1e-4).unwrap();
            gp.fit(AdamConfig::default()).unwrap();
            let future: Vec<f64> = (1..=horizon)
                .map(|k| (train_n + k) as f64 * dt)
                .collect();
            let pred = gp.predict(&future).unwrap();
            let samples = pred.sample(1000, 15_500 + i as u64).unwrap();
            let paths: Vec<Vec<f64>> = (0..1000)
                .map(|p| (0..horizon).map(|s| samples[(p, s)].exp()).collect())
                .collect();
            let ens_m = volt::model::ForecastEnsemble {
                future_times: future,
                paths,
                log_space: false,
                provenance: ens_v.provenance.clone(),
            };
            let nll_m = nll_window(&ens_m, &truth, NllSpace::Log, window).unwrap();
            (nll_v, nll_m)
        })
        .collect();

    let mean_v = diffs.iter().map(|d| d.0).sum::<f64>() / n_series as f64;
    let mean_m = diffs.iter().map(|d| d.1).sum::<f64>() / n_series as f64;
    let gaps: Vec<f64> = diffs.iter().map(|d| d.1 - d.0).collect();
    let (gap_mean, gap_std) = mean_and_std(&gaps);
    let gap_se = gap_std / (n_series as f64).sqrt();
    let secs = started.elapsed().as_secs_f64();
    assert!(
        gap_mean >= 2.0 * gap_se && mean_v < mean_m,
        "NLL ordering not established: volt {mean_v:.3}, matern {mean_m:.3}, \
         gap {gap_mean:.3} +/- {gap_se:.3}"
    );
    assert!(secs <= 900.0, "runtime {secs:.0}s exceeds 15 min");
    println!(
        "PASS criterion 4: mean NLL volt+constant {mean_v:.3} < matern+constant {mean_m:.3} \
         (gap {gap_mean:.3} >= 2 x SE {gap_se:.3}, {secs:.0}s)"
    );
}

#[test]
fn criterion_05_gpcv_volatility_recovery() {
    let started = Instant::now();
    let params = SabrParams {
        alpha: 0.6,
        rho: 0.0,
        v0: 0.2,
        s0: 10.0,
    };
    let dt = DAILY_DT;
    let n = 401; // 400 returns
    let mut rmses: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let (series, vol) = simulate_sabr(&params, n, dt, 21_000 + seed).unwrap();
            let returns = log_returns(&series).unwrap();
            let model = gpcv::fit(&returns, AdamConfig::default()).unwrap();
            let grid = make_grid(n, dt).unwrap();
            let est = gpcv::annualize(&model.estimate_vol(&grid, 64, seed).unwrap(), dt).unwrap();
            let mut se = 0.0;
            for i in 0..vol.values.len() {
                let rel = (est.values[i] - vol.values[i]) / vol.values[i];
                se += rel * rel;
            }
            (se / vol.values.len() as f64).sqrt()
        })
        .collect();
    rmses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = rmses[rmses.len() / 2];
    let secs = started.elapsed().as_secs_f64();
    assert!(median <= 0.35, "median relative RMSE {median:.3} exceeds 0.35");
    println!(
        "PASS criterion 5: volatility recovery on 20 SABR series \
         (median relative RMSE {median:.3} <= 0.35, {secs:.0}s)"
    );
}

#[test]
fn criterion_06_mt_gpcv_correlation_recovery() {
    let started = Instant::now();
    // rank-one-expressible target: rho_ij = a_i a_j with a = (0.9, 0.7, 0.5)
    let a = [0.9, 0.7, 0.5];
    let true_corr = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { a[i] * a[j] });
    let params = SabrParams {
        alpha: 0.6,
        rho: 0.0,
        v0: 0.2,
        s0: 10.0,
    };
    let dt = DAILY_DT;
    let mut errs: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let panel = simulate_corr_sabr(3, &true_corr, &params, 401, dt, 31_000 + seed).unwrap();
            let returns: Vec<_> = panel
                .iter()
                .map(|(s, _)| log_returns(s).unwrap())
                .collect();
            let model = gpcv::mt_fit(
                &returns,
                &IntertaskSpec::RankOnePlusDiag { eta: 5.0 },
                AdamConfig::default(),
            )
            .unwrap();
            let est = model.intertask_correlation().unwrap();
            let mut fro = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let d = est[(i, j)] - true_corr[(i, j)];
                    fro += d * d;
                }
            }
            fro.sqrt()
        })
        .collect();
    errs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = errs[errs.len() / 2];
    let secs = started.elapsed().as_secs_f64();
    assert!(median <= 0.2, "median Frobenius error {median:.3} exceeds 0.2 ({errs:?})");
    println!(
        "PASS criterion 6: intertask correlation recovery, P=3 correlated SABR \
         (median Frobenius error {median:.3} <= 0.2, {secs:.0}s)"
    );
}

#[test]
fn criterion_07_gradient_correctness() {
    use rand::Rng;
    let started = Instant::now();
    let mut worst_mll: f64 = 0.0;
    let mut worst_elbo: f64 = 0.0;

    for inst in 0..20u64 {
        let mut rng = stream_rng(41_000, inst);
        // min-kernel GP: kernel scale, noise, mean level
        let n = 25;
        let dt = DAILY_DT;
        let times: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * dt).collect();
        let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0) * dt).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut markov = MarkovGp::new(
            times.clone(),
            y.clone(),
            MinGram::from_increments(&deltas).unwrap(),
            MarkovMean::Constant {
                c: rng.random_range(-0.5..0.5),
            },
            rng.random_range(0.5..2.0),
            rng.random_range(1e-4..1e-2),
            inst % 2 == 0,
        )
        .unwrap();
        let (_v, g) = markov.mll_grad().unwrap();
        let p = markov.params();
        let mut scratch = markov.clone();
        let err = grad_check(
            |pv| {
                scratch.set_params(pv);
                scratch.mll().unwrap()
            },
            &g,
            &p,
            1e-6,
        );
        worst_mll = worst_mll.max(err);
        let _ = &mut markov;

        // stationary baseline: lengthscale, amplitude, mean, noise
        let prior = MaternPrior::new(
            rng.random_range(0.05..0.5),
            rng.random_range(0.5..2.0),
            rng.random_range(-1.0..1.0),
        )
        .unwrap();
        let times_m: Vec<f64> = (0..15).map(|i| (i as f64 + 1.0) * 0.05).collect();
        let y_m: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = GpModel::new(prior, times_m, y_m, 1e-3).unwrap();
        let (_v, g) = dense.mll_grad().unwrap();
        let p = dense.all_params();
        let mut scratch = dense.clone();
        let err = grad_check(
            |pv| {
                scratch.set_all_params(pv);
                scratch.mll().unwrap()
            },
            &g,
            &p,
            1e-5,
        );
        worst_mll = worst_mll.max(err);

        // GPCV ELBO over (m, chol(S), c, log sigma2)
        let t = 10;
        let returns = volt::timeseries::ReturnSeries {
            times: (0..t).map(|i| (i as f64 + 2.0) * dt).collect(),
            returns: (0..t).map(|_| rng.random_range(-0.03..0.03)).collect(),
            dt,
        };
        let mut model = gpcv::fit(&returns, AdamConfig::new(0, 0.1)).unwrap();
        let mut pv = model.packed_params();
        for v in pv.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        model.set_packed_params(&pv);
        let (_v, g) = model.elbo_with_grad().unwrap();
        let mut scratch = model.clone();
        let err = grad_check(
            |pv| {
                scratch.set_packed_params(pv);
                scratch.elbo().unwrap()
            },
            &g,
            &pv,
            1e-6,
        );
        worst_elbo = worst_elbo.max(err);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(worst_mll <= 1e-4, "worst MLL gradient error {worst_mll:.2e}");
    assert!(worst_elbo <= 1e-4, "worst ELBO gradient error {worst_elbo:.2e}");
    println!(
        "PASS criterion 7: analytic gradients match finite differences on 20 instances \
         (worst MLL {worst_mll:.2e}, worst ELBO {worst_elbo:.2e}, {secs:.1}s)"
    );
}

/// Dense mirror of the data GP over an extended min-type kernel, used as the
/// independent conditioning oracle for criterion 8.
#[derive(Clone, Debug)]
struct CumMirror {
    times: Vec<f64>,
    cum: Vec<f64>,
    amp: f64,
    c: f64,
}

impl CumMirror {
    fn idx(&self, t: f64) -> usize {
        self.times
            .iter()
            .position(|&p| (p - t).abs() < 1e-12)
            .unwrap()
    }
}

impl GpPrior for CumMirror {
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
        DVector::from_element(times.len(), self.c)
    }
    fn cov(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.amp * self.cum[self.idx(a[i]).min(self.idx(b[j]))]
        })
    }
    fn cov_grad(&self, _t: &[f64], _k: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn mean_grad(&self, _t: &[f64], _k: usize) -> Option<DVector<f64>> {
        None
    }
}

#[test]
fn criterion_08_rollout_joint_consistency() {
    let started = Instant::now();
    let dt = DAILY_DT;
    let sabr = SabrParams {
        alpha: 0.6,
        rho: 0.0,
        v0: 0.2,
        s0: 10.0,
    };
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let (series, _) = simulate_sabr(&sabr, 120, dt, 51_000 + i).unwrap();
        let model = fit_volt(
            &series,
            &VoltConfig {
                seed: i,
                ..Default::default()
            },
        )
        .unwrap();
        let vols = volt::model::sample_vol_paths(&model, 1, 1, 52_000 + i).unwrap();
        let deltas: Vec<f64> = vols[0].iter().map(|v| v * v * dt).collect();
        let summary = model.data_gp.posterior_summary(&deltas).unwrap();
        let (mu, var) = first_step_moments(&model, &summary).unwrap();

        // independent dense conditioning oracle at the first future point
        let mut all_times = model.grid.times();
        all_times.push(model.grid.future_times(1)[0]);
        let mut cum = model.data_gp.base_cum();
        cum.push(cum.last().unwrap() + deltas[0]);
        let c = match model.data_gp.mean {
            MarkovMean::Constant { c } => c,
            _ => unreachable!(),
        };
        let mirror = CumMirror {
            times: all_times.clone(),
            cum,
            amp: model.data_gp.amp(),
            c,
        };
        let dense = GpModel::new(
            mirror,
            model.grid.times(),
            model.log_values.clone(),
            model.data_gp.noise(),
        )
        .unwrap();
        let pred = dense.predict(&all_times[all_times.len() - 1..]).unwrap();
        let d_mean = (mu - pred.mean[0]).abs();
        let d_var = (var - pred.cov[(0, 0)]).abs();
        assert!(
            d_mean <= 1e-6 && d_var <= 1e-6,
            "model {i}: mean diff {d_mean:.2e}, var diff {d_var:.2e}"
        );
        worst = worst.max(d_mean).max(d_var);
    }
    let secs = started.elapsed().as_secs_f64();
    println!(
        "PASS criterion 8: rollout one-step distribution equals the joint posterior \
         marginal on 10 fitted models (worst diff {worst:.2e} <= 1e-6, {secs:.1}s)"
    );
}

#[test]
fn criterion_09_mean_reversion_theta_one_exactness() {
    let started = Instant::now();
    let dt = DAILY_DT;
    let sabr = SabrParams {
        alpha: 0.6,
        rho: 0.0,
        v0: 0.2,
        s0: 10.0,
    };
    for i in 0..5u64 {
        let (series, _) = simulate_sabr(&sabr, 90, dt, 61_000 + i).unwrap();
        let model = fit_volt(
            &series,
            &VoltConfig {
                seed: i,
                ..Default::default()
            },
        )
        .unwrap();
        // zero predictive variance exposes the sampling mean itself: at
        // theta = 1 every sampled value must be the training log-mean,
        // bit for bit
        let h = 8;
        let summary = PosteriorSummary {
            kappa: 0.37,
            g0: 0.0,
            step_vars: vec![0.0; h],
        };
        let mut rng = stream_rng(62_000 + i, 0);
        let path = rollout_with_summary(
            &model.data_gp,
            &model.grid,
            &summary,
            None,
            1.0,
            model.train_log_mean,
            h,
            &mut rng,
        )
        .unwrap();
        for v in path {
            assert!(
                v == model.train_log_mean,
                "theta=1 predictive mean differs from the training mean bitwise"
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    println!(
        "PASS criterion 9: theta = 1 pins every one-step predictive mean to the \
         training log-mean bit-for-bit ({secs:.1}s)"
    );
}

/// Gauss–Hermite nodes/weights via Golub–Welsch (physicists' convention).
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i - 1, i)] = b;
        j[(i, i - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            (
                eig.eigenvalues[k],
                std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2),
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

#[test]
fn criterion_10_closed_form_matches_quadrature() {
    let started = Instant::now();
    let (xs, ws) = gauss_hermite(64);
    let quadrature = |mu: f64, var: f64, w: f64| -> f64 {
        let sd = var.sqrt();
        let mut acc = 0.0;
        for (x, wt) in xs.iter().zip(&ws) {
            let f = mu + std::f64::consts::SQRT_2 * sd * x;
            acc += wt
                * (-0.5 * (2.0 * std::f64::consts::PI).ln() - f - 0.5 * w * w * (-2.0 * f).exp());
        }
        acc / std::f64::consts::PI.sqrt()
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let mu = -3.0 + 6.0 * (i as f64 / 9.0);
                let var = 2.0 * (j as f64 / 9.0);
                let w = -2.0 + 4.0 * (k as f64 / 9.0);
                let closed = expected_loglik(mu, var, w);
                let quad = quadrature(mu, var, w);
                let err = (closed - quad).abs() / closed.abs().max(1.0);
                assert!(
                    err <= 1e-8,
                    "mu {mu} var {var} w {w}: closed {closed} vs quadrature {quad}"
                );
                worst = worst.max(err);
                count += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    println!(
        "PASS criterion 10: closed-form expected log-likelihood matches 64-point \
         Gauss-Hermite quadrature on {count} points (worst rel err {worst:.2e} <= 1e-8, {secs:.1}s)"
    );
}

#[test]
fn criterion_11_cli_determinism() {
    let started = Instant::now();
    let dir = std::env::temp_dir().join(format!("volt-acceptance-11-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let volt_bin = env!("CARGO_BIN_EXE_volt");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(volt_bin)
            .args(args)
            .output()
            .expect("spawn volt");
        assert!(
            out.status.success(),
            "volt {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let data = dir.join("data.csv");
    run(&[
        "--simulate.n=400",
        "--simulate.seed=5",
        "simulate",
        "--out",
        data.to_str().unwrap(),
    ]);
    for pass in ["a", "b"] {
        let model = dir.join(format!("model-{pass}.json"));
        let fdir = dir.join(format!("forecast-{pass}"));
        run(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ]);
        run(&[
            "--forecast.horizon=50",
            "--forecast.n_v=5",
            "--forecast.n_s=20",
            "--forecast.seed=9",
            "forecast",
            "--model",
            model.to_str().unwrap(),
            "--out",
            fdir.to_str().unwrap(),
        ]);
    }
    for file in ["model-a.json", "model-b.json"] {
        assert!(dir.join(file).exists());
    }
    assert_eq!(
        std::fs::read(dir.join("model-a.json")).unwrap(),
        std::fs::read(dir.join("model-b.json")).unwrap(),
        "fit artifacts differ between identical runs"
    );
    for file in ["paths.csv", "fan.csv", "meta.json"] {
        assert_eq!(
            std::fs::read(dir.join("forecast-a").join(file)).unwrap(),
            std::fs::read(dir.join("forecast-b").join(file)).unwrap(),
            "forecast output {file} differs between identical runs"
        );
    }
    let secs = started.elapsed().as_secs_f64();
    println!(
        "PASS criterion 11: fit + forecast with a fixed seed produce byte-identical \
         outputs across two runs ({secs:.1}s)"
    );
}

#[test]
fn criterion_12_performance_envelope() {
    let dt = DAILY_DT;
    let sabr = SabrParams {
        alpha: 0.6,
        rho: 0.0,
        v0: 0.2,
        s0: 10.0,
    };
    let (series, _) = simulate_sabr(&sabr, 400, dt, 71_000).unwrap();

    let t_fit = Instant::now();
    let model = fit_volt(&series, &VoltConfig::default()).unwrap();
    let fit_secs = t_fit.elapsed().as_secs_f64();
    assert!(fit_secs <= 60.0, "single fit took {fit_secs:.1}s (> 60s)");

    // 1000 paths x 100 steps, jointly sampled (constant mean)
    let t_joint = Instant::now();
    let ens = forecast(
        &model,
        &ForecastConfig {
            horizon: 100,
            n_v: 10,
            n_s: 100,
            theta: 0.0,
            seed: 72_000,
        },
    )
    .unwrap();
    let joint_secs = t_joint.elapsed().as_secs_f64();
    assert_eq!(ens.n_paths(), 1000);
    assert!(joint_secs <= 120.0, "joint forecast took {joint_secs:.1}s (> 120s)");

    // same budget through the sequential rollout path (moving-average mean)
    let cfg_magpie = VoltConfig {
        mean: MeanSpec::magpie_daily(),
        ..Default::default()
    };
    let model_m = fit_volt(&series, &cfg_magpie).unwrap();
    let t_roll = Instant::now();
    let ens_m = forecast(
        &model_m,
        &ForecastConfig {
            horizon: 100,
            n_v: 10,
            n_s: 100,
            theta: 0.0,
            seed: 73_000,
        },
    )
    .unwrap();
    let roll_secs = t_roll.elapsed().as_secs_f64();
    assert_eq!(ens_m.n_paths(), 1000);
    assert!(roll_secs <= 120.0, "rollout forecast took {roll_secs:.1}s (> 120s)");
    println!(
        "PASS criterion 12: T=400 fit {fit_secs:.2}s <= 60s; 1000x100 forecast \
         joint {joint_secs:.2}s, rollout {roll_secs:.2}s <= 120s"
    );
}
