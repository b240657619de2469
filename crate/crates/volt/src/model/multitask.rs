//! Multi-task pipeline: correlated volatilities, independent prices.
//!
//! One multi-task GPCV infers per-task volatility paths jointly; a
//! multi-task GP over log volatility (intertask covariance times the
//! Brownian kernel) models their co-movement; conditional on sampled
//! volatility paths the data series are independent, so each task keeps its
//! own data-space GP and sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::gp::markov::{FutureLaw, MarkovGp, MarkovMean};
use crate::gpcv::{self, IntertaskSpec, MtGpcvModel};
use crate::kernels::VoltKernel;
use crate::means::MagpieMean;
use crate::model::mtvol::MtVolGp;
use crate::model::{
    EnsembleProvenance, ForecastConfig, ForecastEnsemble, MeanSpec, VoltConfig, MIN_SERIES_LEN,
};
use crate::opt::AdamConfig;
use crate::rng::stream_rng;
use crate::timeseries::{TimeGrid, TimeSeries, VolatilityPath};

/// Fitted multi-task model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtVoltModel {
    pub config: VoltConfig,
    pub gpcv: MtGpcvModel,
    /// Annualized per-task volatility estimates on the training grid.
    pub volpaths: Vec<VolatilityPath>,
    pub vol_gp: MtVolGp,
    pub data_gps: Vec<MarkovGp>,
    pub grid: TimeGrid,
    pub log_values: Vec<Vec<f64>>,
    pub train_log_means: Vec<f64>,
    pub labels: Vec<String>,
    pub shifts: Vec<f64>,
}

impl MtVoltModel {
    pub fn p(&self) -> usize {
        self.data_gps.len()
    }

    /// Learned intertask correlation of the volatility processes (from the
    /// multi-task GPCV).
    pub fn intertask_correlation(&self) -> Result<nalgebra::DMatrix<f64>> {
        self.gpcv.intertask_correlation()
    }
}

fn log_view(series: &TimeSeries) -> Result<(Vec<f64>, f64)> {
    if series.meta.log_applied {
        return Ok((series.values().to_vec(), series.meta.shift));
    }
    let mut out = Vec::with_capacity(series.len());
    for &v in series.values() {
        if v <= 0.0 {
            return Err(VoltError::NonPositive {
                context: "raw series value for log transform",
                value: v,
            });
        }
        out.push(v.ln());
    }
    Ok((out, 0.0))
}

/// Fit the multi-task pipeline on a complete panel sharing one grid.
pub fn fit_mt_volt(
    panel: &[TimeSeries],
    intertask: &IntertaskSpec,
    config: &VoltConfig,
) -> Result<MtVoltModel> {
    if panel.is_empty() {
        return Err(VoltError::invalid_param("panel", "need at least one task"));
    }
    let grid = panel[0].grid()?;
    for series in panel {
        if series.len() < MIN_SERIES_LEN {
            return Err(VoltError::SeriesTooShort {
                len: series.len(),
                min: MIN_SERIES_LEN,
            });
        }
        let g = series.grid()?;
        if g != grid {
            return Err(VoltError::Invalid("panel tasks disagree on the time grid".into()));
        }
    }
    let p = panel.len();
    let dt = grid.dt();

    let mut log_values = Vec::with_capacity(p);
    let mut shifts = Vec::with_capacity(p);
    let mut returns = Vec::with_capacity(p);
    for series in panel {
        let (lv, shift) = log_view(series)?;
        let mut r = Vec::with_capacity(lv.len() - 1);
        for w in lv.windows(2) {
            r.push(w[1] - w[0]);
        }
        returns.push(crate::timeseries::ReturnSeries {
            times: grid.times()[1..].to_vec(),
            returns: r,
            dt,
        });
        log_values.push(lv);
        shifts.push(shift);
    }

    // (a) joint volatility inference
    let gpcv_model = gpcv::mt_fit_with_sigma2(
        &returns,
        intertask,
        AdamConfig::new(config.gpcv_steps, config.gpcv_lr),
        config.gpcv_sigma2_init,
    )?;
    let per_step = gpcv_model.estimate_vols(&grid, config.j_samples, config.seed)?;
    let volpaths: Vec<VolatilityPath> = per_step
        .iter()
        .map(|v| gpcv::annualize(v, dt))
        .collect::<Result<_>>()?;

    // (b) multi-task volvol fit on the log volatilities
    let log_vols: Vec<Vec<f64>> = volpaths
        .iter()
        .map(|vp| vp.values.iter().map(|v| v.ln()).collect())
        .collect();
    let mut vol_gp = MtVolGp::new(
        grid.clone(),
        log_vols,
        intertask,
        config.noise_init,
        config.vol_drift,
    )?;
    vol_gp.fit(AdamConfig::new(config.gp_steps, config.gp_lr))?;

    // (c) independent data GPs conditioned on their own volatility paths
    let mut data_gps = Vec::with_capacity(p);
    let mut train_log_means = Vec::with_capacity(p);
    for q in 0..p {
        let kernel = VoltKernel::from_path(&volpaths[q])?;
        let lv = &log_values[q];
        let mean = match config.mean {
            MeanSpec::Constant => MarkovMean::Constant {
                c: lv.iter().sum::<f64>() / lv.len() as f64,
            },
            MeanSpec::Linear => MarkovMean::Linear {
                mu_s: 0.0,
                s0: lv[0],
            },
            MeanSpec::Magpie { variant, k, mode } => {
                let magpie = MagpieMean::new(k, variant, mode)?;
                MarkovMean::Fixed(magpie.training_means(lv)?)
            }
        };
        let mut gp = MarkovGp::new(
            grid.times(),
            lv.clone(),
            kernel.min_gram()?,
            mean,
            1.0,
            config.noise_init,
            false,
        )?;
        gp.fit(AdamConfig::new(config.gp_steps, config.gp_lr))?;
        train_log_means.push(lv.iter().sum::<f64>() / lv.len() as f64);
        data_gps.push(gp);
    }

    Ok(MtVoltModel {
        config: config.clone(),
        gpcv: gpcv_model,
        volpaths,
        vol_gp,
        data_gps,
        grid,
        log_values,
        train_log_means,
        labels: panel.iter().map(|s| s.meta.label.clone()).collect(),
        shifts,
    })
}

/// Jointly sample correlated volatility paths, then run per-task independent
/// data-space sampling. Returns one ensemble per task.
pub fn forecast_mt(model: &MtVoltModel, cfg: &ForecastConfig) -> Result<Vec<ForecastEnsemble>> {
    cfg.validate()?;
    let p = model.p();
    let h = cfg.horizon;
    let dt = model.grid.dt();
    let law = model.vol_gp.future_law(h)?;

    let mut paths: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.n_v * cfg.n_s); p];
    for v_idx in 0..cfg.n_v {
        let vols = law.sample(cfg.seed, v_idx); // P x H annualized
        for q in 0..p {
            let deltas: Vec<f64> = vols[q].iter().map(|v| v * v * dt).collect();
            let summary = model.data_gps[q].posterior_summary(&deltas)?;
            let needs_rollout = model.config.mean.is_magpie() || cfg.theta > 0.0;
            let magpie = match model.config.mean {
                MeanSpec::Magpie { variant, k, mode } => {
                    let m = MagpieMean::new(k, variant, mode)?;
                    Some(m.primed(&model.log_values[q]))
                }
                _ => None,
            };
            for s_idx in 0..cfg.n_s {
                let stream =
                    (cfg.n_v * p + (v_idx * p + q) * cfg.n_s + s_idx) as u64;
                let mut rng = stream_rng(cfg.seed, stream);
                let log_path = if needs_rollout {
                    super::rollout_with_summary(
                        &model.data_gps[q],
                        &model.grid,
                        &summary,
                        magpie.as_ref(),
                        cfg.theta,
                        model.train_log_means[q],
                        h,
                        &mut rng,
                    )?
                } else {
                    let means = match model.data_gps[q].mean {
                        MarkovMean::Constant { c } => vec![c; h],
                        MarkovMean::Linear { mu_s, s0 } => model
                            .grid
                            .future_times(h)
                            .iter()
                            .map(|t| t * mu_s + s0)
                            .collect(),
                        MarkovMean::Fixed(_) => unreachable!(),
                    };
                    FutureLaw::new(means, summary.clone()).sample_path(&mut rng)
                };
                paths[q].push(log_path.into_iter().map(|x| x.exp()).collect());
            }
        }
    }

    Ok((0..p)
        .map(|q| ForecastEnsemble {
            future_times: model.grid.future_times(h),
            paths: std::mem::take(&mut paths[q]),
            log_space: false,
            provenance: EnsembleProvenance {
                label: model.labels[q].clone(),
                seed: cfg.seed,
                theta: cfg.theta,
                n_v: cfg.n_v,
                n_s: cfg.n_s,
                shift: model.shifts[q],
            },
        })
        .collect())
}
