//! Forecast evaluation: empirical quantiles, calibration curves, negative
//! log likelihood and mean absolute error.
//!
//! Calibration at percentile `p` is the frequency with which the realized
//! value falls below the forecast ensemble's empirical `p`-quantile,
//! aggregated over `K` forecasts and a window of lookahead steps. A
//! well-calibrated forecaster has `C_p ≈ p` across the whole percentile
//! grid; the scalar calibration error is the mean of `(C_p - p)^2` over the
//! grid.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoltError};
use crate::model::ForecastEnsemble;

/// Default percentile grid: 0.05, 0.10, ..., 0.95.
pub fn default_percentile_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Default lookahead window (inclusive, 1-based steps).
pub const DEFAULT_STEP_WINDOW: (usize, usize) = (75, 100);

/// Order-statistic quantile with linear interpolation between ranks
/// (`h = (n - 1) p`, interpolating adjacent order statistics; the boundary
/// clamps to the extreme sample).
pub fn quantile_of(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(VoltError::Invalid("quantile of an empty sample".into()));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(VoltError::invalid_param("p", "must lie in (0, 1)"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Empirical `p`-quantile of the ensemble at one lookahead step.
pub fn quantile(ensemble: &ForecastEnsemble, p: f64, step: usize) -> Result<f64> {
    if step >= ensemble.horizon() {
        return Err(VoltError::IndexOutOfRange {
            index: step,
            len: ensemble.horizon(),
        });
    }
    quantile_of(&ensemble.step_values(step), p)
}

/// Calibration aggregated over forecasts and a step window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub percentiles: Vec<f64>,
    /// Coverage per percentile, aggregated over the window.
    pub coverage: Vec<f64>,
    /// Coverage per percentile per lookahead step in the window.
    pub coverage_by_step: Vec<Vec<f64>>,
    /// Inclusive 1-based step window the aggregation ran over.
    pub step_window: (usize, usize),
    /// Number of forecasts aggregated.
    pub k: usize,
    pub calibration_error: f64,
    pub nll_mean: f64,
    pub nll_se: f64,
    pub mae: f64,
}

/// Truth values aligned with one forecast ensemble over its horizon.
#[derive(Debug, Clone)]
pub struct TruthPath {
    pub values: Vec<f64>,
}

fn check_window(window: (usize, usize), horizon: usize) -> Result<(usize, usize)> {
    let (lo, hi) = window;
    if lo == 0 || hi < lo {
        return Err(VoltError::invalid_param(
            "step window",
            "need 1 <= start <= end",
        ));
    }
    Ok((lo.min(horizon), hi.min(horizon)))
}

/// Empirical coverage `C_p` over a percentile grid: the fraction of
/// (forecast, step) pairs whose realized value lies below the ensemble's
/// `p`-quantile. Forecast/truth pairs must align; steps are 1-based and the
/// window is clipped to the horizon.
pub fn calibration_curve(
    forecasts: &[ForecastEnsemble],
    truths: &[TruthPath],
    grid: &[f64],
    window: (usize, usize),
) -> Result<CalibrationReport> {
    if forecasts.is_empty() || forecasts.len() != truths.len() {
        return Err(VoltError::DimensionMismatch {
            context: "calibration forecasts vs truths",
            expected: forecasts.len().max(1),
            got: truths.len(),
        });
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(VoltError::invalid_param("grid", "must be strictly increasing"));
        }
    }
    let horizon = forecasts[0].horizon();
    let (lo, hi) = check_window(window, horizon)?;
    let steps: Vec<usize> = (lo..=hi).map(|s| s - 1).collect();
    let mut below = vec![vec![0usize; steps.len()]; grid.len()];
    let mut count = vec![0usize; steps.len()];
    for (ens, truth) in forecasts.iter().zip(truths) {
        if truth.values.len() < hi {
            return Err(VoltError::DimensionMismatch {
                context: "truth path length vs step window",
                expected: hi,
                got: truth.values.len(),
            });
        }
        for (si, &step) in steps.iter().enumerate() {
            let samples = ens.step_values(step);
            let t = truth.values[step];
            count[si] += 1;
            for (gi, &p) in grid.iter().enumerate() {
                let q = quantile_of(&samples, p)?;
                if t < q {
                    below[gi][si] += 1;
                }
            }
        }
    }
    let coverage_by_step: Vec<Vec<f64>> = (0..grid.len())
        .map(|gi| {
            (0..steps.len())
                .map(|si| below[gi][si] as f64 / count[si] as f64)
                .collect()
        })
        .collect();
    let total: usize = count.iter().sum();
    let coverage: Vec<f64> = (0..grid.len())
        .map(|gi| below[gi].iter().sum::<usize>() as f64 / total as f64)
        .collect();
    let calibration_error = coverage
        .iter()
        .zip(grid)
        .map(|(c, p)| (c - p) * (c - p))
        .sum::<f64>()
        / grid.len() as f64;

    // per-forecast NLL and MAE over the window
    let mut nlls = Vec::with_capacity(forecasts.len());
    let mut maes = Vec::with_capacity(forecasts.len());
    for (ens, truth) in forecasts.iter().zip(truths) {
        nlls.push(nll_window(ens, &truth.values, NllSpace::Log, (lo, hi))?);
        maes.push(mae_window(ens, &truth.values, (lo, hi))?);
    }
    let k = forecasts.len();
    let nll_mean = nlls.iter().sum::<f64>() / k as f64;
    let nll_se = if k > 1 {
        let var = nlls
            .iter()
            .map(|x| (x - nll_mean) * (x - nll_mean))
            .sum::<f64>()
            / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    let mae = maes.iter().sum::<f64>() / k as f64;
    Ok(CalibrationReport {
        percentiles: grid.to_vec(),
        coverage,
        coverage_by_step,
        step_window: (lo, hi),
        k,
        calibration_error,
        nll_mean,
        nll_se,
        mae,
    })
}

/// Mean over the percentile grid of `(C_p - p)^2`.
pub fn calibration_error(report: &CalibrationReport) -> f64 {
    report.calibration_error
}

/// Density space for the NLL: `Log` scores the Gaussian moment-matched
/// log-space ensemble at `log(truth)`; `Raw` adds the `log(truth)` Jacobian
/// of the log-normal density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NllSpace {
    Log,
    Raw,
}

const NLL_VAR_FLOOR: f64 = 1e-8;

/// Per-test-point NLL at one lookahead step from the ensemble's log-space
/// moments (the marginals are modeled as log-normal).
pub fn nll(ensemble: &ForecastEnsemble, truth: f64, space: NllSpace, step: usize) -> Result<f64> {
    if step >= ensemble.horizon() {
        return Err(VoltError::IndexOutOfRange {
            index: step,
            len: ensemble.horizon(),
        });
    }
    if !(truth > 0.0) || !truth.is_finite() {
        return Err(VoltError::NonPositive {
            context: "nll truth value",
            value: truth,
        });
    }
    let samples = ensemble.step_values(step);
    if samples.is_empty() {
        return Err(VoltError::Invalid("nll of an empty ensemble".into()));
    }
    let logs: Vec<f64> = samples.iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = if logs.len() > 1 {
        logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    }
    .max(NLL_VAR_FLOOR);
    let lt = truth.ln();
    let log_density =
        -0.5 * ((lt - mean) * (lt - mean) / var) - 0.5 * var.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut out = -log_density;
    if space == NllSpace::Raw {
        out += lt;
    }
    Ok(out)
}

/// Mixture-of-Gaussians alternative: scores `log(truth)` against a kernel
/// mixture over the sampled log values (bandwidth by Silverman's rule).
pub fn nll_mixture(
    ensemble: &ForecastEnsemble,
    truth: f64,
    space: NllSpace,
    step: usize,
) -> Result<f64> {
    if step >= ensemble.horizon() {
        return Err(VoltError::IndexOutOfRange {
            index: step,
            len: ensemble.horizon(),
        });
    }
    if !(truth > 0.0) || !truth.is_finite() {
        return Err(VoltError::NonPositive {
            context: "nll truth value",
            value: truth,
        });
    }
    let logs: Vec<f64> = ensemble.step_values(step).iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0))
        .sqrt()
        .max(NLL_VAR_FLOOR.sqrt());
    let bw = 1.06 * sd * n.powf(-0.2);
    let lt = truth.ln();
    let mut terms: Vec<f64> = logs
        .iter()
        .map(|m| {
            let z = (lt - m) / bw;
            -0.5 * z * z - bw.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::MIN, f64::max);
    let log_density = max + terms.drain(..).map(|t| (t - max).exp()).sum::<f64>().ln() - n.ln();
    let mut out = -log_density;
    if space == NllSpace::Raw {
        out += lt;
    }
    Ok(out)
}

/// Mean per-point NLL over a 1-based inclusive step window.
pub fn nll_window(
    ensemble: &ForecastEnsemble,
    truth: &[f64],
    space: NllSpace,
    window: (usize, usize),
) -> Result<f64> {
    let (lo, hi) = check_window(window, ensemble.horizon())?;
    let mut acc = 0.0;
    let mut count = 0;
    for step in (lo - 1)..hi {
        acc += nll(ensemble, truth[step], space, step)?;
        count += 1;
    }
    Ok(acc / count as f64)
}

/// `|ensemble mean - truth|` averaged over the window.
pub fn mae_window(ensemble: &ForecastEnsemble, truth: &[f64], window: (usize, usize)) -> Result<f64> {
    let (lo, hi) = check_window(window, ensemble.horizon())?;
    let mut acc = 0.0;
    let mut count = 0;
    for step in (lo - 1)..hi {
        let samples = ensemble.step_values(step);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        acc += (mean - truth[step]).abs();
        count += 1;
    }
    Ok(acc / count as f64)
}

/// MAE at a single step.
pub fn mae(ensemble: &ForecastEnsemble, truth: f64, step: usize) -> Result<f64> {
    if step >= ensemble.horizon() {
        return Err(VoltError::IndexOutOfRange {
            index: step,
            len: ensemble.horizon(),
        });
    }
    let samples = ensemble.step_values(step);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok((mean - truth).abs())
}
