//! GP mean functions: parametric drifts and the moving-average family.
//!
//! The moving-average means predict the next value of a series from a
//! truncated exponentially weighted sum of the most recent `k` observations,
//!
//! ```text
//! ema(h)_{i+1} = alpha * [h_i + (1-alpha) h_{i-1} + ... + (1-alpha)^{k-1} h_{i-(k-1)}]
//! ```
//!
//! with smoothing `alpha = 2 / (k + 1)`. The truncation leaves weight mass
//! `(1-alpha)^k` unassigned, which biases constant signals low by roughly
//! `e^-2` (about 13.5%); the default `Normalized` mode divides by the
//! truncated weight sum `1 - (1-alpha)^m` so that a constant history is a
//! fixed point. `Literal` mode keeps the raw truncated sum.
//!
//! DEMA and TEMA are the standard lag-corrected compositions:
//! `dema = 2 ema - ema(ema)` and `tema = 3 ema - 3 ema(ema) + ema(ema(ema))`.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Result, VoltError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaMode {
    Normalized,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaVariant {
    Ema,
    Dema,
    Tema,
}

pub fn smoothing_alpha(k: usize) -> f64 {
    2.0 / (k as f64 + 1.0)
}

/// EMA series over `values`: `out[i]` is the exponentially weighted average
/// of `values[..=i]` truncated to the most recent `k` terms.
fn ema_series(values: &[f64], k: usize, mode: MaMode) -> Vec<f64> {
    let alpha = smoothing_alpha(k);
    let beta = 1.0 - alpha;
    let n = values.len();
    let mut raw = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc = beta * acc + alpha * v;
        if i >= k {
            // slide the truncated window
            acc -= alpha * beta.powi(k as i32) * values[i - k];
        }
        raw.push(acc);
    }
    match mode {
        MaMode::Literal => raw,
        MaMode::Normalized => raw
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let m = (i + 1).min(k) as i32;
                v / (1.0 - beta.powi(m))
            })
            .collect(),
    }
}

fn check_history(history: &[f64], k: usize) -> Result<()> {
    if history.is_empty() {
        return Err(VoltError::Invalid("empty moving-average history".into()));
    }
    if k == 0 {
        return Err(VoltError::invalid_param("k", "window length must be >= 1"));
    }
    Ok(())
}

/// Predicted mean for the step following `history`.
pub fn ema_next(history: &[f64], k: usize, mode: MaMode) -> Result<f64> {
    check_history(history, k)?;
    Ok(*ema_series(history, k, mode).last().unwrap())
}

pub fn dema_next(history: &[f64], k: usize, mode: MaMode) -> Result<f64> {
    check_history(history, k)?;
    let e1 = ema_series(history, k, mode);
    let e2 = ema_series(&e1, k, mode);
    Ok(2.0 * e1.last().unwrap() - e2.last().unwrap())
}

pub fn tema_next(history: &[f64], k: usize, mode: MaMode) -> Result<f64> {
    check_history(history, k)?;
    let e1 = ema_series(history, k, mode);
    let e2 = ema_series(&e1, k, mode);
    let e3 = ema_series(&e2, k, mode);
    Ok(3.0 * e1.last().unwrap() - 3.0 * e2.last().unwrap() + e3.last().unwrap())
}

pub fn ma_next(history: &[f64], k: usize, variant: MaVariant, mode: MaMode) -> Result<f64> {
    match variant {
        MaVariant::Ema => ema_next(history, k, mode),
        MaVariant::Dema => dema_next(history, k, mode),
        MaVariant::Tema => tema_next(history, k, mode),
    }
}

/// Moving-average mean with a bounded history buffer.
///
/// During rollouts each sampled path owns an independent clone; sampled
/// values are pushed exactly as if they were observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagpieMean {
    pub k: usize,
    pub variant: MaVariant,
    pub mode: MaMode,
    buffer: VecDeque<f64>,
}

impl MagpieMean {
    pub fn new(k: usize, variant: MaVariant, mode: MaMode) -> Result<Self> {
        if k == 0 {
            return Err(VoltError::invalid_param("k", "window length must be >= 1"));
        }
        Ok(MagpieMean {
            k,
            variant,
            mode,
            buffer: VecDeque::with_capacity(k),
        })
    }

    pub fn alpha(&self) -> f64 {
        smoothing_alpha(self.k)
    }

    pub fn push(&mut self, value: f64) {
        if self.buffer.len() == self.k {
            self.buffer.pop_front();
        }
        self.buffer.push_back(value);
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Mean prediction for the next step given the buffered history.
    pub fn predict_next(&self) -> Result<f64> {
        let h: Vec<f64> = self.buffer.iter().copied().collect();
        ma_next(&h, self.k, self.variant, self.mode)
    }

    /// One-step-ahead mean at every training point: entry `i` is the
    /// prediction for `values[i]` from the points before it. The first entry
    /// is pinned to the first observation (zero residual).
    pub fn training_means(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.is_empty() {
            return Err(VoltError::Invalid("empty moving-average history".into()));
        }
        let mut state = MagpieMean::new(self.k, self.variant, self.mode)?;
        let mut out = Vec::with_capacity(values.len());
        out.push(values[0]);
        state.push(values[0]);
        for &v in &values[1..] {
            out.push(state.predict_next()?);
            state.push(v);
        }
        Ok(out)
    }

    /// State primed with a full history (only the last `k` values are kept).
    pub fn primed(&self, values: &[f64]) -> Self {
        let mut state = self.clone();
        state.buffer.clear();
        for &v in values.iter().rev().take(self.k).rev() {
            state.push(v);
        }
        state
    }
}

/// Parametric drift means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriftMean {
    Constant { c: f64 },
    Linear { mu_s: f64, s0: f64 },
    /// Drift of the log of a driftless geometric process: `-t sigma^2 / 2`.
    BrownianDrift { sigma2: f64 },
}

pub fn drift_mean(t: f64, params: DriftMean) -> f64 {
    match params {
        DriftMean::Constant { c } => c,
        DriftMean::Linear { mu_s, s0 } => t * mu_s + s0,
        DriftMean::BrownianDrift { sigma2 } => -t * sigma2 / 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ema_constant_is_fixed_point_when_normalized() {
        for k in [1, 2, 5, 40] {
            let h = vec![3.25; 7];
            assert_relative_eq!(
                ema_next(&h, k, MaMode::Normalized).unwrap(),
                3.25,
                epsilon = 1e-12
            );
            assert_relative_eq!(
                dema_next(&h, k, MaMode::Normalized).unwrap(),
                3.25,
                epsilon = 1e-12
            );
            assert_relative_eq!(
                tema_next(&h, k, MaMode::Normalized).unwrap(),
                3.25,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ema_literal_truncated_sum() {
        // k=2 (alpha = 2/3), history all ones: 2/3 * (1 + 1/3) = 8/9,
        // frozen from direct evaluation of the truncated sum.
        let h = vec![1.0; 10];
        assert_relative_eq!(
            ema_next(&h, 2, MaMode::Literal).unwrap(),
            8.0 / 9.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ema_single_observation() {
        let h = [4.0];
        let alpha = smoothing_alpha(3);
        assert_relative_eq!(ema_next(&h, 3, MaMode::Normalized).unwrap(), 4.0);
        assert_relative_eq!(ema_next(&h, 3, MaMode::Literal).unwrap(), alpha * 4.0);
        assert!(ema_next(&[], 3, MaMode::Normalized).is_err());
    }

    #[test]
    fn k_one_is_identity_on_last_value() {
        let h = [1.0, -2.0, 7.5];
        for variant in [MaVariant::Ema, MaVariant::Dema, MaVariant::Tema] {
            for mode in [MaMode::Normalized, MaMode::Literal] {
                assert_relative_eq!(ma_next(&h, 1, variant, mode).unwrap(), 7.5);
            }
        }
    }

    #[test]
    fn literal_equals_normalized_times_weight_sum_for_full_window() {
        let h: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin() + 2.0).collect();
        for k in [2, 5, 11] {
            let beta = 1.0 - smoothing_alpha(k);
            let lit = ema_next(&h, k, MaMode::Literal).unwrap();
            let norm = ema_next(&h, k, MaMode::Normalized).unwrap();
            assert_relative_eq!(lit, norm * (1.0 - beta.powi(k as i32)), epsilon = 1e-10);
        }
    }

    #[test]
    fn ramp_lag_dema_below_ema() {
        // Long-ramp oracle: feed h_i = i through full-history moving averages
        // and measure the steady-state offset from the ramp.
        let k = 20;
        let n = 400;
        let h: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let next = (n - 1) as f64; // prediction target index uses latest value
        let ema_lag = next - ema_next(&h, k, MaMode::Normalized).unwrap();
        let dema_lag = next - dema_next(&h, k, MaMode::Normalized).unwrap();
        assert!(ema_lag > 1.0, "ema lag {ema_lag}");
        assert!(
            dema_lag.abs() < 0.2 * ema_lag,
            "dema lag {dema_lag} vs ema lag {ema_lag}"
        );
        assert!(dema_lag < ema_lag);
    }

    #[test]
    fn recursive_ema_ramp_lag_is_half_k_minus_one() {
        // The untruncated recursive EMA r_t = alpha h_t + (1-alpha) r_{t-1}
        // lags a ramp by (k-1)/2 in steady state; the truncated window keeps
        // strictly less history so it must lag less.
        let k = 21;
        let alpha = smoothing_alpha(k);
        let n = 3000;
        let mut r = 0.0;
        for i in 0..n {
            r = alpha * (i as f64) + (1.0 - alpha) * r;
        }
        let lag = (n - 1) as f64 - r;
        assert_relative_eq!(lag, (k as f64 - 1.0) / 2.0, epsilon = 1e-6);
        let h: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let truncated_lag = (n - 1) as f64 - ema_next(&h, k, MaMode::Normalized).unwrap();
        assert!(truncated_lag < lag);
    }

    #[test]
    fn magpie_buffer_keeps_last_k() {
        let mut m = MagpieMean::new(3, MaVariant::Ema, MaMode::Normalized).unwrap();
        for v in [1.0, 2.0, 3.0, 4.0, 5.0] {
            m.push(v);
        }
        // buffer is [3, 4, 5]; prediction must match the bare function on it
        assert_relative_eq!(
            m.predict_next().unwrap(),
            ema_next(&[3.0, 4.0, 5.0], 3, MaMode::Normalized).unwrap()
        );
    }

    #[test]
    fn training_means_align_one_step_ahead() {
        let m = MagpieMean::new(2, MaVariant::Ema, MaMode::Normalized).unwrap();
        let vals = [1.0, 2.0, 3.0];
        let means = m.training_means(&vals).unwrap();
        assert_relative_eq!(means[0], 1.0);
        assert_relative_eq!(means[1], 1.0); // ema of [1]
        assert_relative_eq!(means[2], ema_next(&[1.0, 2.0], 2, MaMode::Normalized).unwrap());
    }

    #[test]
    fn drift_values() {
        assert_relative_eq!(
            drift_mean(9.0, DriftMean::Linear { mu_s: 0.0, s0: 5.0 }),
            5.0
        );
        assert_relative_eq!(drift_mean(3.0, DriftMean::BrownianDrift { sigma2: 2.0 }), -3.0);
        assert_relative_eq!(drift_mean(123.0, DriftMean::Constant { c: 0.0 }), 0.0);
    }

    proptest! {
        #[test]
        fn shift_and_scale_equivariance(
            vals in proptest::collection::vec(-5.0f64..5.0, 1..40),
            k in 1usize..12,
            c in -3.0f64..3.0,
            lambda in 0.1f64..4.0,
        ) {
            for variant in [MaVariant::Ema, MaVariant::Dema, MaVariant::Tema] {
                let base = ma_next(&vals, k, variant, MaMode::Normalized).unwrap();
                let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
                let scaled: Vec<f64> = vals.iter().map(|v| v * lambda).collect();
                let s = ma_next(&shifted, k, variant, MaMode::Normalized).unwrap();
                let l = ma_next(&scaled, k, variant, MaMode::Normalized).unwrap();
                prop_assert!((s - (base + c)).abs() < 1e-9 * (1.0 + base.abs()));
                prop_assert!((l - base * lambda).abs() < 1e-9 * (1.0 + base.abs()) * lambda.max(1.0));
            }
        }

        #[test]
        fn literal_scale_equivariance(
            vals in proptest::collection::vec(-5.0f64..5.0, 1..40),
            k in 1usize..12,
            lambda in 0.1f64..4.0,
        ) {
            let base = ema_next(&vals, k, MaMode::Literal).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| v * lambda).collect();
            let l = ema_next(&scaled, k, MaMode::Literal).unwrap();
            prop_assert!((l - base * lambda).abs() < 1e-9 * (1.0 + base.abs()) * lambda.max(1.0));
        }
    }
}
