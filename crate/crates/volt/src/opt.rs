//! First-order ascent on marginal likelihoods and evidence bounds.

use crate::error::{Result, VoltError};

/// Adam settings. The training protocol default is 500 steps at learning
/// rate 0.1 with standard moment decays.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            steps: 500,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn new(steps: usize, lr: f64) -> Self {
        AdamConfig {
            steps,
            lr,
            ..Default::default()
        }
    }
}

/// Maximize an objective with analytic gradients by Adam ascent.
///
/// `objective(params)` returns `(value, gradient)`. The trace holds the
/// objective value at every step, starting with the initial point, so its
/// length is `steps + 1`. Aborts with diagnostics on a non-finite value.
pub fn adam_maximize<F>(
    mut objective: F,
    init: &[f64],
    cfg: AdamConfig,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = init.len();
    let mut params = init.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.steps + 1);

    for step in 0..=cfg.steps {
        let (value, grad) = objective(&params)?;
        if !value.is_finite() {
            return Err(VoltError::NonFinite("optimizer objective"));
        }
        trace.push(value);
        if step == cfg.steps {
            break;
        }
        let t = (step + 1) as f64;
        for i in 0..n {
            let g = grad[i];
            if !g.is_finite() {
                return Err(VoltError::NonFinite("optimizer gradient"));
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / (1.0 - cfg.beta1.powf(t));
            let v_hat = v[i] / (1.0 - cfg.beta2.powf(t));
            // ascent
            params[i] += cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok((params, trace))
}
