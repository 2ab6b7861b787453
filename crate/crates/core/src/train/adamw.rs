use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok || [self.learning_rate, self.eps, self.weight_decay].iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient contained NaN or ±inf; parameters and moments are untouched.
    Skipped,
}

/// One decoupled-weight-decay Adam update on a single buffer.
///
/// `t` is the 1-based step index used for bias correction.
pub fn adamw_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamWConfig) {
    let lr = cfg.learning_rate;
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// AdamW over every tensor of a [`ParamStore`], reading each tensor's
/// gradient buffer (a missing buffer counts as zero).
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    skipped: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(AdamW {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            skipped: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<StepOutcome> {
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("optimizer tracks {} tensors, store has {}", self.m.len(), params.len()),
            ));
        }
        if let Some((name, _)) = params
            .iter()
            .find(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
        {
            self.skipped += 1;
            log::warn!("non-finite gradient in {name}; skipping optimizer step {}", self.t + 1);
            return Ok(StepOutcome::Skipped);
        }
        self.t += 1;
        for (k, (_, tensor)) in params.iter_mut().enumerate() {
            let grad = tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tensor.numel()]);
            adamw_update(tensor.data_mut(), &grad, &mut self.m[k], &mut self.v[k], self.t, &self.config);
        }
        Ok(StepOutcome::Applied)
    }
}
