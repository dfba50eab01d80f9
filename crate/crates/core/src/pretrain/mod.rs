//! Fitting a flow to a prescribed initial Q function.
//!
//! Pretraining runs in two stages. Samples of the target are drawn with
//! Metropolis-Hastings and the flow is fitted to them by maximum likelihood;
//! the result is then refined by minimizing `KL(Q_init ‖ Q_θ)` with
//! importance weights computed from flow samples.

mod fit;
mod mh;

pub use fit::{forward_kl, kl_grad, kl_pretrain, nll_pretrain, KlConfig, KlGrad, KlReport, NllConfig, NllReport, Weighting};
pub use mh::{mh_sample, MhConfig, MhSamples};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::fock::ln_factorial;

type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A target log-density, optionally known up to a constant only.
pub struct TargetDensity {
    dim: usize,
    normalized: bool,
    log_density: Box<LogDensityFn>,
}

impl std::fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetDensity")
            .field("dim", &self.dim)
            .field("normalized", &self.normalized)
            .finish_non_exhaustive()
    }
}

impl TargetDensity {
    pub fn new<F>(dim: usize, normalized: bool, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            normalized,
            log_density: Box::new(log_density),
        }
    }

    /// Axis-aligned Gaussian with the given mean and per-axis variance.
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: var.len(),
            });
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("target variances must be positive".into()));
        }
        let ln_norm: f64 = var.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln()).sum();
        Ok(Self::new(mean.len(), true, move |x| {
            ln_norm
                - x.iter()
                    .zip(&mean)
                    .zip(&var)
                    .map(|((x, m), v)| 0.5 * (x - m).powi(2) / v)
                    .sum::<f64>()
        }))
    }

    /// Q function of `n_total` bosons in the antisymmetric two-well mode,
    /// coordinates `(q₁, q₂, p₁, p₂)`.
    pub fn bec(n_total: usize) -> Self {
        let ln_norm = -(2.0 * std::f64::consts::PI.ln() + n_total as f64 * std::f64::consts::LN_2 + ln_factorial(n_total));
        Self::new(4, true, move |x| bec_log_density(n_total, ln_norm, x))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }
}

fn bec_log_density(n_total: usize, ln_norm: f64, x: &[f64]) -> f64 {
    let d2 = (x[0] - x[1]).powi(2) + (x[2] - x[3]).powi(2);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let poly = if n_total == 0 { 0.0 } else { n_total as f64 * d2.ln() };
    ln_norm + poly - r2
}

/// Settings of the full two-stage procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Number of Metropolis-Hastings samples for the likelihood stage.
    pub n_samples: usize,
    pub mh: MhConfig,
    pub nll: NllConfig,
    pub kl: KlConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            mh: MhConfig::default(),
            nll: NllConfig::default(),
            kl: KlConfig::default(),
        }
    }
}

/// Diagnostics of a two-stage pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub acceptance_rate: f64,
    pub ess: f64,
    pub nll: NllReport,
    pub kl: KlReport,
    pub warnings: Vec<String>,
}

/// Metropolis-Hastings sampling, likelihood fit, then KL refinement.
pub fn pretrain(model: &mut FlowModel, target: &TargetDensity, cfg: &PretrainConfig) -> Result<PretrainReport> {
    let samples = mh_sample(target, cfg.n_samples, &cfg.mh)?;
    let nll = nll_pretrain(model, &samples.points, &cfg.nll)?;
    let kl = kl_pretrain(model, target, &cfg.kl)?;
    let mut warnings = samples.warnings.clone();
    warnings.extend(kl.warnings.iter().cloned());
    Ok(PretrainReport {
        acceptance_rate: samples.acceptance_rate,
        ess: samples.ess,
        nll,
        kl,
        warnings,
    })
}
