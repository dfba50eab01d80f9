use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TargetDensity;
use crate::error::{Error, Result};
use crate::evolve::{prior_draws, AdamConfig, AdamState};
use crate::flow::FlowModel;
use crate::metrics::Estimate;
use crate::par;

/// Maximum-likelihood stage settings. One epoch is one Adam update on a
/// minibatch drawn without replacement from the point set.
#[derive(Debug, Clone, PartialEq)]
pub struct NllConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for NllConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch: 1024,
            lr: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllReport {
    /// Minibatch mean of `−ln Q_θ` per epoch.
    pub losses: Vec<f64>,
}

impl NllReport {
    /// Trailing moving average of the loss curve.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        self.losses
            .windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }
}

/// Sum of `ln Q_θ` and its parameter gradient over the listed points.
fn loglik_grad(model: &FlowModel, points: &[f64], idx: &[usize]) -> Vec<f64> {
    let d = model.dim();
    let p = model.n_params();
    crate::evolve::chunked_sum(
        idx.len(),
        p + 1,
        || (model.new_tape(), vec![0.0; p]),
        |(tape, g), i, acc| {
            let j = idx[i];
            acc[p] += tape.inverse(model, &points[j * d..(j + 1) * d]);
            tape.backprop(model, g);
            for k in 0..p {
                acc[k] += g[k];
            }
        },
    )
}

/// Fits `model` to `points` (row-major) by minimizing the mean negative
/// log-likelihood with Adam.
pub fn nll_pretrain(model: &mut FlowModel, points: &[f64], cfg: &NllConfig) -> Result<NllReport> {
    let d = model.dim();
    if points.is_empty() || points.len() % d != 0 {
        return Err(Error::Precondition("likelihood fit needs a nonempty point set".into()));
    }
    let n = points.len() / d;
    let b = cfg.batch.min(n).max(1);
    let p = model.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(p, cfg.adam);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; p];
    for epoch in 0..cfg.epochs {
        let idx = if b == n {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, b).into_vec()
        };
        let acc = loglik_grad(model, points, &idx);
        let loss = -acc[p] / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("likelihood loss at epoch {epoch}")));
        }
        for k in 0..p {
            grad[k] = -acc[k] / b as f64;
        }
        adam.step(model.params_mut(), &grad, cfg.lr);
        losses.push(loss);
    }
    Ok(NllReport { losses })
}

/// How importance weights `Q_init / Q_θ` enter the KL gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Divided by their batch mean.
    #[default]
    SelfNormalized,
    /// Used as is.
    Raw,
}

/// KL refinement settings. One epoch is one Adam update on a fresh batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KlConfig {
    pub epochs: usize,
    pub batch_n: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_n: 1024,
            lr: 1e-3,
            adam: AdamConfig::default(),
            weighting: Weighting::SelfNormalized,
            seed: 0,
        }
    }
}

/// One batch estimate of `∇_θ KL(Q_init ‖ Q_θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGrad {
    pub grad: Vec<f64>,
    /// Kish effective sample size of the importance weights.
    pub ess: f64,
    /// Self-normalized importance estimate of the KL divergence.
    pub kl: f64,
}

/// `−(1/N) Σ w_i ∇ ln Q_θ(x_i)` with `x_i ∼ Q_θ` and `w = Q_init/Q_θ`.
pub fn kl_grad(model: &FlowModel, target: &TargetDensity, z: &[f64], weighting: Weighting) -> Result<KlGrad> {
    let d = model.dim();
    let p = model.n_params();
    let n = z.len() / d;
    if n == 0 {
        return Err(Error::Precondition("empty KL batch".into()));
    }
    let rows = par::map_init(
        n,
        || model.new_tape(),
        |tape, i| {
            let lq = tape.forward(model, &z[i * d..(i + 1) * d]);
            let lt = target.log_density(tape.x());
            let mut g = vec![0.0; p];
            tape.backprop(model, &mut g);
            (lt - lq, g)
        },
    );
    let lw: Vec<f64> = rows.iter().map(|r| r.0).collect();
    if lw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("importance log-weight".into()));
    }
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateSupport);
    }
    // Shifted weights keep the self-normalized quantities overflow-free.
    let ws: Vec<f64> = lw.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = ws.iter().sum();
    let sum2: f64 = ws.iter().map(|w| w * w).sum();
    let ess = sum * sum / sum2;
    let scale = match weighting {
        Weighting::SelfNormalized => n as f64 / sum,
        Weighting::Raw => max.exp(),
    };
    let mut grad = vec![0.0; p];
    for ((_, g), w) in rows.iter().zip(&ws) {
        let w = w * scale;
        for k in 0..p {
            grad[k] -= w * g[k];
        }
    }
    for v in &mut grad {
        *v /= n as f64;
    }
    let kl = lw
        .iter()
        .zip(&ws)
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, w)| w * l)
        .sum::<f64>()
        / sum;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KL gradient".into()));
    }
    Ok(KlGrad { grad, ess, kl })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    /// Importance estimate of the KL divergence per epoch.
    pub kl: Vec<f64>,
    /// Smallest effective sample size seen, as a fraction of the batch.
    pub min_ess_fraction: f64,
    pub warnings: Vec<String>,
}

/// Minimizes `KL(Q_init ‖ Q_θ)` for a normalized target.
pub fn kl_pretrain(model: &mut FlowModel, target: &TargetDensity, cfg: &KlConfig) -> Result<KlReport> {
    if !target.is_normalized() {
        return Err(Error::Precondition("KL pretraining needs a normalized target".into()));
    }
    if target.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: target.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.n_params(), cfg.adam);
    let mut kl = Vec::with_capacity(cfg.epochs);
    let mut min_ess = f64::INFINITY;
    for _ in 0..cfg.epochs {
        let z = prior_draws(model, cfg.batch_n, &mut rng);
        let g = kl_grad(model, target, &z, cfg.weighting)?;
        min_ess = min_ess.min(g.ess / cfg.batch_n as f64);
        kl.push(g.kl);
        adam.step(model.params_mut(), &g.grad, cfg.lr);
    }
    let mut warnings = Vec::new();
    if min_ess < 0.01 {
        warnings.push(format!(
            "importance weights degenerated (ESS fraction {min_ess:.2e}); KL stage may diverge"
        ));
    }
    Ok(KlReport {
        kl,
        min_ess_fraction: min_ess,
        warnings,
    })
}

/// `KL(Q_init ‖ Q_θ)` estimated on reference samples of the target.
pub fn forward_kl(model: &FlowModel, target: &TargetDensity, points: &[f64]) -> Result<Estimate> {
    if !target.is_normalized() {
        return Err(Error::Precondition("KL estimate needs a normalized target".into()));
    }
    let d = model.dim();
    let vals = par::map_init(
        points.len() / d,
        || model.new_tape(),
        |tape, i| {
            let x = &points[i * d..(i + 1) * d];
            target.log_density(x) - tape.inverse(model, x)
        },
    );
    Ok(Estimate::from_values(&vals))
}
