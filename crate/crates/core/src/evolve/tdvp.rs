use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::euler::prior_draws;
use super::{step_count, MetricValues, StepView, TrajectoryRecord, TrajectoryRow};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::liouvillian::{QOperator, RatioEvaluator};
use crate::metrics::Estimate;
use crate::par;

/// Settings of the projected (TDVP) integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct TDVPConfig {
    pub dt: f64,
    pub t_end: f64,
    pub batch_n: usize,
    /// Diagonal shift λ added to the metric before solving.
    pub shift: f64,
    /// Use covariances instead of raw second moments.
    pub centered: bool,
    pub seed: u64,
}

impl Default for TDVPConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 15.0,
            batch_n: 1000,
            shift: 0.01,
            centered: false,
            seed: 0,
        }
    }
}

impl TDVPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end >= self.dt) {
            return Err(Error::InvalidConfig("need dt > 0 and t_end >= dt".into()));
        }
        if self.batch_n < 2 {
            return Err(Error::InvalidConfig("batch_n must be at least 2".into()));
        }
        if !(self.shift >= 0.0) {
            return Err(Error::InvalidConfig("diagonal shift must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        step_count(self.dt, self.t_end)
    }
}

/// Batch estimate of the linear system `S θ̇ = F`.
#[derive(Debug, Clone)]
pub struct TdvpSystem {
    /// Fisher metric `E[∂_k ln Q ∂_k' ln Q]` (before any shift).
    pub s: DMatrix<f64>,
    /// Force `E[∂_k ln Q · (L̃Q)/Q]`.
    pub f: DVector<f64>,
    /// Per-sample scores, one row per sample (centered if requested).
    pub scores: DMatrix<f64>,
    /// Per-sample ratios (centered if requested).
    pub ratios: DVector<f64>,
}

impl TdvpSystem {
    /// Solves `(S + λI) θ̇ = F` by Cholesky, falling back to least squares.
    pub fn solve(&self, shift: f64) -> Result<DVector<f64>> {
        let p = self.s.nrows();
        let a = &self.s + DMatrix::identity(p, p) * shift;
        if let Some(ch) = a.clone().cholesky() {
            let x = ch.solve(&self.f);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        let svd = a.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        match svd.solve(&self.f, tol) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
            _ => Err(Error::SingularMetric),
        }
    }

    /// Mean squared mismatch `E[(ratio − score·θ̇)²]` of a solution.
    pub fn fit_error(&self, theta_dot: &DVector<f64>) -> Estimate {
        let pred = &self.scores * theta_dot;
        let r: Vec<f64> = (0..pred.len()).map(|i| (self.ratios[i] - pred[i]).powi(2)).collect();
        Estimate::from_values(&r)
    }
}

/// Estimates the metric and force from the prior draws `z` (row-major).
pub fn tdvp_metric(model: &FlowModel, ev: &RatioEvaluator, z: &[f64], centered: bool) -> Result<TdvpSystem> {
    let d = model.dim();
    let p = model.n_params();
    let n = z.len() / d;
    if n == 0 {
        return Err(Error::Precondition("empty TDVP batch".into()));
    }
    let rows = par::map_init(
        n,
        || (model.new_tape(), ev.scratch(model), vec![0.0; d]),
        |(tape, jets, x), i| {
            tape.forward(model, &z[i * d..(i + 1) * d]);
            x.copy_from_slice(tape.x());
            let mut g = vec![0.0; p];
            tape.backprop(model, &mut g);
            let (_, r) = ev.ratio_for_model(model, jets, x);
            (g, r)
        },
    );
    let mut scores = DMatrix::zeros(n, p);
    let mut ratios = DVector::zeros(n);
    for (i, (g, r)) in rows.into_iter().enumerate() {
        for k in 0..p {
            scores[(i, k)] = g[k];
        }
        ratios[i] = r;
    }
    if scores.iter().chain(ratios.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("TDVP score or ratio".into()));
    }
    if centered {
        let mean = scores.row_mean();
        for mut row in scores.row_iter_mut() {
            row -= &mean;
        }
        let rm = ratios.mean();
        ratios.add_scalar_mut(-rm);
    }
    let nf = n as f64;
    let mut s = scores.tr_mul(&scores) / nf;
    // Symmetrize against rounding in the product.
    s = (&s + s.transpose()) * 0.5;
    let f = scores.tr_mul(&ratios) / nf;
    Ok(TdvpSystem { s, f, scores, ratios })
}

/// Diagnostics of one TDVP step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdvpStepInfo {
    pub theta_dot_norm: f64,
    pub fit_error: Estimate,
    /// Batch was smaller than the parameter count.
    pub undersampled: bool,
}

fn step_with(model: &mut FlowModel, ev: &RatioEvaluator, cfg: &TDVPConfig, rng: &mut ChaCha8Rng) -> Result<TdvpStepInfo> {
    let z = prior_draws(model, cfg.batch_n, rng);
    let sys = tdvp_metric(model, ev, &z, cfg.centered)?;
    let theta_dot = sys.solve(cfg.shift)?;
    let fit_error = sys.fit_error(&theta_dot);
    for (p, v) in model.params_mut().iter_mut().zip(theta_dot.iter()) {
        *p += cfg.dt * v;
    }
    Ok(TdvpStepInfo {
        theta_dot_norm: theta_dot.norm(),
        fit_error,
        undersampled: cfg.batch_n < model.n_params(),
    })
}

/// One explicit Euler step `θ ← θ + dt·θ̇` with `θ̇` from the shifted metric.
pub fn tdvp_step(model: &mut FlowModel, op: &QOperator, cfg: &TDVPConfig, rng: &mut ChaCha8Rng) -> Result<TdvpStepInfo> {
    cfg.validate()?;
    let ev = RatioEvaluator::new(op)?;
    step_with(model, &ev, cfg, rng)
}

/// Runs TDVP for `cfg.n_steps()` steps; the residual column holds the fit error.
pub fn tdvp_run<H>(model: &mut FlowModel, op: &QOperator, cfg: &TDVPConfig, mut hook: H) -> Result<TrajectoryRecord>
where
    H: FnMut(&StepView<'_>) -> Result<MetricValues>,
{
    cfg.validate()?;
    let ev = RatioEvaluator::new(op)?;
    if ev.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: ev.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = TrajectoryRecord::default();
    let metrics = hook(&StepView {
        step: 0,
        time: 0.0,
        model,
    })?;
    rec.push(TrajectoryRow {
        step: 0,
        time: 0.0,
        metrics,
        residual: None,
        clamp_count: None,
    });
    for step in 1..=cfg.n_steps() {
        let info = step_with(model, &ev, cfg, &mut rng)?;
        let time = step as f64 * cfg.dt;
        let metrics = hook(&StepView { step, time, model })?;
        rec.push(TrajectoryRow {
            step,
            time,
            metrics,
            residual: Some(info.fit_error),
            clamp_count: None,
        });
    }
    Ok(rec)
}
