use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{chunked_sum, step_count, AdamConfig, AdamState, MetricValues, StepView, TrajectoryRecord, TrajectoryRow};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, SampleBatch};
use crate::liouvillian::{QOperator, RatioEvaluator};
use crate::metrics::Estimate;

/// Hyperparameters of the stochastic Euler-KL integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerKLConfig {
    pub dt: f64,
    pub t_end: f64,
    pub epochs_per_step: usize,
    pub batch_n: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Floor for `1 + dt·ratio` before taking the logarithm.
    pub eps_clamp: f64,
    pub seed: u64,
}

impl Default for EulerKLConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 15.0,
            epochs_per_step: 150,
            batch_n: 1000,
            lr: 1e-3,
            adam: AdamConfig::default(),
            eps_clamp: 1e-12,
            seed: 0,
        }
    }
}

impl EulerKLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.t_end >= self.dt) {
            return bad("total time must be at least one step");
        }
        if self.batch_n < 2 {
            return bad("batch_n must be at least 2");
        }
        if !(self.eps_clamp > 0.0) {
            return bad("eps_clamp must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        step_count(self.dt, self.t_end)
    }
}

/// Monte Carlo estimate of the Euler-KL gradient on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KLGradient {
    /// Gradient with the batch-mean baseline subtracted.
    pub grad: Vec<f64>,
    /// Same estimator without the baseline.
    pub grad_unbaselined: Vec<f64>,
    /// Batch estimate of `KL(Q_θ ‖ Q_L)`.
    pub loss: Estimate,
    /// Samples whose `1 + dt·ratio` fell below the clamp floor.
    pub clamped: usize,
}

enum Source<'a> {
    Prior(&'a [f64]),
    Points(&'a [f64]),
}

/// Gradient of `KL(Q_next ‖ Q_L)` with respect to the parameters of
/// `model_next`, where `Q_L = Q_cur (1 + dt·L Q_cur / Q_cur)`, estimated on a
/// batch drawn from `model_next`.
pub fn euler_kl_grad(
    model_next: &FlowModel,
    model_cur: &FlowModel,
    op: &QOperator,
    dt: f64,
    batch: &SampleBatch,
    eps_clamp: f64,
) -> Result<KLGradient> {
    if batch.dim != model_next.dim() || model_cur.dim() != model_next.dim() {
        return Err(Error::DimensionMismatch {
            expected: model_next.dim(),
            found: batch.dim,
        });
    }
    let ev = RatioEvaluator::new(op)?;
    grad_impl(model_next, model_cur, &ev, dt, Source::Points(&batch.points), eps_clamp)
}

fn grad_impl(
    next: &FlowModel,
    cur: &FlowModel,
    ev: &RatioEvaluator,
    dt: f64,
    src: Source<'_>,
    eps_clamp: f64,
) -> Result<KLGradient> {
    if ev.dim() != next.dim() {
        return Err(Error::DimensionMismatch {
            expected: next.dim(),
            found: ev.dim(),
        });
    }
    let d = next.dim();
    let p = next.n_params();
    let (data, from_prior) = match src {
        Source::Prior(z) => (z, true),
        Source::Points(x) => (x, false),
    };
    let n = data.len() / d;
    if n < 2 {
        return Err(Error::Precondition("gradient batch needs at least 2 samples".into()));
    }
    // Identical models share one density; reusing the sampling pass avoids
    // forward/inverse roundoff, which Adam would otherwise amplify.
    let same = next.params() == cur.params() && next.prior() == cur.prior();
    // Layout: [Σ lr·g (p), Σ g (p), Σ lr, Σ lr², clamps]
    let width = 2 * p + 3;
    let acc = chunked_sum(
        n,
        width,
        || (next.new_tape(), ev.scratch(cur), vec![0.0; p], vec![0.0; d]),
        |(tape, jets, g, x), i, acc| {
            let row = &data[i * d..(i + 1) * d];
            let lq_next = if from_prior {
                tape.forward(next, row)
            } else {
                tape.inverse(next, row)
            };
            x.copy_from_slice(tape.x());
            let (lq_cur, ratio) = if same && ev.is_zero() {
                (lq_next, 0.0)
            } else {
                let (lq, r) = ev.ratio_for_model(cur, jets, x);
                (if same { lq_next } else { lq }, r)
            };
            let mut arg = 1.0 + dt * ratio;
            if !(arg >= eps_clamp) {
                arg = eps_clamp;
                acc[2 * p + 2] += 1.0;
            }
            let lr = lq_next - lq_cur - arg.ln();
            tape.backprop(next, g);
            for k in 0..p {
                acc[k] += lr * g[k];
                acc[p + k] += g[k];
            }
            acc[2 * p] += lr;
            acc[2 * p + 1] += lr * lr;
        },
    );
    let nf = n as f64;
    let clamped = acc[2 * p + 2] as usize;
    if clamped == n {
        return Err(Error::StepTooLarge { step: 0 });
    }
    let mean = acc[2 * p] / nf;
    let var = ((acc[2 * p + 1] - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let loss = Estimate {
        mean,
        stderr: (var / nf).sqrt(),
    };
    let grad_unbaselined: Vec<f64> = acc[..p].iter().map(|v| v / nf).collect();
    let grad: Vec<f64> = (0..p).map(|k| (acc[k] - mean * acc[p + k]) / nf).collect();
    if !loss.mean.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Euler-KL loss or gradient".into()));
    }
    Ok(KLGradient {
        grad,
        grad_unbaselined,
        loss,
        clamped,
    })
}

/// Draws `n` prior points sequentially from `rng`.
pub(crate) fn prior_draws(model: &FlowModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = model.dim();
    let mut z = vec![0.0; n * d];
    for row in z.chunks_mut(d) {
        model.prior().sample_into(rng, row);
    }
    z
}

/// Fits one Euler step: returns the final-epoch loss and total clamp count.
/// `model` is advanced in place only on success.
pub(crate) fn euler_kl_step(
    model: &mut FlowModel,
    ev: &RatioEvaluator,
    cfg: &EulerKLConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<(Estimate, usize)> {
    let cur = model.clone();
    let mut next = model.clone();
    let mut clamps = 0;
    let mut last = Estimate::default();
    for _ in 0..cfg.epochs_per_step {
        let z = prior_draws(&next, cfg.batch_n, rng);
        let g = grad_impl(&next, &cur, ev, cfg.dt, Source::Prior(&z), cfg.eps_clamp)?;
        clamps += g.clamped;
        last = g.loss;
        adam.step(next.params_mut(), &g.grad, cfg.lr);
    }
    if next.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after Euler-KL step".into()));
    }
    *model = next;
    Ok((last, clamps))
}

/// Runs the stochastic Euler-KL integrator for `cfg.n_steps()` steps.
///
/// `hook` is called at `t = 0` and after every committed step; whatever it
/// returns is stored in that step's row. On error `model` holds the last
/// committed state.
pub fn euler_kl_run<H>(model: &mut FlowModel, op: &QOperator, cfg: &EulerKLConfig, mut hook: H) -> Result<TrajectoryRecord>
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
    let mut adam = AdamState::new(model.n_params(), cfg.adam);
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
        let (residual, clamps) = euler_kl_step(model, &ev, cfg, &mut adam, &mut rng).map_err(|e| match e {
            Error::StepTooLarge { .. } => Error::StepTooLarge { step },
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step}")),
            e => e,
        })?;
        let time = step as f64 * cfg.dt;
        let metrics = hook(&StepView { step, time, model })?;
        rec.push(TrajectoryRow {
            step,
            time,
            metrics,
            residual: Some(residual),
            clamp_count: Some(clamps),
        });
    }
    Ok(rec)
}
