//! Simulation-quality metrics, each reported with a CLT standard error.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::flow::{FlowModel, SampleBatch};
use crate::liouvillian::{QOperator, RatioEvaluator};
use crate::par;
use crate::reference::ExactDensity;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Mean and `sd/√n` of `values` (sample standard deviation).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// `(1/N) Σ_{x∼Q_exact} |Q_sim(x)/Q_exact(x) − 1|` over `n` fresh draws.
pub fn l1_loss<F, R>(sim_log_density: F, exact: &dyn ExactDensity, n: usize, rng: &mut R) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: RngCore,
{
    let points = exact.sample(n, rng)?;
    l1_loss_at(sim_log_density, exact, &points)
}

/// [`l1_loss`] at given draws from `exact`.
pub fn l1_loss_at<F>(sim_log_density: F, exact: &dyn ExactDensity, points: &[f64]) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = exact.dim();
    let n = points.len() / d;
    let vals = par::map(n, |i| {
        let x = &points[i * d..(i + 1) * d];
        let le = exact.log_density(x);
        if !le.is_finite() || le.exp() == 0.0 {
            return None;
        }
        Some(((sim_log_density(x) - le).exp() - 1.0).abs())
    });
    let vals: Option<Vec<f64>> = vals.into_iter().collect();
    let vals = vals.ok_or(Error::DegenerateSupport)?;
    Ok(Estimate::from_values(&vals))
}

/// [`l1_loss`] for a flow model.
pub fn l1_loss_flow<R: RngCore>(
    model: &FlowModel,
    exact: &dyn ExactDensity,
    n: usize,
    rng: &mut R,
) -> Result<Estimate> {
    l1_loss(
        |x| model.log_density(x).unwrap_or(f64::NEG_INFINITY),
        exact,
        n,
        rng,
    )
}

/// Per-axis mean and standard error.
pub fn centroid(batch: &SampleBatch) -> (Vec<f64>, Vec<f64>) {
    let d = batch.dim;
    let (mut mean, mut se) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for a in 0..d {
        let col: Vec<f64> = (0..batch.len()).map(|i| batch.point(i)[a]).collect();
        let e = Estimate::from_values(&col);
        mean.push(e.mean);
        se.push(e.stderr);
    }
    (mean, se)
}

/// `|E[x]|` with first-order error propagation through the sample covariance.
pub fn centroid_norm(batch: &SampleBatch) -> Estimate {
    let d = batch.dim;
    let n = batch.len() as f64;
    let (mean, se) = centroid(batch);
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    if norm == 0.0 || batch.len() < 2 {
        let s = (se.iter().map(|s| s * s).sum::<f64>() / d as f64).sqrt();
        return Estimate {
            mean: norm,
            stderr: s,
        };
    }
    // Var(|μ̂|) ≈ uᵀ Cov(x) u / n with u = μ/|μ|.
    let u: Vec<f64> = mean.iter().map(|m| m / norm).collect();
    let proj: Vec<f64> = (0..batch.len())
        .map(|i| {
            batch
                .point(i)
                .iter()
                .zip(&mean)
                .zip(&u)
                .map(|((x, m), u)| (x - m) * u)
                .sum()
        })
        .collect();
    let var = proj.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
    Estimate {
        mean: norm,
        stderr: (var / n).sqrt(),
    }
}

/// `E_{x∼Q_θ}[(L̃Q_θ/Q_θ)²]`, sampled from the model itself.
pub fn liouvillian_loss<R: Rng + ?Sized>(
    model: &FlowModel,
    op: &QOperator,
    n: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let ev = RatioEvaluator::new(op)?;
    if ev.is_zero() {
        return Ok(Estimate {
            mean: 0.0,
            stderr: 0.0,
        });
    }
    let batch = model.sample(n, rng);
    liouvillian_loss_at(model, &ev, &batch)
}

/// [`liouvillian_loss`] on an existing batch.
pub fn liouvillian_loss_at(model: &FlowModel, ev: &RatioEvaluator, batch: &SampleBatch) -> Result<Estimate> {
    let vals = par::map_init(
        batch.len(),
        || ev.scratch(model),
        |s, i| {
            let (_, r) = ev.ratio_for_model(model, s, batch.point(i));
            r * r
        },
    );
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Liouvillian loss".into()));
    }
    Ok(Estimate::from_values(&vals))
}

/// `⟨n₁⟩ ≈ E[q₁² + p₁² − 1]`.
pub fn n1_observable(batch: &SampleBatch) -> Result<Estimate> {
    n1_from_points(&batch.points, batch.dim)
}

/// [`n1_observable`] on raw row-major points.
pub fn n1_from_points(points: &[f64], dim: usize) -> Result<Estimate> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Precondition(format!("⟨n₁⟩ needs an even dimension ≥ 2, got {dim}")));
    }
    let m = dim / 2;
    let vals: Vec<f64> = points
        .chunks(dim)
        .map(|x| x[0] * x[0] + x[m] * x[m] - 1.0)
        .collect();
    Ok(Estimate::from_values(&vals))
}
