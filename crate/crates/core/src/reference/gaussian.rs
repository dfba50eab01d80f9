use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::ExactDensity;
use crate::error::{Error, Result};
use crate::liouvillian::{HarmonicWell, ModelSpec};

/// Mean and covariance of a Gaussian Q function.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMomentState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMomentState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        Ok(Self { mean, cov })
    }

    /// Mean `mean`, covariance `var·I`.
    pub fn isotropic(mean: &[f64], var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(DVector::from_column_slice(mean), DMatrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A Gaussian with its factorization, usable as an exact reference density.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    state: GaussianMomentState,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(state: GaussianMomentState) -> Result<Self> {
        let d = state.dim();
        let chol = state
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            state,
            chol_l: l,
            log_norm,
        })
    }

    pub fn state(&self) -> &GaussianMomentState {
        &self.state
    }

    pub fn mean(&self) -> &[f64] {
        self.state.mean.as_slice()
    }
}

impl ExactDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        // Forward substitution for L y = x − μ.
        let mut y = vec![0.0; d];
        let mut q = 0.0;
        for i in 0..d {
            let mut r = x[i] - self.state.mean[i];
            for j in 0..i {
                r -= self.chol_l[(i, j)] * y[j];
            }
            y[i] = r / self.chol_l[(i, i)];
            q += y[i] * y[i];
        }
        self.log_norm - 0.5 * q
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        let mut z = vec![0.0; d];
        for row in out.chunks_mut(d) {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            for i in 0..d {
                let mut acc = self.state.mean[i];
                for j in 0..=i {
                    acc += self.chol_l[(i, j)] * z[j];
                }
                row[i] = acc;
            }
        }
        Ok(out)
    }
}

fn harmonic_wells(spec: &ModelSpec) -> Result<&[HarmonicWell]> {
    match spec {
        ModelSpec::Harmonic { wells } => Ok(wells),
        _ => Err(Error::UnsupportedModel(
            "Gaussian moment dynamics need the harmonic model".into(),
        )),
    }
}

/// Drift `A` and diffusion `D` of the harmonic moment equations
/// `μ' = Aμ`, `Σ' = AΣ + ΣAᵀ + 2D`.
pub fn harmonic_drift_diffusion(spec: &ModelSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let wells = harmonic_wells(spec)?;
    let m = wells.len();
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    let mut dd = DMatrix::zeros(2 * m, 2 * m);
    for (w, p) in wells.iter().enumerate() {
        let (q, pp) = (w, m + w);
        a[(q, q)] = -0.5 * p.gamma;
        a[(pp, pp)] = -0.5 * p.gamma;
        a[(q, pp)] = p.omega;
        a[(pp, q)] = -p.omega;
        let dc = 0.25 * p.gamma * (p.nbar + 1.0);
        dd[(q, q)] = dc;
        dd[(pp, pp)] = dc;
    }
    Ok((a, dd))
}

/// Exact moments of the harmonic model at time `t`: each well rotates by
/// `ωt`, contracts by `e^{−γt/2}`, and relaxes toward variance `(n̄+1)/2`.
pub fn gaussian_moment_solution(
    spec: &ModelSpec,
    init: &GaussianMomentState,
    t: f64,
) -> Result<GaussianDensity> {
    let wells = harmonic_wells(spec)?;
    spec.validate()?;
    let m = wells.len();
    if init.dim() != 2 * m {
        return Err(Error::DimensionMismatch {
            expected: 2 * m,
            found: init.dim(),
        });
    }
    let mut e = DMatrix::zeros(2 * m, 2 * m);
    let mut add = DMatrix::zeros(2 * m, 2 * m);
    for (w, p) in wells.iter().enumerate() {
        let (q, pp) = (w, m + w);
        let decay = (-0.5 * p.gamma * t).exp();
        let (s, c) = (p.omega * t).sin_cos();
        e[(q, q)] = decay * c;
        e[(q, pp)] = decay * s;
        e[(pp, q)] = -decay * s;
        e[(pp, pp)] = decay * c;
        // ∫₀ᵗ e^{−γτ} 2D dτ = (n̄+1)/2 · (1 − e^{−γt})
        let v = 0.5 * (p.nbar + 1.0) * -(-p.gamma * t).exp_m1();
        add[(q, q)] = v;
        add[(pp, pp)] = v;
    }
    let mean = &e * &init.mean;
    let mut cov = &e * &init.cov * e.transpose() + add;
    cov = 0.5 * (&cov + cov.transpose());
    GaussianDensity::new(GaussianMomentState { mean, cov })
}
