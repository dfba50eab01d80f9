use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Single-particle correlations `C_ij = ⟨a_i† a_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentState {
    pub c: DMatrix<Complex64>,
}

impl SecondMomentState {
    pub fn new(c: DMatrix<Complex64>) -> Result<Self> {
        if c.nrows() != c.ncols() || c.nrows() == 0 {
            return Err(Error::InvalidConfig("correlation matrix must be square".into()));
        }
        let scale = c.iter().map(|v| v.norm()).fold(1.0, f64::max);
        if (&c - c.adjoint()).iter().any(|v| v.norm() > 1e-12 * scale) {
            return Err(Error::Domain("correlation matrix is not Hermitian".into()));
        }
        if c.diagonal().iter().any(|v| v.re < -1e-12 * scale) {
            return Err(Error::Domain("negative occupation".into()));
        }
        Ok(Self { c })
    }

    /// All `2n` particles in the antisymmetric mode `(a₁ − a₂)/√2`.
    pub fn two_well_antisymmetric(n_per_well: f64) -> Self {
        let n = Complex64::new(n_per_well, 0.0);
        Self {
            c: DMatrix::from_row_slice(2, 2, &[n, -n, -n, n]),
        }
    }

    pub fn modes(&self) -> usize {
        self.c.nrows()
    }

    /// `⟨n_i⟩`.
    pub fn occupation(&self, i: usize) -> f64 {
        self.c[(i, i)].re
    }

    pub fn total(&self) -> f64 {
        self.c.diagonal().iter().map(|v| v.re).sum()
    }
}

/// Exact correlations of the quadratic chain `H = −J Σ (a_{j+1}†a_j + h.c.)`
/// with loss `γ_j`: `C' = i[h, C] − ½(ΓC + CΓ)`, solved as
/// `C(t) = e^{Kt} C₀ e^{K†t}` with `K = ih − Γ/2`.
pub fn bosonic_moment_solution(
    hopping: f64,
    gamma: &[f64],
    c0: &SecondMomentState,
    t: f64,
) -> Result<SecondMomentState> {
    let m = gamma.len();
    if c0.modes() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: c0.modes(),
        });
    }
    if gamma.iter().any(|g| !(*g >= 0.0)) || !hopping.is_finite() {
        return Err(Error::InvalidConfig("bosonic chain needs γ ≥ 0".into()));
    }
    let mut k = DMatrix::<Complex64>::zeros(m, m);
    for j in 0..m.saturating_sub(1) {
        k[(j, j + 1)] = Complex64::new(0.0, -hopping);
        k[(j + 1, j)] = Complex64::new(0.0, -hopping);
    }
    for (j, &g) in gamma.iter().enumerate() {
        k[(j, j)] = Complex64::new(-0.5 * g, 0.0);
    }
    let e = (k * Complex64::new(t, 0.0)).exp();
    let c = &e * &c0.c * e.adjoint();
    let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(SecondMomentState { c })
}
