//! Inversion of a Q function's Taylor coefficients into `ρ`.
//!
//! Writing `Q = Σ T_{a,b} (α*)^a α^b` and expanding `⟨α|ρ|α⟩` in the number
//! basis gives
//! `⟨m|ρ|n⟩ = π √(m! n!) Σ_{k ≤ min(m,n)} T_{m−k, n−k} / k!`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{ln_factorial, FockDensityMatrix};
use crate::error::{Error, Result};

/// Tolerance for the invariant checks on a reconstructed `ρ`.
const RECON_TOL: f64 = 1e-6;

/// Single-mode Taylor coefficients `T_{a,b}` of `(α*)^a α^b`, `a, b ≤ A_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTaylorTable {
    coeffs: DMatrix<Complex64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl QTaylorTable {
    pub fn new(coeffs: DMatrix<Complex64>) -> Result<Self> {
        if coeffs.nrows() != coeffs.ncols() || coeffs.nrows() == 0 {
            return Err(Error::InvalidConfig("Taylor table must be square".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(a_max: usize) -> Self {
        Self {
            coeffs: DMatrix::from_element(a_max + 1, a_max + 1, Complex64::new(0.0, 0.0)),
        }
    }

    pub fn a_max(&self) -> usize {
        self.coeffs.nrows() - 1
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.coeffs[(a, b)]
    }

    pub fn coeffs(&self) -> &DMatrix<Complex64> {
        &self.coeffs
    }

    /// `e^{−|α|²}/π`.
    pub fn vacuum(a_max: usize) -> Self {
        Self::thermal(0.0, a_max)
    }

    /// `e^{−|α|²/(n̄+1)} / (π(n̄+1))`.
    pub fn thermal(nbar: f64, a_max: usize) -> Self {
        let s = nbar + 1.0;
        let mut t = Self::zeros(a_max);
        for a in 0..=a_max {
            let v = (-1.0 / s).powi(a as i32) / (factorial(a) * std::f64::consts::PI * s);
            t.coeffs[(a, a)] = Complex64::new(v, 0.0);
        }
        t
    }

    /// `e^{−|α−β|²}/π`, expanded as
    /// `e^{−|β|²}/π · e^{−αα*} e^{α*β} e^{αβ*}`.
    pub fn coherent(beta: Complex64, a_max: usize) -> Self {
        let mut t = Self::zeros(a_max);
        let pref = (-beta.norm_sqr()).exp() / std::f64::consts::PI;
        let bp: Vec<Complex64> = (0..=a_max).map(|n| beta.powu(n as u32) / factorial(n)).collect();
        let bc: Vec<Complex64> = (0..=a_max)
            .map(|n| beta.conj().powu(n as u32) / factorial(n))
            .collect();
        for a in 0..=a_max {
            for b in 0..=a_max {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..=a.min(b) {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    acc += bp[a - k] * bc[b - k] * (sign / factorial(k));
                }
                t.coeffs[(a, b)] = acc * pref;
            }
        }
        t
    }

    /// Forward map of a single-mode `ρ`:
    /// `T_{a,b} = (1/π) Σ_s (−1)^s/s! · ρ_{a−s,b−s}/√((a−s)!(b−s)!)`.
    pub fn from_rho(rho: &FockDensityMatrix, a_max: usize) -> Result<Self> {
        if rho.modes() != 1 {
            return Err(Error::InvalidConfig("Taylor tables are single-mode".into()));
        }
        let k = rho.cutoff();
        let mut t = Self::zeros(a_max);
        for a in 0..=a_max {
            for b in 0..=a_max {
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..=a.min(b) {
                    let (m, n) = (a - s, b - s);
                    if m >= k || n >= k {
                        continue;
                    }
                    let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                    let w = sign
                        * (-ln_factorial(s) - 0.5 * (ln_factorial(m) + ln_factorial(n))).exp();
                    acc += rho.matrix()[(m, n)] * w;
                }
                t.coeffs[(a, b)] = acc / std::f64::consts::PI;
            }
        }
        Ok(t)
    }
}

/// Density matrix with cutoff `k` from a Taylor table.
pub fn rho_from_q_taylor(table: &QTaylorTable, k: usize) -> Result<FockDensityMatrix> {
    if k == 0 || table.a_max() + 1 < k {
        return Err(Error::Precondition(format!(
            "cutoff {k} needs Taylor coefficients up to order {}",
            k.saturating_sub(1)
        )));
    }
    let mut mat = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for m in 0..k {
        for n in 0..k {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..=m.min(n) {
                acc += table.get(m - j, n - j) / factorial(j);
            }
            let scale = std::f64::consts::PI * (0.5 * (ln_factorial(m) + ln_factorial(n))).exp();
            mat[(m, n)] = acc * scale;
        }
    }
    let rho = FockDensityMatrix::unchecked(1, k, mat)?;
    rho.check(RECON_TOL, RECON_TOL, RECON_TOL)?;
    Ok(rho)
}
