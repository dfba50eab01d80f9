//! Truncated Fock-space oracle for one or two modes.
//!
//! Two-mode basis states `|n₁, n₂⟩` are stored at index `n₁·K + n₂`.

mod evolve;
mod taylor;

pub use evolve::{lindblad_fock_evolve, q_dynamics_crosscheck, FOCK_DT};
pub use taylor::{rho_from_q_taylor, QTaylorTable};

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::reference::GridState;

/// Default cutoff for one mode.
pub const DEFAULT_CUTOFF_1: usize = 30;
/// Default cutoff per mode for two modes.
pub const DEFAULT_CUTOFF_2: usize = 8;
/// Largest tolerated error contribution from truncating coherent states.
pub const TRUNCATION_TOL: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const EIG_TOL: f64 = 1e-10;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    modes: usize,
    cutoff: usize,
    mat: DMatrix<Complex64>,
}

impl FockDensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(modes: usize, cutoff: usize, mat: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self::unchecked(modes, cutoff, mat)?;
        rho.check(HERMITIAN_TOL, TRACE_TOL, EIG_TOL)?;
        Ok(rho)
    }

    pub(crate) fn unchecked(modes: usize, cutoff: usize, mat: DMatrix<Complex64>) -> Result<Self> {
        if !(1..=2).contains(&modes) {
            return Err(Error::InvalidConfig(format!(
                "Fock oracle supports 1 or 2 modes, got {modes}"
            )));
        }
        if cutoff == 0 {
            return Err(Error::InvalidConfig("cutoff must be positive".into()));
        }
        let dim = cutoff.pow(modes as u32);
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: mat.nrows(),
            });
        }
        Ok(Self { modes, cutoff, mat })
    }

    /// Returns an error naming the first violated invariant.
    pub fn check(&self, herm_tol: f64, trace_tol: f64, eig_tol: f64) -> Result<()> {
        let herm = (&self.mat - self.mat.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if herm > herm_tol {
            return Err(Error::InconsistentTable(format!("not Hermitian ({herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > trace_tol {
            return Err(Error::InconsistentTable(format!("trace {tr}")));
        }
        let sym = (&self.mat + self.mat.adjoint()) * Complex64::new(0.5, 0.0);
        let min = sym
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -eig_tol {
            return Err(Error::InconsistentTable(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|v| v.re).sum()
    }

    pub fn vacuum(modes: usize, cutoff: usize) -> Result<Self> {
        let mut psi = vec![czero(); cutoff.pow(modes as u32)];
        psi[0] = Complex64::new(1.0, 0.0);
        Self::pure(modes, cutoff, &psi)
    }

    /// `|ψ⟩⟨ψ|` for a normalized amplitude vector.
    pub fn pure(modes: usize, cutoff: usize, psi: &[Complex64]) -> Result<Self> {
        let d = psi.len();
        let mat = DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
        Self::new(modes, cutoff, mat)
    }

    /// Product of coherent states `|β_1⟩⊗…`, truncated and renormalized.
    pub fn coherent(beta: &[Complex64], cutoff: usize) -> Result<Self> {
        let per: Vec<Vec<Complex64>> = beta.iter().map(|&b| coherent_amplitudes(b, cutoff)).collect();
        let mut psi = product_state(&per, cutoff);
        let norm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|v| *v /= norm);
        Self::pure(beta.len(), cutoff, &psi)
    }

    /// Single-mode thermal state with mean occupation `nbar`, truncated and
    /// renormalized.
    pub fn thermal(nbar: f64, cutoff: usize) -> Result<Self> {
        let x = nbar / (nbar + 1.0);
        let p: Vec<f64> = (0..cutoff).map(|n| x.powi(n as i32)).collect();
        let s: f64 = p.iter().sum();
        let mat = DMatrix::from_fn(cutoff, cutoff, |i, j| {
            if i == j {
                Complex64::new(p[i] / s, 0.0)
            } else {
                czero()
            }
        });
        Self::new(1, cutoff, mat)
    }

    /// `n_total` particles in the antisymmetric two-well mode `(a₁ − a₂)/√2`.
    pub fn two_well_bec(n_total: usize, cutoff: usize) -> Result<Self> {
        if n_total >= cutoff {
            return Err(Error::Cutoff(format!(
                "{n_total} particles need a cutoff above {n_total}"
            )));
        }
        let mut psi = vec![czero(); cutoff * cutoff];
        let ln2 = std::f64::consts::LN_2;
        for k in 0..=n_total {
            let ln_binom = ln_factorial(n_total) - ln_factorial(k) - ln_factorial(n_total - k);
            let amp = (0.5 * ln_binom - 0.5 * n_total as f64 * ln2).exp();
            let sign = if (n_total - k) % 2 == 0 { 1.0 } else { -1.0 };
            psi[k * cutoff + (n_total - k)] = Complex64::new(sign * amp, 0.0);
        }
        Self::pure(2, cutoff, &psi)
    }

    /// Occupation number of each basis index in `mode`.
    fn level(&self, idx: usize, mode: usize) -> usize {
        if self.modes == 1 {
            idx
        } else if mode == 0 {
            idx / self.cutoff
        } else {
            idx % self.cutoff
        }
    }

    /// Matrix of `a` on `mode` in this basis.
    pub fn annihilation(&self, mode: usize) -> DMatrix<Complex64> {
        let d = self.dim();
        let k = self.cutoff;
        let mut a = DMatrix::from_element(d, d, czero());
        for j in 0..d {
            let n = self.level(j, mode);
            if n > 0 {
                let i = if self.modes == 1 || mode == 1 { j - 1 } else { j - k };
                a[(i, j)] = Complex64::new((n as f64).sqrt(), 0.0);
            }
        }
        a
    }

    /// `tr(ρ O)`.
    pub fn expect(&self, op: &DMatrix<Complex64>) -> Complex64 {
        (&self.mat * op).trace()
    }

    /// `⟨a_m†a_m⟩`.
    pub fn occupation(&self, mode: usize) -> f64 {
        (0..self.dim())
            .map(|i| self.level(i, mode) as f64 * self.mat[(i, i)].re)
            .sum()
    }

    /// Population of the highest kept level of each mode.
    fn edge_population(&self, mode: usize) -> f64 {
        (0..self.dim())
            .filter(|&i| self.level(i, mode) == self.cutoff - 1)
            .map(|i| self.mat[(i, i)].re.max(0.0))
            .sum()
    }

    /// Text form: header, then one matrix row per line as `re,im` pairs.
    pub fn to_text(&self) -> String {
        let mut s = format!("qflow-fock 1\nmodes {}\ncutoff {}\n", self.modes, self.cutoff);
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let v = self.mat[(i, j)];
                    format!("{:?},{:?}", v.re, v.im)
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("truncated density matrix".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "qflow-fock 1" {
            return Err(Error::Format("not a density matrix file".into()));
        }
        let field = |line: String, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("expected `{key} N`")))
        };
        let modes = field(next()?, "modes")?;
        let cutoff = field(next()?, "cutoff")?;
        if !(1..=2).contains(&modes) || cutoff == 0 || cutoff > 1000 {
            return Err(Error::Format("unsupported modes or cutoff".into()));
        }
        let d = cutoff.pow(modes as u32);
        let mut mat = DMatrix::from_element(d, d, czero());
        for i in 0..d {
            let line = next()?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != d {
                return Err(Error::Format(format!("row {i} has {} entries", vals.len())));
            }
            for (j, v) in vals.iter().enumerate() {
                let (re, im) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Format(format!("bad entry `{v}`")))?;
                let p = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
                mat[(i, j)] = Complex64::new(p(re)?, p(im)?);
            }
        }
        Self::unchecked(modes, cutoff, mat)
    }
}

/// `e^{−|β|²/2} βⁿ/√(n!)` for `n < k`.
fn coherent_amplitudes(beta: Complex64, k: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(k);
    let mut c = Complex64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 0..k {
        out.push(c);
        c = c * beta / ((n + 1) as f64).sqrt();
    }
    out
}

fn product_state(per_mode: &[Vec<Complex64>], k: usize) -> Vec<Complex64> {
    match per_mode {
        [a] => a.clone(),
        [a, b] => {
            let mut psi = vec![czero(); k * k];
            for i in 0..k {
                for j in 0..k {
                    psi[i * k + j] = a[i] * b[j];
                }
            }
            psi
        }
        _ => unreachable!("one or two modes"),
    }
}

/// `Σ_{n≥k} |⟨n|α⟩|²`, the Poisson tail with mean `|α|²`.
fn coherent_tail(alpha: Complex64, k: usize) -> f64 {
    let lam = alpha.norm_sqr();
    if lam == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if (k as f64) <= lam {
        // The head is the smaller side; subtract it.
        let mut term = (-lam).exp();
        let mut head = 0.0;
        for n in 0..k {
            head += term;
            term *= lam / (n + 1) as f64;
        }
        return (1.0 - head).max(0.0);
    }
    let mut ln_term = k as f64 * lam.ln() - lam - ln_factorial(k);
    let mut tail = 0.0;
    for n in k..k + 10_000 {
        let t = ln_term.exp();
        tail += t;
        if t < 1e-18 * tail {
            break;
        }
        ln_term += lam.ln() - ((n + 1) as f64).ln();
    }
    tail
}

/// `Q(α) = (1/π)⟨α|ρ|α⟩` with one `α` per mode.
///
/// Fails with a cutoff error when the truncation could matter: for each mode
/// the estimate `√(coherent tail beyond K) · √(population of level K−1)` must
/// stay below `1e-10`.
pub fn q_from_rho(rho: &FockDensityMatrix, alpha: &[Complex64]) -> Result<f64> {
    if alpha.len() != rho.modes {
        return Err(Error::DimensionMismatch {
            expected: rho.modes,
            found: alpha.len(),
        });
    }
    let k = rho.cutoff;
    for (m, &a) in alpha.iter().enumerate() {
        let est = coherent_tail(a, k).sqrt() * rho.edge_population(m).sqrt();
        if est > TRUNCATION_TOL {
            return Err(Error::Cutoff(format!(
                "truncation estimate {est:e} at |α| = {:.3} with K = {k}",
                a.norm()
            )));
        }
    }
    Ok(q_from_rho_unchecked(rho, alpha))
}

pub(crate) fn q_from_rho_unchecked(rho: &FockDensityMatrix, alpha: &[Complex64]) -> f64 {
    let k = rho.cutoff;
    let per: Vec<Vec<Complex64>> = alpha.iter().map(|&a| coherent_amplitudes(a, k)).collect();
    let c = product_state(&per, k);
    let d = c.len();
    let mut acc = czero();
    for m in 0..d {
        if c[m] == czero() {
            continue;
        }
        let mut row = czero();
        for n in 0..d {
            row += rho.mat[(m, n)] * c[n];
        }
        acc += c[m].conj() * row;
    }
    acc.re / std::f64::consts::PI.powi(rho.modes as i32)
}

/// `α` of `mode` from a point in `(q_1..q_M, p_1..p_M)` layout.
fn alpha_of(x: &[f64], mode: usize) -> Complex64 {
    let m = x.len() / 2;
    Complex64::new(x[mode], x[m + mode])
}

/// Monte Carlo estimate of `⟨a^m (a†)^n⟩ = E[α^m (α*)^n]` on `mode`, with
/// the standard error of the mean (per real and imaginary part).
pub fn observable_moment_samples(
    points: &[f64],
    dim: usize,
    mode: usize,
    m: u32,
    n: u32,
) -> (Complex64, Complex64) {
    let vals: Vec<Complex64> = points
        .chunks(dim)
        .map(|x| {
            let a = alpha_of(x, mode);
            a.powu(m) * a.conj().powu(n)
        })
        .collect();
    let cnt = vals.len() as f64;
    let mean = vals.iter().sum::<Complex64>() / cnt;
    let (mut vr, mut vi) = (0.0, 0.0);
    for v in &vals {
        vr += (v.re - mean.re).powi(2);
        vi += (v.im - mean.im).powi(2);
    }
    let denom = (cnt - 1.0).max(1.0) * cnt;
    (mean, Complex64::new((vr / denom).sqrt(), (vi / denom).sqrt()))
}

/// Quadrature of `α^m (α*)^n Q` over a grid.
pub fn observable_moment_grid(grid: &GridState, mode: usize, m: u32, n: u32) -> Complex64 {
    let g = grid.geometry();
    let mut x = vec![0.0; g.dim()];
    let mut acc = czero();
    for (i, &v) in grid.values().iter().enumerate() {
        g.point(i, &mut x);
        let a = alpha_of(&x, mode);
        acc += a.powu(m) * a.conj().powu(n) * v;
    }
    acc * g.cell_volume()
}

#[cfg(test)]
mod tests;
