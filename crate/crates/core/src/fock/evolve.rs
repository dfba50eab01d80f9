use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{q_from_rho, FockDensityMatrix};
use crate::error::{Error, Result};
use crate::liouvillian::{compile, LindbladTerm, ModePowers};
use crate::reference::{pseudospectral_trajectory, GridGeometry, GridState, SpectralOptions};

/// Step used by [`q_dynamics_crosscheck`].
pub const FOCK_DT: f64 = 1e-3;
/// Largest tolerated change of `tr ρ` over a run.
const LEAK_TOL: f64 = 1e-6;

/// `(a†)^j a^k` on one basis state: image index and amplitude per input index.
type LadderMap = Vec<Option<(usize, f64)>>;

fn ladder_map(modes: usize, cutoff: usize, ops: &[(u32, u32)]) -> LadderMap {
    let d = cutoff.pow(modes as u32);
    (0..d)
        .map(|idx| {
            let mut levels = if modes == 1 {
                vec![idx]
            } else {
                vec![idx / cutoff, idx % cutoff]
            };
            let mut amp = 1.0;
            for (m, &(j, k)) in ops.iter().enumerate() {
                let n = levels[m];
                let (j, k) = (j as usize, k as usize);
                if n < k {
                    return None;
                }
                let lowered = n - k;
                let raised = lowered + j;
                if raised >= cutoff {
                    return None;
                }
                for v in lowered + 1..=n {
                    amp *= (v as f64).sqrt();
                }
                for v in lowered + 1..=raised {
                    amp *= (v as f64).sqrt();
                }
                levels[m] = raised;
            }
            let out = if modes == 1 {
                levels[0]
            } else {
                levels[0] * cutoff + levels[1]
            };
            Some((out, amp))
        })
        .collect()
}

struct SparseTerm {
    coeff: Complex64,
    left: LadderMap,
    right: LadderMap,
}

fn build_terms(rho: &FockDensityMatrix, terms: &[LindbladTerm]) -> Result<Vec<SparseTerm>> {
    terms
        .iter()
        .map(|t| {
            if t.powers.len() != rho.modes() {
                return Err(Error::DimensionMismatch {
                    expected: rho.modes(),
                    found: t.powers.len(),
                });
            }
            let left: Vec<(u32, u32)> = t.powers.iter().map(|p: &ModePowers| (p.j, p.k)).collect();
            let right: Vec<(u32, u32)> = t.powers.iter().map(|p| (p.l, p.s)).collect();
            Ok(SparseTerm {
                coeff: t.coeff,
                left: ladder_map(rho.modes(), rho.cutoff(), &left),
                right: ladder_map(rho.modes(), rho.cutoff(), &right),
            })
        })
        .collect()
}

/// `Σ c · L ρ R`, using that every ladder product has one entry per column.
fn rhs(terms: &[SparseTerm], rho: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
    out.fill(Complex64::new(0.0, 0.0));
    let d = rho.nrows();
    for t in terms {
        for b in 0..d {
            let Some((rb, cr)) = t.right[b] else { continue };
            for c in 0..d {
                let Some((lc, cl)) = t.left[c] else { continue };
                out[(lc, b)] += t.coeff * (cl * cr) * rho[(c, rb)];
            }
        }
    }
}

/// Integrates `ρ' = Σ c (a†)^j a^k ρ (a†)^l a^s` with classical RK4.
pub fn lindblad_fock_evolve(
    rho0: &FockDensityMatrix,
    terms: &[LindbladTerm],
    dt: f64,
    steps: usize,
) -> Result<FockDensityMatrix> {
    if !(dt > 0.0) && steps > 0 {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let sparse = build_terms(rho0, terms)?;
    let d = rho0.dim();
    let zero = || DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
    let mut y = rho0.matrix().clone();
    let (mut k1, mut k2, mut k3, mut k4) = (zero(), zero(), zero(), zero());
    let h = Complex64::new(dt, 0.0);
    let half = Complex64::new(0.5 * dt, 0.0);
    for _ in 0..steps {
        rhs(&sparse, &y, &mut k1);
        rhs(&sparse, &(&y + &k1 * half), &mut k2);
        rhs(&sparse, &(&y + &k2 * half), &mut k3);
        rhs(&sparse, &(&y + &k3 * h), &mut k4);
        y += (&k1 + &k2 * Complex64::new(2.0, 0.0) + &k3 * Complex64::new(2.0, 0.0) + &k4)
            * Complex64::new(dt / 6.0, 0.0);
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("density matrix".into()));
    }
    let out = FockDensityMatrix::unchecked(rho0.modes(), rho0.cutoff(), y)?;
    let leak = (out.trace() - rho0.trace()).abs();
    if leak >= LEAK_TOL {
        return Err(Error::Cutoff(format!(
            "trace changed by {leak:e}; raise the cutoff above {}",
            rho0.cutoff()
        )));
    }
    out.check(1e-10, LEAK_TOL + 1e-10, 1e-8)?;
    Ok(out)
}

fn q_grid(rho: &FockDensityMatrix, geom: &GridGeometry) -> Result<Vec<f64>> {
    let mut x = [0.0; 2];
    (0..geom.len())
        .map(|i| {
            geom.point(i, &mut x);
            q_from_rho(rho, &[Complex64::new(x[0], x[1])])
        })
        .collect()
}

/// Evolves `rho0` in Fock space and its Q function on `geom` with the
/// pseudo-spectral solver, and returns the largest pointwise difference at `t`.
pub fn q_dynamics_crosscheck(
    terms: &[LindbladTerm],
    rho0: &FockDensityMatrix,
    geom: &GridGeometry,
    t: f64,
) -> Result<f64> {
    if rho0.modes() != 1 || geom.dim() != 2 {
        return Err(Error::Precondition("cross-check needs one mode on a 2-D grid".into()));
    }
    let steps = (t / FOCK_DT).ceil() as usize;
    let dt = if steps > 0 { t / steps as f64 } else { FOCK_DT };
    let rho_t = lindblad_fock_evolve(rho0, terms, dt, steps)?;
    let q0 = GridState::new(geom.clone(), q_grid(rho0, geom)?)?;
    let grid_t = if steps == 0 {
        q0
    } else {
        let op = compile(terms, 1)?;
        let opts = SpectralOptions {
            rtol: 1e-10,
            atol_rel: 1e-10,
            split_dt: 1e-3,
        };
        pseudospectral_trajectory(&op, &q0, &[t], &opts)?
            .pop()
            .expect("one output time")
            .1
    };
    let exact = q_grid(&rho_t, geom)?;
    Ok(exact
        .iter()
        .zip(grid_t.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
