//! Fourier pseudo-spectral evaluation of a [`QOperator`] on a periodic grid
//! and the adaptive time stepper built on it.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{project_values, GridGeometry, GridState, MAX_GRID_DIM};
use super::ode::{dopri5, Dopri5Options};
use crate::error::{Error, Result};
use crate::liouvillian::QOperator;
use crate::par;

/// Lines per parallel FFT batch.
const LINES_PER_TASK: usize = 16;

/// `Σ_m c_m x^{p_m}` sharing one derivative multi-index.
#[derive(Debug, Clone)]
struct Group {
    derivs: Vec<u32>,
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl Group {
    fn coeff_at(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, poly)| poly.iter().fold(*c, |acc, &(i, e)| acc * x[i].powi(e)))
            .sum()
    }
}

/// A compiled operator bound to a grid.
pub struct GridOperator {
    geom: GridGeometry,
    groups: Vec<Group>,
    /// `groups` without the constant `∂_a²` terms held in `diffusion`.
    rest: Vec<Group>,
    /// Constant coefficient of `∂_a²` per axis.
    diffusion: Vec<f64>,
    axes: Vec<AxisFft>,
}

struct AxisFft {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers in FFT order.
    kappa: Vec<f64>,
}

impl GridOperator {
    pub fn new(op: &QOperator, geom: &GridGeometry) -> Result<Self> {
        let d = geom.dim();
        if op.dim() > MAX_GRID_DIM {
            return Err(Error::DimensionLimit(op.dim()));
        }
        if op.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                found: d,
            });
        }
        let order = op.max_order();
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        let mut map: BTreeMap<Vec<u32>, Vec<(f64, Vec<(usize, i32)>)>> = BTreeMap::new();
        for m in op.monomials() {
            let poly = m
                .powers
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| (i, e as i32))
                .collect();
            map.entry(m.derivs.clone()).or_default().push((m.coeff, poly));
        }
        let groups: Vec<Group> = map
            .into_iter()
            .map(|(derivs, terms)| Group { derivs, terms })
            .collect();
        let mut diffusion = vec![0.0; d];
        let mut rest = Vec::with_capacity(groups.len());
        for g in &groups {
            let second: Vec<usize> = (0..d).filter(|&a| g.derivs[a] == 2).collect();
            let pure = second.len() == 1 && g.derivs.iter().sum::<u32>() == 2;
            let mut g = g.clone();
            if pure {
                diffusion[second[0]] += g.terms.iter().filter(|(_, p)| p.is_empty()).map(|(c, _)| c).sum::<f64>();
                g.terms.retain(|(_, p)| !p.is_empty());
            }
            if !g.terms.is_empty() {
                rest.push(g);
            }
        }
        let mut planner = FftPlanner::new();
        let axes = (0..d)
            .map(|a| {
                let n = geom.sizes()[a];
                let len = geom.hi()[a] - geom.lo()[a];
                let kappa = (0..n)
                    .map(|k| {
                        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                        2.0 * std::f64::consts::PI * kk / len
                    })
                    .collect();
                AxisFft {
                    fwd: planner.plan_fft_forward(n),
                    inv: planner.plan_fft_inverse(n),
                    kappa,
                }
            })
            .collect();
        Ok(Self {
            geom: geom.clone(),
            groups,
            rest,
            diffusion,
            axes,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    /// `(L̃f)` at every grid point.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        self.apply_groups(&self.groups, f, out);
    }

    /// Everything except the constant diffusion, which [`Self::diffuse`]
    /// integrates exactly.
    pub(super) fn apply_rest_into(&self, f: &[f64], out: &mut [f64]) {
        self.apply_groups(&self.rest, f, out);
    }

    fn has_diffusion(&self) -> bool {
        self.diffusion.iter().any(|&c| c != 0.0)
    }

    /// Applies `exp(τ Σ_a c_a ∂_a²)` in place.
    pub(super) fn diffuse(&self, f: &mut [f64], tau: f64) {
        for (a, &c) in self.diffusion.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let ax = &self.axes[a];
            let n = self.geom.sizes()[a];
            let scale = 1.0 / n as f64;
            let buf = self.axis_transform(f, a, |k, v| *v *= (-c * ax.kappa[k] * ax.kappa[k] * tau).exp() * scale);
            self.scatter(&buf, a, |v| v.re, f);
        }
    }

    fn apply_groups(&self, groups: &[Group], f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = self.geom.dim();
        let unit = |a: usize, k: u32| {
            let mut v = vec![0u32; d];
            v[a] = k;
            v
        };
        for g in groups {
            let ord: u32 = g.derivs.iter().sum();
            if ord == 0 {
                self.accumulate(out, g, f);
            }
        }
        for a in 0..d {
            let g1 = groups.iter().find(|g| g.derivs == unit(a, 1));
            let g2 = groups.iter().find(|g| g.derivs == unit(a, 2));
            if g1.is_none() && g2.is_none() {
                continue;
            }
            let (d1, d2) = self.axis_derivatives(f, a);
            if let Some(g) = g1 {
                self.accumulate(out, g, &d1);
            }
            if let Some(g) = g2 {
                self.accumulate(out, g, &d2);
            }
        }
        // Mixed second derivatives, rare in practice.
        for g in groups {
            let nz: Vec<usize> = (0..d).filter(|&a| g.derivs[a] > 0).collect();
            if nz.len() == 2 {
                let (da, _) = self.axis_derivatives(f, nz[0]);
                let (dab, _) = self.axis_derivatives(&da, nz[1]);
                self.accumulate(out, g, &dab);
            }
        }
    }

    fn accumulate(&self, out: &mut [f64], g: &Group, field: &[f64]) {
        let d = self.geom.dim();
        let chunk = self.geom.sizes()[d - 1];
        let geom = &self.geom;
        par::for_each_chunk_mut(out, chunk, |ci, o| {
            let mut x = [0.0; MAX_GRID_DIM];
            let base = ci * chunk;
            geom.point(base, &mut x[..d]);
            let h = geom.spacing(d - 1);
            for (k, v) in o.iter_mut().enumerate() {
                x[d - 1] = geom.lo()[d - 1] + k as f64 * h;
                *v += g.coeff_at(&x[..d]) * field[base + k];
            }
        });
    }

    /// First and second spectral derivatives along `axis`, from one forward
    /// and one inverse transform per line: the inverse of
    /// `iκ F + i(−κ² F)` has `∂f` as real part and `∂²f` as imaginary part.
    fn axis_derivatives(&self, f: &[f64], axis: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.geom.sizes()[axis];
        let kappa = &self.axes[axis].kappa;
        let scale = 1.0 / n as f64;
        let buf = self.axis_transform(f, axis, |k, v| {
            let kap = kappa[k];
            let first = if k == n / 2 { 0.0 } else { kap };
            *v = Complex64::new(0.0, first - kap * kap) * *v * scale;
        });
        let mut d1 = vec![0.0; f.len()];
        let mut d2 = vec![0.0; f.len()];
        self.scatter(&buf, axis, |v| v.re, &mut d1);
        self.scatter(&buf, axis, |v| v.im, &mut d2);
        (d1, d2)
    }

    /// Transforms every line along `axis`, applies `filter(k, F_k)` and
    /// transforms back. Lines are laid out contiguously in the result.
    fn axis_transform<M>(&self, f: &[f64], axis: usize, filter: M) -> Vec<Complex64>
    where
        M: Fn(usize, &mut Complex64) + Sync,
    {
        let n = self.geom.sizes()[axis];
        let s = self.geom.stride(axis);
        let ax = &self.axes[axis];
        let mut buf = vec![Complex64::new(0.0, 0.0); f.len()];
        par::for_each_chunk_mut(&mut buf, n * LINES_PER_TASK, |ci, chunk| {
            for (j, line) in chunk.chunks_mut(n).enumerate() {
                let l = ci * LINES_PER_TASK + j;
                let base = (l / s) * n * s + l % s;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = Complex64::new(f[base + k * s], 0.0);
                }
            }
            ax.fwd.process(chunk);
            for line in chunk.chunks_mut(n) {
                for (k, v) in line.iter_mut().enumerate() {
                    filter(k, v);
                }
            }
            ax.inv.process(chunk);
        });
        buf
    }

    /// Writes `part` of line-ordered `buf` back into grid order.
    fn scatter(&self, buf: &[Complex64], axis: usize, part: impl Fn(&Complex64) -> f64, out: &mut [f64]) {
        let n = self.geom.sizes()[axis];
        let s = self.geom.stride(axis);
        for l in 0..buf.len() / n {
            let base = (l / s) * n * s + l % s;
            for k in 0..n {
                out[base + k * s] = part(&buf[l * n + k]);
            }
        }
    }
}

/// Solver settings for [`pseudospectral_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub rtol: f64,
    /// Absolute tolerance relative to the initial peak density.
    pub atol_rel: f64,
    /// Strang splitting step when the operator has constant diffusion.
    pub split_dt: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol_rel: 1e-8,
            split_dt: 0.01,
        }
    }
}

/// Evolves `q0` under `∂_t Q = L̃Q` to `t_end`.
pub fn pseudospectral_solve(op: &QOperator, q0: &GridState, t_end: f64, rtol: f64) -> Result<GridState> {
    let opts = SpectralOptions {
        rtol,
        ..Default::default()
    };
    let mut out = pseudospectral_trajectory(op, q0, &[t_end], &opts)?;
    Ok(out.pop().expect("one output time").1)
}

/// Evolves `q0` and returns the state at each (increasing) time in `times`.
/// After every accepted step negatives are clipped, the boundary is zeroed
/// and the mass renormalized.
///
/// Constant-coefficient diffusion is stiff on fine grids, so when present it
/// is split off (Strang) and integrated exactly in Fourier space; the rest of
/// the operator goes through adaptive DOPRI5 on each `split_dt` substep.
pub fn pseudospectral_trajectory(
    op: &QOperator,
    q0: &GridState,
    times: &[f64],
    opts: &SpectralOptions,
) -> Result<Vec<(f64, GridState)>> {
    let d = op.dim();
    if d > MAX_GRID_DIM {
        return Err(Error::DimensionLimit(d));
    }
    if !(opts.split_dt > 0.0) {
        return Err(Error::InvalidConfig("split_dt must be positive".into()));
    }
    let gop = GridOperator::new(op, q0.geometry())?;
    let geom = q0.geometry().clone();
    let peak = q0.values().iter().cloned().fold(0.0, f64::max);
    let mut ode = Dopri5Options {
        rtol: opts.rtol,
        atol: opts.atol_rel * peak.max(f64::MIN_POSITIVE),
        ..Default::default()
    };
    let split = gop.has_diffusion();
    let mut y = q0.values().to_vec();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &te in times {
        if te < t {
            return Err(Error::Precondition("output times must increase".into()));
        }
        if !split {
            dopri5(
                &mut y,
                t,
                te,
                &ode,
                |_, f, df| gop.apply_into(f, df),
                |_, v| {
                    project_values(&geom, v);
                    true
                },
            )?;
        } else if te > t {
            let n = ((te - t) / opts.split_dt).ceil().max(1.0) as usize;
            let h = (te - t) / n as f64;
            for i in 0..n {
                let t0 = t + i as f64 * h;
                gop.diffuse(&mut y, 0.5 * h);
                let stats = dopri5(
                    &mut y,
                    t0,
                    t0 + h,
                    &ode,
                    |_, f, df| gop.apply_rest_into(f, df),
                    |_, v| {
                        project_values(&geom, v);
                        true
                    },
                )?;
                gop.diffuse(&mut y, 0.5 * h);
                project_values(&geom, &mut y);
                // Carry the last step size over to the next substep.
                ode.h0 = Some(h / stats.accepted.max(1) as f64);
            }
        }
        t = te;
        out.push((te, GridState::new(geom.clone(), y.clone())?));
    }
    Ok(out)
}
