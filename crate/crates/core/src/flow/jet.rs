//! Exact first and second input derivatives of `log q` by propagating
//! second-order Taylor jets along a set of directions through the inverse
//! pass. A jet along `u` carries `(f, ∂_u f, ∂²_u f)`; the gradient comes from
//! the coordinate directions and an off-diagonal Hessian entry from
//! `∂²_{e_i+e_j} = H_ii + 2H_ij + H_jj`.

use super::tape::conditioner;
use super::{FlowModel, Shape};

/// Which derivative directions to propagate.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativePlan {
    dim: usize,
    /// Off-diagonal pairs `(i, j)`, `i < j`, each backed by one extra direction.
    pairs: Vec<(usize, usize)>,
}

impl DerivativePlan {
    /// Gradient and Hessian diagonal only.
    pub fn diagonal(dim: usize) -> Self {
        Self { dim, pairs: Vec::new() }
    }

    /// Gradient and the full Hessian.
    pub fn full(dim: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..dim {
            for j in i + 1..dim {
                pairs.push((i, j));
            }
        }
        Self { dim, pairs }
    }

    /// Gradient, diagonal, and the listed mixed entries.
    pub fn with_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut v: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        v.sort_unstable();
        v.dedup();
        Self { dim, pairs: v }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_directions(&self) -> usize {
        self.dim + self.pairs.len()
    }

    fn seed(&self, dirs: &mut [f64]) {
        let k = self.n_directions();
        dirs.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim {
            dirs[i * k + i] = 1.0;
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            dirs[i * k + self.dim + p] = 1.0;
            dirs[j * k + self.dim + p] = 1.0;
        }
    }
}

/// Log-density with its input derivatives at one point. Hessian entries not
/// requested by the plan are left at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDerivs {
    pub log_q: f64,
    pub grad: Vec<f64>,
    /// Row-major `d × d`.
    pub hess: Vec<f64>,
}

/// A vector of jets: values plus first and second directional derivatives,
/// stored `[i * k + dir]`.
#[derive(Debug, Clone)]
struct Jets {
    v: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Jets {
    fn new(n: usize, k: usize) -> Self {
        Self {
            v: vec![0.0; n],
            d1: vec![0.0; n * k],
            d2: vec![0.0; n * k],
        }
    }
}

/// Reusable buffers for jet evaluation of one model under one plan.
#[derive(Debug, Clone)]
pub struct JetScratch {
    k: usize,
    u: Jets,
    inp: Jets,
    h1: Jets,
    h2: Jets,
    out: Jets,
    acc_d1: Vec<f64>,
    acc_d2: Vec<f64>,
    // Plain-value buffers for the conditioner's activations.
    a1: Vec<f64>,
    a2: Vec<f64>,
    raw: Vec<f64>,
    result: PointDerivs,
}

impl JetScratch {
    pub fn new(model: &FlowModel, plan: &DerivativePlan) -> Self {
        let d = model.dim();
        let k = plan.n_directions();
        let h = model.arch().hidden;
        let max_in = (0..model.n_layers()).map(|l| model.shape(l).din).max().unwrap_or(0);
        let max_out = (0..model.n_layers())
            .map(|l| 2 * model.shape(l).dout)
            .max()
            .unwrap_or(0);
        Self {
            k,
            u: Jets::new(d, k),
            inp: Jets::new(max_in, k),
            h1: Jets::new(h, k),
            h2: Jets::new(h, k),
            out: Jets::new(max_out, k),
            acc_d1: vec![0.0; k],
            acc_d2: vec![0.0; k],
            a1: vec![0.0; h],
            a2: vec![0.0; h],
            raw: vec![0.0; max_out],
            result: PointDerivs {
                log_q: 0.0,
                grad: vec![0.0; d],
                hess: vec![0.0; d * d],
            },
        }
    }

    /// Evaluates `log q` and the planned derivatives at `x`.
    pub fn eval(&mut self, model: &FlowModel, plan: &DerivativePlan, x: &[f64]) -> &PointDerivs {
        let k = self.k;
        debug_assert_eq!(k, plan.n_directions());
        self.u.v.copy_from_slice(x);
        plan.seed(&mut self.u.d1);
        self.u.d2.iter_mut().for_each(|v| *v = 0.0);
        let cap = model.arch().s_cap;

        let mut logdet = 0.0;
        self.acc_d1.iter_mut().for_each(|v| *v = 0.0);
        self.acc_d2.iter_mut().for_each(|v| *v = 0.0);

        for (l, layer) in model.layers().iter().enumerate().rev() {
            let sh = model.shape(l);
            let p = model.layer_params(l);
            for (m, &c) in layer.cond.iter().enumerate() {
                self.inp.v[m] = self.u.v[c];
                self.inp.d1[m * k..(m + 1) * k].copy_from_slice(&self.u.d1[c * k..(c + 1) * k]);
                self.inp.d2[m * k..(m + 1) * k].copy_from_slice(&self.u.d2[c * k..(c + 1) * k]);
            }
            conditioner(p, sh, &self.inp.v[..sh.din], &mut self.a1, &mut self.a2, &mut self.raw);
            jet_conditioner(p, sh, k, &self.inp, &self.a1, &self.a2, &mut self.h1, &mut self.h2, &mut self.out);

            for (m, &c) in layer.trans.iter().enumerate() {
                // s = cap·tanh(raw/cap)
                let th = (self.raw[m] / cap).tanh();
                let s = cap * th;
                let f1 = 1.0 - th * th;
                let f2 = -2.0 * th * f1 / cap;
                let e = (-s).exp();
                let tv = self.raw[sh.dout + m];
                let w = self.u.v[c] - tv;
                logdet += s;
                let so = m * k;
                let to = (sh.dout + m) * k;
                let co = c * k;
                for r in 0..k {
                    let r1 = self.out.d1[so + r];
                    let r2 = self.out.d2[so + r];
                    let s1 = f1 * r1;
                    let s2 = f1 * r2 + f2 * r1 * r1;
                    self.acc_d1[r] += s1;
                    self.acc_d2[r] += s2;
                    let e1 = -e * s1;
                    let e2 = e * (s1 * s1 - s2);
                    let w1 = self.u.d1[co + r] - self.out.d1[to + r];
                    let w2 = self.u.d2[co + r] - self.out.d2[to + r];
                    self.u.d1[co + r] = w1 * e + w * e1;
                    self.u.d2[co + r] = w2 * e + 2.0 * w1 * e1 + w * e2;
                }
                self.u.v[c] = w * e;
            }
        }

        // log prior(z) for an axis-aligned Gaussian.
        let prior = model.prior();
        let inv_var = prior.inv_var();
        let lp = prior.log_density(&self.u.v);
        let res = &mut self.result;
        res.log_q = lp - logdet;
        let d = model.dim();
        for r in 0..k {
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            for i in 0..d {
                let zi = self.u.v[i] - prior.mean()[i];
                let z1 = self.u.d1[i * k + r];
                let z2 = self.u.d2[i * k + r];
                a1 -= zi * inv_var[i] * z1;
                a2 -= (z1 * z1 + zi * z2) * inv_var[i];
            }
            let f1 = a1 - self.acc_d1[r];
            let f2 = a2 - self.acc_d2[r];
            if r < d {
                res.grad[r] = f1;
                res.hess[r * d + r] = f2;
            } else {
                // Reuse the accumulator slot for the pair's second derivative.
                self.acc_d2[r] = f2;
            }
        }
        for (p, &(i, j)) in plan.pairs.iter().enumerate() {
            let f2 = self.acc_d2[d + p];
            let hij = 0.5 * (f2 - res.hess[i * d + i] - res.hess[j * d + j]);
            res.hess[i * d + j] = hij;
            res.hess[j * d + i] = hij;
        }
        &self.result
    }
}

/// Propagates jets of the conditioner input through the MLP. Plain activations
/// `a1`, `a2` must already hold the values at the same input.
#[allow(clippy::too_many_arguments)]
#[inline]
fn jet_conditioner(
    p: &[f64],
    sh: Shape,
    k: usize,
    inp: &Jets,
    a1: &[f64],
    a2: &[f64],
    h1: &mut Jets,
    h2: &mut Jets,
    out: &mut Jets,
) {
    let w1 = &p[sh.w1()..sh.b1()];
    let w2 = &p[sh.w2()..sh.b2()];
    let w3 = &p[sh.w3()..sh.b3()];
    // Hidden layer 1.
    for i in 0..sh.h {
        let a = a1[i];
        let f1 = 1.0 - a * a;
        let f2 = -2.0 * a * f1;
        for r in 0..k {
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            for j in 0..sh.din {
                let w = w1[i * sh.din + j];
                p1 += w * inp.d1[j * k + r];
                p2 += w * inp.d2[j * k + r];
            }
            h1.d1[i * k + r] = f1 * p1;
            h1.d2[i * k + r] = f1 * p2 + f2 * p1 * p1;
        }
    }
    // Hidden layer 2.
    for i in 0..sh.h {
        let a = a2[i];
        let f1 = 1.0 - a * a;
        let f2 = -2.0 * a * f1;
        for r in 0..k {
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            for j in 0..sh.h {
                let w = w2[i * sh.h + j];
                p1 += w * h1.d1[j * k + r];
                p2 += w * h1.d2[j * k + r];
            }
            h2.d1[i * k + r] = f1 * p1;
            h2.d2[i * k + r] = f1 * p2 + f2 * p1 * p1;
        }
    }
    // Linear output.
    for i in 0..2 * sh.dout {
        for r in 0..k {
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            for j in 0..sh.h {
                let w = w3[i * sh.h + j];
                p1 += w * h2.d1[j * k + r];
                p2 += w * h2.d2[j * k + r];
            }
            out.d1[i * k + r] = p1;
            out.d2[i * k + r] = p2;
        }
    }
}
