use super::QOperator;
use crate::error::{Error, Result};
use crate::flow::{DerivativePlan, FlowModel, JetScratch};
use crate::reference::{GridOperator, GridState};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Deriv {
    None,
    One(usize),
    Two(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct EvalTerm {
    coeff: f64,
    poly: Vec<(usize, i32)>,
    deriv: Deriv,
}

/// Evaluates `(L̃Q)/Q` from `log Q` derivatives. Built once per operator.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEvaluator {
    dim: usize,
    terms: Vec<EvalTerm>,
    plan: DerivativePlan,
}

impl RatioEvaluator {
    pub fn new(op: &QOperator) -> Result<Self> {
        let order = op.max_order();
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        let dim = op.dim();
        let mut pairs = Vec::new();
        let terms = op
            .monomials()
            .iter()
            .map(|m| {
                let poly = m
                    .powers
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| (i, e as i32))
                    .collect();
                let idx: Vec<usize> = m
                    .derivs
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &e)| std::iter::repeat_n(i, e as usize))
                    .collect();
                let deriv = match idx.as_slice() {
                    [] => Deriv::None,
                    [i] => Deriv::One(*i),
                    [i, j] => {
                        if i != j {
                            pairs.push((*i, *j));
                        }
                        Deriv::Two(*i, *j)
                    }
                    _ => unreachable!("order checked above"),
                };
                EvalTerm {
                    coeff: m.coeff,
                    poly,
                    deriv,
                }
            })
            .collect();
        Ok(Self {
            dim,
            terms,
            plan: DerivativePlan::with_pairs(dim, pairs),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Derivatives of `log Q` this operator needs.
    pub fn plan(&self) -> &DerivativePlan {
        &self.plan
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Σ coeff · poly(x) · D` with `D = 1`, `g_i`, or `H_ij + g_i g_j`.
    pub fn ratio(&self, x: &[f64], grad: &[f64], hess: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for &(i, e) in &t.poly {
                v *= x[i].powi(e);
            }
            v *= match t.deriv {
                Deriv::None => 1.0,
                Deriv::One(i) => grad[i],
                Deriv::Two(i, j) => hess[i * d + j] + grad[i] * grad[j],
            };
            acc += v;
        }
        acc
    }

    /// `(log q(x), (L̃q)/q (x))` for a flow density.
    pub fn ratio_for_model(&self, model: &FlowModel, scratch: &mut JetScratch, x: &[f64]) -> (f64, f64) {
        let r = scratch.eval(model, &self.plan, x);
        (r.log_q, self.ratio(x, &r.grad, &r.hess))
    }

    /// Scratch space sized for this evaluator's plan.
    pub fn scratch(&self, model: &FlowModel) -> JetScratch {
        JetScratch::new(model, &self.plan)
    }
}

/// `(L̃Q)/Q` at `x` given `∇ log Q` and the row-major Hessian of `log Q`.
pub fn apply_ratio(op: &QOperator, x: &[f64], grad_logq: &[f64], hess_logq: &[f64]) -> Result<f64> {
    let ev = RatioEvaluator::new(op)?;
    let d = op.dim();
    if x.len() != d || grad_logq.len() != d || hess_logq.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    Ok(ev.ratio(x, grad_logq, hess_logq))
}

/// `∫ L̃Q` over the grid; vanishes for trace-preserving generators.
pub fn conservation_defect(op: &QOperator, density: &GridState) -> Result<f64> {
    let gop = GridOperator::new(op, density.geometry())?;
    let out = gop.apply(density.values());
    Ok(out.iter().sum::<f64>() * density.geometry().cell_volume())
}
