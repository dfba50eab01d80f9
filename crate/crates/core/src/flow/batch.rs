use rand::Rng;

use super::{DerivativePlan, FlowModel, JetScratch};
use crate::par;

/// `n` points in `R^d` (row-major) with cached log-densities and, optionally,
/// input derivatives of the log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    pub points: Vec<f64>,
    pub log_q: Vec<f64>,
    pub grad_logq: Option<Vec<f64>>,
    pub hess_logq: Option<Vec<f64>>,
}

impl SampleBatch {
    pub fn from_points(dim: usize, points: Vec<f64>, log_q: Vec<f64>) -> Self {
        assert_eq!(points.len(), dim * log_q.len());
        Self {
            dim,
            points,
            log_q,
            grad_logq: None,
            hess_logq: None,
        }
    }

    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Fills `grad_logq` (`n × d`) and `hess_logq` (`n × d × d`) from `model`.
    pub fn compute_derivatives(&mut self, model: &FlowModel) {
        let d = self.dim;
        let plan = DerivativePlan::full(d);
        let pts = &self.points;
        let out = par::map_init(
            self.len(),
            || JetScratch::new(model, &plan),
            |s, i| {
                let r = s.eval(model, &plan, &pts[i * d..(i + 1) * d]);
                (r.grad.clone(), r.hess.clone())
            },
        );
        let mut g = Vec::with_capacity(self.len() * d);
        let mut h = Vec::with_capacity(self.len() * d * d);
        for (gi, hi) in out {
            g.extend_from_slice(&gi);
            h.extend_from_slice(&hi);
        }
        self.grad_logq = Some(g);
        self.hess_logq = Some(h);
    }
}

/// Draws `n` i.i.d. points `x = f(z)`, `z ~ prior`. Prior draws are taken
/// sequentially from `rng`, so the batch is independent of the thread count.
pub fn sample<R: Rng + ?Sized>(model: &FlowModel, n: usize, rng: &mut R) -> SampleBatch {
    let d = model.dim();
    let mut z = vec![0.0; n * d];
    for row in z.chunks_mut(d) {
        model.prior().sample_into(rng, row);
    }
    let res = par::map_init(
        n,
        || model.new_tape(),
        |tape, i| {
            let lq = tape.forward(model, &z[i * d..(i + 1) * d]);
            (tape.x().to_vec(), lq)
        },
    );
    let mut points = Vec::with_capacity(n * d);
    let mut log_q = Vec::with_capacity(n);
    for (x, lq) in res {
        points.extend_from_slice(&x);
        log_q.push(lq);
    }
    SampleBatch::from_points(d, points, log_q)
}
