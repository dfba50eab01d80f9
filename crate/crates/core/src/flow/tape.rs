use super::{FlowModel, Shape};

/// Intermediates of one pass through the flow, kept for reverse-mode
/// differentiation. Reusable across points of the same model.
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<LayerTape>,
    z: Vec<f64>,
    x: Vec<f64>,
    adj: Vec<f64>,
    raw_adj: Vec<f64>,
    a1_adj: Vec<f64>,
    a2_adj: Vec<f64>,
    s_cap: f64,
}

#[derive(Debug, Clone)]
struct LayerTape {
    inp: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    s: Vec<f64>,
    ds: Vec<f64>,
    es: Vec<f64>,
    xb: Vec<f64>,
    raw: Vec<f64>,
}

/// `tanh`-saturated log-scale and its derivative with respect to the raw output.
#[inline]
pub(crate) fn clamp_scale(raw: f64, cap: f64) -> (f64, f64) {
    let th = (raw / cap).tanh();
    (cap * th, 1.0 - th * th)
}

/// Evaluates the conditioner MLP, writing hidden activations and raw output.
#[inline]
pub(crate) fn conditioner(p: &[f64], sh: Shape, inp: &[f64], a1: &mut [f64], a2: &mut [f64], raw: &mut [f64]) {
    let (w1, b1, w2, b2, w3, b3) = (
        &p[sh.w1()..sh.b1()],
        &p[sh.b1()..sh.w2()],
        &p[sh.w2()..sh.b2()],
        &p[sh.b2()..sh.w3()],
        &p[sh.w3()..sh.b3()],
        &p[sh.b3()..sh.len()],
    );
    for i in 0..sh.h {
        let row = &w1[i * sh.din..(i + 1) * sh.din];
        let mut acc = b1[i];
        for j in 0..sh.din {
            acc += row[j] * inp[j];
        }
        a1[i] = acc.tanh();
    }
    for i in 0..sh.h {
        let row = &w2[i * sh.h..(i + 1) * sh.h];
        let mut acc = b2[i];
        for j in 0..sh.h {
            acc += row[j] * a1[j];
        }
        a2[i] = acc.tanh();
    }
    for i in 0..2 * sh.dout {
        let row = &w3[i * sh.h..(i + 1) * sh.h];
        let mut acc = b3[i];
        for j in 0..sh.h {
            acc += row[j] * a2[j];
        }
        raw[i] = acc;
    }
}

impl Tape {
    pub fn new(model: &FlowModel) -> Self {
        let h = model.arch.hidden;
        let layers = (0..model.n_layers())
            .map(|l| {
                let sh = model.shape(l);
                LayerTape {
                    inp: vec![0.0; sh.din],
                    a1: vec![0.0; h],
                    a2: vec![0.0; h],
                    s: vec![0.0; sh.dout],
                    ds: vec![0.0; sh.dout],
                    es: vec![0.0; sh.dout],
                    xb: vec![0.0; sh.dout],
                    raw: vec![0.0; 2 * sh.dout],
                }
            })
            .collect();
        let max_out = (0..model.n_layers())
            .map(|l| 2 * model.shape(l).dout)
            .max()
            .unwrap_or(0);
        Self {
            layers,
            z: vec![0.0; model.dim()],
            x: vec![0.0; model.dim()],
            adj: vec![0.0; model.dim()],
            raw_adj: vec![0.0; max_out],
            a1_adj: vec![0.0; h],
            a2_adj: vec![0.0; h],
            s_cap: model.arch.s_cap,
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Prior space to data space; returns `log q(x)`.
    pub fn forward(&mut self, model: &FlowModel, z: &[f64]) -> f64 {
        self.z.copy_from_slice(z);
        self.x.copy_from_slice(z);
        let mut logdet = 0.0;
        for (l, layer) in model.layers().iter().enumerate() {
            let sh = model.shape(l);
            let p = model.layer_params(l);
            let t = &mut self.layers[l];
            for (k, &c) in layer.cond.iter().enumerate() {
                t.inp[k] = self.x[c];
            }
            conditioner(p, sh, &t.inp, &mut t.a1, &mut t.a2, &mut t.raw);
            for (k, &c) in layer.trans.iter().enumerate() {
                let (s, ds) = clamp_scale(t.raw[k], self.s_cap);
                let es = s.exp();
                t.s[k] = s;
                t.ds[k] = ds;
                t.es[k] = es;
                t.xb[k] = self.x[c];
                self.x[c] = self.x[c] * es + t.raw[sh.dout + k];
                logdet += s;
            }
        }
        model.prior().log_density(&self.z) - logdet
    }

    /// Data space to prior space; returns `log q(x)`.
    pub fn inverse(&mut self, model: &FlowModel, x: &[f64]) -> f64 {
        self.x.copy_from_slice(x);
        self.z.copy_from_slice(x);
        let mut logdet = 0.0;
        for (l, layer) in model.layers().iter().enumerate().rev() {
            let sh = model.shape(l);
            let p = model.layer_params(l);
            let t = &mut self.layers[l];
            for (k, &c) in layer.cond.iter().enumerate() {
                t.inp[k] = self.z[c];
            }
            conditioner(p, sh, &t.inp, &mut t.a1, &mut t.a2, &mut t.raw);
            for (k, &c) in layer.trans.iter().enumerate() {
                let (s, ds) = clamp_scale(t.raw[k], self.s_cap);
                let es = s.exp();
                t.s[k] = s;
                t.ds[k] = ds;
                t.es[k] = es;
                let xb = (self.z[c] - t.raw[sh.dout + k]) / es;
                t.xb[k] = xb;
                self.z[c] = xb;
                logdet += s;
            }
        }
        model.prior().log_density(&self.z) - logdet
    }

    /// Accumulates `∂ log q(x) / ∂θ` into `grad` (overwriting it) for the
    /// point recorded by the last pass, and returns `∂ log q / ∂x`.
    pub fn backprop(&mut self, model: &FlowModel, grad: &mut [f64]) -> &[f64] {
        model.prior().grad_log_density(&self.z, &mut self.adj);
        for (l, layer) in model.layers().iter().enumerate() {
            let sh = model.shape(l);
            let p = model.layer_params(l);
            let off = model.layer_offset(l);
            let g = &mut grad[off..off + sh.len()];
            let t = &self.layers[l];

            for (k, &c) in layer.trans.iter().enumerate() {
                let ub = self.adj[c];
                let inv_es = 1.0 / t.es[k];
                let s_bar = -ub * t.xb[k] - 1.0;
                let t_bar = -ub * inv_es;
                self.raw_adj[k] = s_bar * t.ds[k];
                self.raw_adj[sh.dout + k] = t_bar;
                self.adj[c] = ub * inv_es;
            }

            let w2 = &p[sh.w2()..sh.b2()];
            let w3 = &p[sh.w3()..sh.b3()];
            let w1 = &p[sh.w1()..sh.b1()];

            // Output layer.
            self.a2_adj.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..2 * sh.dout {
                let r = self.raw_adj[i];
                g[sh.b3() + i] = r;
                let row = sh.w3() + i * sh.h;
                for j in 0..sh.h {
                    g[row + j] = r * t.a2[j];
                    self.a2_adj[j] += w3[i * sh.h + j] * r;
                }
            }
            // Second hidden layer.
            self.a1_adj.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..sh.h {
                let pre = self.a2_adj[i] * (1.0 - t.a2[i] * t.a2[i]);
                g[sh.b2() + i] = pre;
                let row = sh.w2() + i * sh.h;
                for j in 0..sh.h {
                    g[row + j] = pre * t.a1[j];
                    self.a1_adj[j] += w2[i * sh.h + j] * pre;
                }
            }
            // First hidden layer; input adjoint flows to the conditioning half.
            for i in 0..sh.h {
                let pre = self.a1_adj[i] * (1.0 - t.a1[i] * t.a1[i]);
                g[sh.b1() + i] = pre;
                let row = sh.w1() + i * sh.din;
                for (j, &c) in layer.cond.iter().enumerate() {
                    g[row + j] = pre * t.inp[j];
                    self.adj[c] += w1[i * sh.din + j] * pre;
                }
            }
        }
        &self.adj
    }
}

#[cfg(test)]
impl Tape {
    pub(crate) fn layers_saturated(&self, thresh: f64) -> bool {
        self.layers.iter().any(|l| l.s.iter().any(|s| s.abs() > thresh))
    }
}
