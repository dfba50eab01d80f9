/// Adam hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        adam_update(self, params, grad, lr);
    }
}

/// Standard Adam: `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_update(state: &mut AdamState, params: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(params.len(), state.m.len());
    assert_eq!(grad.len(), state.m.len());
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}
