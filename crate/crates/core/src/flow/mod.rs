//! Affine-coupling normalizing flow over phase space.
//!
//! A [`FlowModel`] pushes an axis-aligned Gaussian [`Prior`] through a stack of
//! coupling layers. Each layer leaves one half of the coordinates untouched and
//! maps the other half as `y = x·exp(s) + t`, where `(s, t)` come from a small
//! fully-connected conditioner fed with the untouched half. Because the
//! conditioner uses `tanh` throughout, the log-density is C^∞ in both the
//! input and the parameters, which the PDE evaluator relies on.
//!
//! All parameters live in one flat vector with a fixed layout (layer by layer,
//! each layer `W1, b1, W2, b2, W3, b3`, row-major), so optimizers and
//! checkpoints can treat the model as a point in `R^|θ|`.

mod batch;
mod checkpoint;
mod jet;
mod prior;
mod tape;

pub use batch::{sample, SampleBatch};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use jet::{DerivativePlan, JetScratch, PointDerivs};
pub use prior::{Prior, PriorKind};
pub use tape::Tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hidden width of each conditioner layer.
pub const DEFAULT_HIDDEN: usize = 5;
/// Bound on the log-scale produced by a conditioner.
pub const DEFAULT_S_CAP: f64 = 5.0;
/// Half-width of the uniform distribution used for non-final weights.
const INIT_SCALE: f64 = 0.05;

/// Parameter layout of one coupling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    /// Coordinates fed to the conditioner (left unchanged).
    pub cond: Vec<usize>,
    /// Coordinates transformed by the affine map.
    pub trans: Vec<usize>,
    offset: usize,
}

impl CouplingLayer {
    fn din(&self) -> usize {
        self.cond.len()
    }

    fn dout(&self) -> usize {
        self.trans.len()
    }
}

/// Offsets of the conditioner blocks inside a layer's parameter slice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    pub din: usize,
    pub h: usize,
    pub dout: usize,
}

impl Shape {
    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        self.h * self.din
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.h
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.h * self.h
    }
    pub fn w3(&self) -> usize {
        self.b2() + self.h
    }
    pub fn b3(&self) -> usize {
        self.w3() + 2 * self.dout * self.h
    }
    pub fn len(&self) -> usize {
        self.b3() + 2 * self.dout
    }
}

/// Architecture knobs beyond dimension and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowArch {
    pub hidden: usize,
    pub s_cap: f64,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            s_cap: DEFAULT_S_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    arch: FlowArch,
    prior: Prior,
    layers: Vec<CouplingLayer>,
    params: Vec<f64>,
    seed: u64,
}

/// Identity-initialized flow with the default conditioner width.
pub fn init_identity(dim: usize, prior: Prior, n_layers: usize, seed: u64) -> Result<FlowModel> {
    FlowModel::identity(dim, prior, n_layers, FlowArch::default(), seed)
}

impl FlowModel {
    /// Builds a flow whose final conditioner layers are zero, so the flow is
    /// the identity map and the density equals the prior.
    pub fn identity(
        dim: usize,
        prior: Prior,
        n_layers: usize,
        arch: FlowArch,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeroed(dim, prior, n_layers, arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..model.layers.len() {
            let sh = model.shape(l);
            let off = model.layers[l].offset;
            let p = &mut model.params[off..off + sh.len()];
            for v in &mut p[..sh.w3()] {
                *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
            }
        }
        Ok(model)
    }

    /// Same layout as [`FlowModel::identity`] with every parameter zero.
    pub fn zeroed(
        dim: usize,
        prior: Prior,
        n_layers: usize,
        arch: FlowArch,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "flow dimension must be even and positive, got {dim}"
            )));
        }
        if n_layers == 0 {
            return Err(Error::InvalidConfig("flow needs at least one layer".into()));
        }
        if arch.hidden == 0 || !(arch.s_cap > 0.0) {
            return Err(Error::InvalidConfig(
                "hidden width and scale cap must be positive".into(),
            ));
        }
        if prior.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: prior.dim(),
            });
        }
        let half = dim / 2;
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..dim).collect();
        let mut layers = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            let (cond, trans) = if l % 2 == 0 {
                (first.clone(), second.clone())
            } else {
                (second.clone(), first.clone())
            };
            let sh = Shape {
                din: cond.len(),
                h: arch.hidden,
                dout: trans.len(),
            };
            layers.push(CouplingLayer {
                cond,
                trans,
                offset,
            });
            offset += sh.len();
        }
        Ok(Self {
            dim,
            arch,
            prior,
            layers,
            params: vec![0.0; offset],
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn arch(&self) -> FlowArch {
        self.arch
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow parameters".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Index range of layer `l`'s final conditioner bias (`s` then `t`).
    pub fn final_bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let sh = self.shape(l);
        let off = self.layers[l].offset;
        off + sh.b3()..off + sh.len()
    }

    pub(crate) fn shape(&self, l: usize) -> Shape {
        let layer = &self.layers[l];
        Shape {
            din: layer.din(),
            h: self.arch.hidden,
            dout: layer.dout(),
        }
    }

    pub(crate) fn layer_params(&self, l: usize) -> &[f64] {
        let off = self.layers[l].offset;
        &self.params[off..off + self.shape(l).len()]
    }

    pub(crate) fn layer_offset(&self, l: usize) -> usize {
        self.layers[l].offset
    }

    pub fn new_tape(&self) -> Tape {
        Tape::new(self)
    }

    /// Maps a prior draw to data space.
    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        let mut tape = self.new_tape();
        tape.forward(self, z);
        tape.x().to_vec()
    }

    /// Maps a data point back to prior space.
    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = self.new_tape();
        tape.inverse(self, x);
        tape.z().to_vec()
    }

    /// Exact normalized log-density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut tape = self.new_tape();
        Ok(tape.inverse(self, x))
    }

    /// Image of `z` and its log-density, computed along the sampling direction.
    pub fn forward_with_log_density(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let mut tape = self.new_tape();
        let lq = tape.forward(self, z);
        (tape.x().to_vec(), lq)
    }

    /// Gradient and Hessian of `log q` with respect to the input.
    pub fn input_derivatives(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(x)?;
        let plan = DerivativePlan::full(self.dim);
        let mut scratch = JetScratch::new(self, &plan);
        let d = scratch.eval(self, &plan, x);
        Ok((d.grad.clone(), d.hess.clone()))
    }

    /// `∂ log q(x) / ∂θ` in the flat parameter layout.
    pub fn param_grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut tape = self.new_tape();
        tape.inverse(self, x);
        let mut g = vec![0.0; self.n_params()];
        tape.backprop(self, &mut g);
        Ok(g)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite input point".into()));
        }
        Ok(())
    }

    /// Draws `n` points with a fresh stream derived from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SampleBatch {
        sample(self, n, rng)
    }
}

#[cfg(test)]
pub(crate) mod tests;
