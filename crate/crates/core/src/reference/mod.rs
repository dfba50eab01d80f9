//! Solvers that do not use a flow: a pseudo-spectral grid integrator and the
//! closed-form moment dynamics of the two quadratic models. They serve as
//! oracles for the flow methods.

mod bosonic;
mod gaussian;
mod grid;
pub mod ode;
mod spectral;

pub use bosonic::{bosonic_moment_solution, SecondMomentState};
pub use gaussian::{
    gaussian_moment_solution, harmonic_drift_diffusion, GaussianDensity, GaussianMomentState,
};
pub use grid::{GridGeometry, GridState, LOG_FLOOR, MAX_GRID_DIM};
pub use spectral::{pseudospectral_solve, pseudospectral_trajectory, GridOperator, SpectralOptions};

use rand::RngCore;

use crate::error::Result;

/// Default half-width of phase-space grids.
pub const DEFAULT_HALF_WIDTH: f64 = 10.0;

/// A reference density that can be both evaluated and sampled.
pub trait ExactDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    /// `n` points, row-major.
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

impl ExactDensity for GridState {
    fn dim(&self) -> usize {
        self.geometry().dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_at(x)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        GridState::sample(self, n, rng)
    }
}
