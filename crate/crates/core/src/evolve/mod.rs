//! Time evolution of a flow under a phase-space operator.
//!
//! Two integrators are provided. [`euler_kl_run`] fits the next-step density
//! to the linearized target `Q^t (1 + dt·L Q^t / Q^t)` by minimizing a Monte
//! Carlo KL divergence with Adam. [`tdvp_run`] instead solves the projected
//! equation `S θ̇ = F` built from the Fisher metric and steps the parameters
//! explicitly.
//!
//! Per-sample work is batch-parallel. Sums over samples are formed in
//! fixed-size chunks that are combined in index order, so results are
//! independent of the worker count.

mod adam;
mod euler;
mod record;
mod tdvp;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use euler::{euler_kl_grad, euler_kl_run, EulerKLConfig, KLGradient};
pub use record::{MetricValues, TrajectoryRecord, TrajectoryRow, CSV_HEADER};
pub use tdvp::{tdvp_metric, tdvp_run, tdvp_step, TDVPConfig, TdvpStepInfo, TdvpSystem};
pub(crate) use euler::prior_draws;

use crate::flow::FlowModel;
use crate::par;

/// Samples per reduction chunk.
const CHUNK: usize = 32;

/// Calls `f(state, i, acc)` for every `i < n`, accumulating into one
/// `Vec<f64>` of length `width` per chunk, then sums the chunks in order.
pub(crate) fn chunked_sum<S, I, F>(n: usize, width: usize, init: I, f: F) -> Vec<f64>
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let parts = par::map_init(n_chunks, init, |s, c| {
        let mut acc = vec![0.0; width];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(s, i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; width];
    for p in parts {
        for (t, v) in total.iter_mut().zip(&p) {
            *t += v;
        }
    }
    total
}

/// Context handed to metric hooks after each committed step.
pub struct StepView<'a> {
    pub step: usize,
    pub time: f64,
    pub model: &'a FlowModel,
}

/// Number of steps of size `dt` that fit in `t_end`.
pub(crate) fn step_count(dt: f64, t_end: f64) -> usize {
    (t_end / dt).round() as usize
}
