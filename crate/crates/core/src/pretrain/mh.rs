use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::TargetDensity;
use crate::error::{Error, Result};
use crate::par;

/// Random-walk Metropolis-Hastings settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MhConfig {
    pub sigma: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Independent chains, each with its own RNG stream.
    pub chains: usize,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            burn_in: 5000,
            thin: 5,
            chains: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MhSamples {
    pub dim: usize,
    /// Row-major `n × dim`, concatenated in chain order.
    pub points: Vec<f64>,
    pub acceptance_rate: f64,
    /// Smallest per-coordinate effective sample size.
    pub ess: f64,
    pub warnings: Vec<String>,
}

struct Chain {
    points: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

fn run_chain(target: &TargetDensity, n: usize, cfg: &MhConfig, chain: usize) -> Result<Chain> {
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    // Start from a standard-normal draw with finite density.
    let mut x = vec![0.0; d];
    let mut lx = f64::NEG_INFINITY;
    for _ in 0..1000 {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        lx = target.log_density(&x);
        if lx.is_finite() {
            break;
        }
    }
    if !lx.is_finite() {
        return Err(Error::DegenerateSupport);
    }
    let mut y = vec![0.0; d];
    let mut points = Vec::with_capacity(n * d);
    let (mut accepted, mut proposed) = (0, 0);
    let total = cfg.burn_in + n * cfg.thin;
    for it in 0..total {
        for (yi, xi) in y.iter_mut().zip(&x) {
            let e: f64 = rng.sample(StandardNormal);
            *yi = xi + cfg.sigma * e;
        }
        let ly = target.log_density(&y);
        let u: f64 = rng.random();
        let accept = ly.is_finite() && u.ln() < ly - lx;
        if it >= cfg.burn_in {
            proposed += 1;
            accepted += accept as usize;
        }
        if accept {
            std::mem::swap(&mut x, &mut y);
            lx = ly;
        }
        if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            points.extend_from_slice(&x);
        }
    }
    Ok(Chain {
        points,
        accepted,
        proposed,
    })
}

/// Initial-positive-sequence estimate of the integrated autocorrelation
/// time of one scalar series.
fn autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau.max(1.0)
}

/// Draws `n` points from `target` with Gaussian random-walk proposals.
/// Chains run concurrently and are concatenated by chain index.
pub fn mh_sample(target: &TargetDensity, n: usize, cfg: &MhConfig) -> Result<MhSamples> {
    if n == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    if !(cfg.sigma > 0.0) || cfg.thin == 0 || cfg.chains == 0 {
        return Err(Error::InvalidConfig("MH needs sigma > 0, thin ≥ 1 and at least one chain".into()));
    }
    let d = target.dim();
    let per = n.div_ceil(cfg.chains);
    let chains = par::map(cfg.chains, |c| run_chain(target, per, cfg, c));
    let mut points = Vec::with_capacity(per * cfg.chains * d);
    let (mut acc, mut prop) = (0usize, 0usize);
    let mut ess = vec![0.0; d];
    for ch in chains {
        let ch = ch?;
        acc += ch.accepted;
        prop += ch.proposed;
        for (k, e) in ess.iter_mut().enumerate() {
            let series: Vec<f64> = ch.points.chunks(d).map(|p| p[k]).collect();
            *e += series.len() as f64 / autocorr_time(&series);
        }
        points.extend_from_slice(&ch.points);
    }
    points.truncate(n * d);
    let acceptance_rate = acc as f64 / prop.max(1) as f64;
    let mut warnings = Vec::new();
    if !(0.1..=0.7).contains(&acceptance_rate) {
        warnings.push(format!(
            "MH acceptance rate {acceptance_rate:.3} outside [0.1, 0.7]; retune the proposal width"
        ));
    }
    Ok(MhSamples {
        dim: d,
        points,
        acceptance_rate,
        ess: ess.into_iter().fold(f64::INFINITY, f64::min),
        warnings,
    })
}
