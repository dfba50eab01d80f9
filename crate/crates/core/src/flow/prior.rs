use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    StandardNormal,
    DiagonalGaussian,
}

/// Base density of a flow: an axis-aligned Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    kind: PriorKind,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_var: Vec<f64>,
    std: Vec<f64>,
    log_norm: f64,
}

impl Prior {
    pub fn standard_normal(dim: usize) -> Self {
        Self::build(PriorKind::StandardNormal, vec![0.0; dim], vec![1.0; dim])
    }

    pub fn diagonal(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: var.len(),
            });
        }
        if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("prior variances must be positive".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("prior mean must be finite".into()));
        }
        Ok(Self::build(PriorKind::DiagonalGaussian, mean, var))
    }

    fn build(kind: PriorKind, mean: Vec<f64>, var: Vec<f64>) -> Self {
        let inv_var = var.iter().map(|v| 1.0 / v).collect();
        let std = var.iter().map(|v| v.sqrt()).collect();
        let log_norm = -0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>();
        Self {
            kind,
            mean,
            var,
            inv_var,
            std,
            log_norm,
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub(crate) fn inv_var(&self) -> &[f64] {
        &self.inv_var
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..z.len() {
            let u = z[i] - self.mean[i];
            q += u * u * self.inv_var[i];
        }
        self.log_norm - 0.5 * q
    }

    /// Writes `∂ log p / ∂z` into `out`.
    pub(crate) fn grad_log_density(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..z.len() {
            out[i] = -(z[i] - self.mean[i]) * self.inv_var[i];
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for i in 0..out.len() {
            let e: f64 = rng.sample(StandardNormal);
            out[i] = self.mean[i] + self.std[i] * e;
        }
    }

    /// Single-line description used by checkpoint headers.
    pub(crate) fn header(&self) -> String {
        match self.kind {
            PriorKind::StandardNormal => "standard-normal".to_string(),
            PriorKind::DiagonalGaussian => format!(
                "diagonal-gaussian mean={} var={}",
                join_floats(&self.mean),
                join_floats(&self.var)
            ),
        }
    }

    pub(crate) fn parse_header(s: &str, dim: usize) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("standard-normal") => Ok(Self::standard_normal(dim)),
            Some("diagonal-gaussian") => {
                let mut mean = None;
                let mut var = None;
                for p in parts {
                    if let Some(v) = p.strip_prefix("mean=") {
                        mean = Some(split_floats(v)?);
                    } else if let Some(v) = p.strip_prefix("var=") {
                        var = Some(split_floats(v)?);
                    }
                }
                let (mean, var) = mean
                    .zip(var)
                    .ok_or_else(|| Error::Format(format!("incomplete prior spec `{s}`")))?;
                if mean.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: mean.len(),
                    });
                }
                Self::diagonal(mean, var)
            }
            _ => Err(Error::Format(format!("unknown prior `{s}`"))),
        }
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad float `{t}`")))
        })
        .collect()
}
