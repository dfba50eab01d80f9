//! Experiment configuration files.
//!
//! A config is a TOML document. Harmonic parameters left out of the file are
//! drawn uniformly from their default ranges with `model.param_seed`, and
//! [`ExperimentConfig::resolve`] writes them back so the resolved copy
//! reruns the identical experiment.

use std::path::{Path, PathBuf};

use qflow::liouvillian::{HarmonicWell, ModelSpec};
use qflow::reference::MAX_GRID_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Ranges for drawn harmonic parameters: `n̄`, `γ`, `ω`.
pub const NBAR_RANGE: (f64, f64) = (3.0, 7.0);
pub const GAMMA_RANGE: (f64, f64) = (0.5, 1.5);
pub const OMEGA_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub checkpoint: CheckpointConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Harmonic {
        wells: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        param_seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nbar: Option<Vec<f64>>,
    },
    Bosonic {
        wells: usize,
        hopping: f64,
        gamma: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Product of coherent states: Gaussian with variance ½ per coordinate.
    Coherent {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
    },
    /// Antisymmetric two-well condensate of `n_total` particles.
    Bec { n_total: usize },
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self::Coherent { mean: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    /// The initial Gaussian itself (coherent initial states only).
    Initial,
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden: usize,
    pub s_cap: f64,
    pub prior: Option<PriorChoice>,
    /// Start from this checkpoint instead of building the initial flow.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: qflow::flow::DEFAULT_HIDDEN,
            s_cap: qflow::flow::DEFAULT_S_CAP,
            prior: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    EulerKl {
        #[serde(default = "d_dt")]
        dt: f64,
        #[serde(default = "d_t_end")]
        t_end: f64,
        #[serde(default = "d_epochs")]
        epochs_per_step: usize,
        #[serde(default = "d_batch")]
        batch_n: usize,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_eps")]
        eps_clamp: f64,
    },
    Tdvp {
        #[serde(default = "d_dt")]
        dt: f64,
        #[serde(default = "d_t_end")]
        t_end: f64,
        #[serde(default = "d_batch")]
        batch_n: usize,
        #[serde(default = "d_shift")]
        shift: f64,
        #[serde(default)]
        centered: bool,
    },
    PseudoSpectral {
        #[serde(default = "d_t_end")]
        t_end: f64,
        /// Spacing of recorded times.
        #[serde(default = "d_output_dt")]
        output_dt: f64,
        #[serde(default = "d_grid_n")]
        grid_n: usize,
        #[serde(default = "d_half_width")]
        half_width: f64,
        #[serde(default = "d_rtol")]
        rtol: f64,
    },
}

fn d_dt() -> f64 {
    0.01
}
fn d_t_end() -> f64 {
    15.0
}
fn d_epochs() -> usize {
    150
}
fn d_batch() -> usize {
    1000
}
fn d_lr() -> f64 {
    1e-3
}
fn d_eps() -> f64 {
    1e-12
}
fn d_shift() -> f64 {
    0.01
}
fn d_output_dt() -> f64 {
    1.0
}
fn d_grid_n() -> usize {
    256
}
fn d_half_width() -> f64 {
    qflow::reference::DEFAULT_HALF_WIDTH
}
fn d_rtol() -> f64 {
    1e-8
}

impl MethodConfig {
    pub fn t_end(&self) -> f64 {
        match self {
            Self::EulerKl { t_end, .. } | Self::Tdvp { t_end, .. } | Self::PseudoSpectral { t_end, .. } => *t_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    CentroidNorm,
    LiouvillianLoss,
    N1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Defaults depend on the model when absent.
    pub list: Option<Vec<Metric>>,
    /// Evaluate every `cadence` steps (0 disables metrics).
    pub cadence: usize,
    pub samples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            list: None,
            cadence: 1,
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub n_samples: usize,
    pub sigma: f64,
    pub nll_epochs: usize,
    pub kl_epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            sigma: 0.8,
            nll_epochs: 3000,
            kl_epochs: 3000,
            batch: 1024,
            lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    /// Write a checkpoint every `cadence` steps (0: final only).
    pub cadence: usize,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn modes(&self) -> usize {
        match &self.model {
            ModelConfig::Harmonic { wells, .. } | ModelConfig::Bosonic { wells, .. } => *wells,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.modes()
    }

    /// Materializes drawn parameters and defaults, then validates.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if let ModelConfig::Harmonic {
            wells,
            param_seed,
            omega,
            gamma,
            nbar,
        } = &mut self.model
        {
            if omega.is_none() || gamma.is_none() || nbar.is_none() {
                let seed = param_seed.ok_or_else(|| field("model.param_seed", "required when omega, gamma or nbar are omitted"))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draws = vec![(0.0, 0.0, 0.0); *wells];
                for d in draws.iter_mut() {
                    *d = (
                        rng.random_range(OMEGA_RANGE.0..OMEGA_RANGE.1),
                        rng.random_range(GAMMA_RANGE.0..GAMMA_RANGE.1),
                        rng.random_range(NBAR_RANGE.0..NBAR_RANGE.1),
                    );
                }
                omega.get_or_insert_with(|| draws.iter().map(|d| d.0).collect());
                gamma.get_or_insert_with(|| draws.iter().map(|d| d.1).collect());
                nbar.get_or_insert_with(|| draws.iter().map(|d| d.2).collect());
            }
        }
        let d = self.dim();
        if let InitialConfig::Coherent { mean } = &mut self.initial {
            mean.get_or_insert_with(|| vec![-1.0; d]);
        }
        if self.flow.prior.is_none() {
            self.flow.prior = Some(match self.initial {
                InitialConfig::Coherent { .. } => PriorChoice::Initial,
                InitialConfig::Bec { .. } => PriorChoice::StandardNormal,
            });
        }
        if self.metrics.list.is_none() {
            self.metrics.list = Some(match self.model {
                ModelConfig::Harmonic { .. } => vec![Metric::L1, Metric::CentroidNorm, Metric::LiouvillianLoss],
                ModelConfig::Bosonic { .. } => vec![Metric::N1, Metric::LiouvillianLoss],
            });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.modes();
        if m == 0 {
            return Err(field("model.wells", "must be at least 1"));
        }
        if let ModelConfig::Bosonic { gamma, .. } = &self.model {
            if gamma.len() != m {
                return Err(field("model.gamma", format!("expected {m} values, found {}", gamma.len())));
            }
        }
        if let ModelConfig::Harmonic { omega, gamma, nbar, .. } = &self.model {
            for (name, v) in [("model.omega", omega), ("model.gamma", gamma), ("model.nbar", nbar)] {
                if let Some(v) = v {
                    if v.len() != m {
                        return Err(field(name, format!("expected {m} values, found {}", v.len())));
                    }
                }
            }
        }
        match &self.initial {
            InitialConfig::Coherent { mean: Some(mean) } if mean.len() != 2 * m => {
                return Err(field("initial.mean", format!("expected {} values, found {}", 2 * m, mean.len())));
            }
            InitialConfig::Bec { .. } if m != 2 => {
                return Err(field("initial.kind", "bec needs exactly 2 wells"));
            }
            _ => {}
        }
        if self.flow.layers == 0 {
            return Err(field("flow.layers", "must be at least 1"));
        }
        if matches!(self.initial, InitialConfig::Bec { .. }) && self.flow.prior == Some(PriorChoice::Initial) {
            return Err(field("flow.prior", "a BEC initial state cannot be used as the prior"));
        }
        match &self.method {
            MethodConfig::EulerKl {
                dt,
                t_end,
                batch_n,
                lr,
                eps_clamp,
                ..
            } => {
                if !(*dt > 0.0) {
                    return Err(field("method.dt", "must be positive"));
                }
                if !(*t_end >= *dt) {
                    return Err(field("method.t_end", "must be at least dt"));
                }
                if *batch_n < 2 {
                    return Err(field("method.batch_n", "must be at least 2"));
                }
                if !(*lr > 0.0) {
                    return Err(field("method.lr", "must be positive"));
                }
                if !(*eps_clamp > 0.0) {
                    return Err(field("method.eps_clamp", "must be positive"));
                }
            }
            MethodConfig::Tdvp {
                dt,
                t_end,
                batch_n,
                shift,
                ..
            } => {
                if !(*dt > 0.0) || !(*t_end >= *dt) {
                    return Err(field("method.dt", "need dt > 0 and t_end >= dt"));
                }
                if *batch_n < 2 {
                    return Err(field("method.batch_n", "must be at least 2"));
                }
                if !(*shift >= 0.0) {
                    return Err(field("method.shift", "must be nonnegative"));
                }
            }
            MethodConfig::PseudoSpectral {
                output_dt, grid_n, ..
            } => {
                if 2 * m > MAX_GRID_DIM {
                    return Err(CliError::Run(qflow::Error::DimensionLimit(2 * m)));
                }
                if !(*output_dt > 0.0) {
                    return Err(field("method.output_dt", "must be positive"));
                }
                if *grid_n < 4 || grid_n % 2 != 0 {
                    return Err(field("method.grid_n", "must be even and at least 4"));
                }
            }
        }
        if let Some(list) = &self.metrics.list {
            let harmonic = matches!(self.model, ModelConfig::Harmonic { .. });
            if list.contains(&Metric::L1) && !harmonic {
                return Err(field("metrics.list", "l1 needs an exact density and is only available for harmonic models"));
            }
        }
        if self.metrics.cadence > 0 && self.metrics.samples < 2 {
            return Err(field("metrics.samples", "must be at least 2"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let spec = match &self.model {
            ModelConfig::Harmonic {
                omega: Some(omega),
                gamma: Some(gamma),
                nbar: Some(nbar),
                ..
            } => ModelSpec::Harmonic {
                wells: (0..omega.len())
                    .map(|i| HarmonicWell {
                        omega: omega[i],
                        gamma: gamma[i],
                        nbar: nbar[i],
                    })
                    .collect(),
            },
            ModelConfig::Harmonic { .. } => return Err(CliError::Config("harmonic parameters are unresolved".into())),
            ModelConfig::Bosonic { hopping, gamma, .. } => ModelSpec::BosonicChain {
                hopping: *hopping,
                gamma: gamma.clone(),
            },
        };
        spec.validate().map_err(|e| field("model", e))?;
        Ok(spec)
    }
}
