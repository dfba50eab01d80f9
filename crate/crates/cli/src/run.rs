//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qflow::evolve::{euler_kl_run, tdvp_run, EulerKLConfig, MetricValues, StepView, TDVPConfig, TrajectoryRecord, TrajectoryRow};
use qflow::flow::{Checkpoint, FlowArch, FlowModel, Prior};
use qflow::fock::observable_moment_grid;
use qflow::liouvillian::{compile, model_terms, ModelSpec, QOperator, RatioEvaluator};
use qflow::metrics::{centroid_norm, l1_loss, liouvillian_loss_at, n1_observable, Estimate};
use qflow::pretrain::{pretrain, KlConfig, MhConfig, NllConfig, PretrainConfig, TargetDensity};
use qflow::reference::{
    gaussian_moment_solution, pseudospectral_trajectory, GaussianDensity, GaussianMomentState, GridGeometry, GridState,
    SpectralOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, InitialConfig, MethodConfig, Metric, PriorChoice};
use crate::CliError;

/// Name of the marker written when a run aborts.
pub const FAILURE_MARKER: &str = "FAILED";
pub const RESOLVED_CONFIG: &str = "resolved.toml";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";

/// Variance of a coherent state's Q function per coordinate.
const COHERENT_VAR: f64 = 0.5;

/// Everything derived from a resolved config.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub spec: ModelSpec,
    pub op: QOperator,
    metrics: Vec<Metric>,
    log: Vec<String>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        let cfg = cfg.resolve()?;
        let spec = cfg.model_spec()?;
        let op = compile(&model_terms(&spec), spec.modes())?;
        let metrics = cfg.metrics.list.clone().unwrap_or_default();
        Ok(Self {
            cfg,
            spec,
            op,
            metrics,
            log: Vec::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn note(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    fn coherent_mean(&self) -> Option<&[f64]> {
        match &self.cfg.initial {
            InitialConfig::Coherent { mean } => mean.as_deref(),
            InitialConfig::Bec { .. } => None,
        }
    }

    /// Exact Gaussian at time `t` when the model admits one.
    pub fn exact_at(&self, t: f64) -> qflow::Result<Option<GaussianDensity>> {
        match (&self.spec, self.coherent_mean()) {
            (ModelSpec::Harmonic { .. }, Some(mean)) => {
                let init = GaussianMomentState::isotropic(mean, COHERENT_VAR)?;
                Ok(Some(gaussian_moment_solution(&self.spec, &init, t)?))
            }
            _ => Ok(None),
        }
    }

    fn target(&self) -> Result<TargetDensity, CliError> {
        Ok(match &self.cfg.initial {
            InitialConfig::Coherent { mean } => {
                let mean = mean.clone().expect("resolved");
                let d = mean.len();
                TargetDensity::gaussian(mean, vec![COHERENT_VAR; d])?
            }
            InitialConfig::Bec { n_total } => TargetDensity::bec(*n_total),
        })
    }

    /// The flow at `t = 0`: loaded, identity-initialized, or pretrained.
    pub fn initial_model(&mut self) -> Result<FlowModel, CliError> {
        if let Some(path) = self.cfg.flow.checkpoint.clone() {
            let ck = Checkpoint::load(&path)?;
            if ck.model.dim() != self.cfg.dim() {
                return Err(CliError::Run(qflow::Error::DimensionMismatch {
                    expected: self.cfg.dim(),
                    found: ck.model.dim(),
                }));
            }
            self.note(format!("loaded initial flow from {}", path.display()));
            return Ok(ck.model);
        }
        let d = self.cfg.dim();
        let arch = FlowArch {
            hidden: self.cfg.flow.hidden,
            s_cap: self.cfg.flow.s_cap,
        };
        let choice = self.cfg.flow.prior.expect("resolved");
        let prior = match (choice, self.coherent_mean()) {
            (PriorChoice::Initial, Some(mean)) => Prior::diagonal(mean.to_vec(), vec![COHERENT_VAR; d])?,
            _ => Prior::standard_normal(d),
        };
        let mut model = FlowModel::identity(d, prior, self.cfg.flow.layers, arch, self.cfg.seed)?;
        if choice == PriorChoice::Initial {
            self.note("initial state is the flow prior; no pretraining needed");
            return Ok(model);
        }
        let p = &self.cfg.pretrain;
        let pcfg = PretrainConfig {
            n_samples: p.n_samples,
            mh: MhConfig {
                sigma: p.sigma,
                seed: self.cfg.seed,
                ..MhConfig::default()
            },
            nll: NllConfig {
                epochs: p.nll_epochs,
                batch: p.batch,
                lr: p.lr,
                seed: self.cfg.seed,
                ..NllConfig::default()
            },
            kl: KlConfig {
                epochs: p.kl_epochs,
                batch_n: p.batch,
                lr: p.lr,
                seed: self.cfg.seed,
                ..KlConfig::default()
            },
        };
        let target = self.target()?;
        let rep = pretrain(&mut model, &target, &pcfg)?;
        self.note(format!(
            "pretrain: MH acceptance {:.3}, ESS {:.0}, final NLL {:.4}, final KL {:.4}",
            rep.acceptance_rate,
            rep.ess,
            rep.nll.losses.last().copied().unwrap_or(f64::NAN),
            rep.kl.kl.last().copied().unwrap_or(f64::NAN)
        ));
        for w in rep.warnings {
            self.note(format!("warning: {w}"));
        }
        Ok(model)
    }

    /// Configured metrics of `model` at time `t`.
    pub fn metrics_for(&self, model: &FlowModel, t: f64, rng: &mut ChaCha8Rng) -> qflow::Result<MetricValues> {
        let mut out = MetricValues::default();
        let n = self.cfg.metrics.samples;
        let needs_batch = self
            .metrics
            .iter()
            .any(|m| matches!(m, Metric::CentroidNorm | Metric::LiouvillianLoss | Metric::N1));
        let batch = needs_batch.then(|| model.sample(n, rng));
        for m in &self.metrics {
            match m {
                Metric::L1 => {
                    if let Some(exact) = self.exact_at(t)? {
                        out.l1 = Some(l1_loss(|x| model.log_density(x).unwrap_or(f64::NEG_INFINITY), &exact, n, rng)?);
                    }
                }
                Metric::CentroidNorm => out.centroid_norm = Some(centroid_norm(batch.as_ref().expect("sampled"))),
                Metric::LiouvillianLoss => {
                    let ev = RatioEvaluator::new(&self.op)?;
                    out.liouvillian_loss = Some(liouvillian_loss_at(model, &ev, batch.as_ref().expect("sampled"))?);
                }
                Metric::N1 => out.n1 = Some(n1_observable(batch.as_ref().expect("sampled"))?),
            }
        }
        Ok(out)
    }

    fn metrics_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1);
        rng
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(self.out())?;
        let marker = self.out().join(FAILURE_MARKER);
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        fs::write(self.out().join(RESOLVED_CONFIG), self.cfg.to_toml())?;
        Ok(())
    }

    fn flush_log(&mut self) -> Result<(), CliError> {
        if self.log.is_empty() {
            return Ok(());
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.out().join("run.log"))?;
        for l in self.log.drain(..) {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }

    fn fail(&mut self, err: &CliError) {
        let _ = fs::create_dir_all(self.out());
        let _ = fs::write(self.out().join(FAILURE_MARKER), format!("{err}\n"));
        self.note(format!("aborted: {err}"));
        let _ = self.flush_log();
    }

    /// Runs `f`, leaving a failure marker and the log behind on error.
    fn guarded<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        self.prepare_out()?;
        match f(self) {
            Ok(v) => {
                self.flush_log()?;
                Ok(v)
            }
            Err(e) => {
                self.fail(&e);
                Err(e)
            }
        }
    }

    /// Builds the initial flow and saves it as `pretrained.ckpt`.
    pub fn cmd_pretrain(&mut self) -> Result<PathBuf, CliError> {
        self.guarded(|ex| {
            let model = ex.initial_model()?;
            let path = ex.out().join("pretrained.ckpt");
            Checkpoint { model, time: 0.0 }.save(&path)?;
            Ok(path)
        })
    }

    /// Runs the configured method and writes `trajectory.csv`.
    pub fn cmd_evolve(&mut self) -> Result<TrajectoryRecord, CliError> {
        if matches!(self.cfg.method, MethodConfig::PseudoSpectral { .. }) {
            return self.guarded(|ex| {
                let rec = ex.grid_run()?;
                write_csv(&ex.out().join(TRAJECTORY_CSV), &rec)?;
                Ok(rec)
            });
        }
        self.guarded(|ex| {
            let mut model = ex.initial_model()?;
            let mut last_time = 0.0;
            let res = ex.flow_run(&mut model, &mut last_time);
            match res {
                Ok(rec) => {
                    write_csv(&ex.out().join(TRAJECTORY_CSV), &rec)?;
                    Checkpoint { model, time: last_time }.save(&ex.out().join("final.ckpt"))?;
                    Ok(rec)
                }
                Err(e) => {
                    // Diagnostic checkpoint of the last committed state.
                    let _ = Checkpoint { model, time: last_time }.save(&ex.out().join("failed.ckpt"));
                    Err(e)
                }
            }
        })
    }

    fn flow_run(&self, model: &mut FlowModel, last_time: &mut f64) -> Result<TrajectoryRecord, CliError> {
        let mut rng = self.metrics_rng();
        let cadence = self.cfg.metrics.cadence;
        let ck_cadence = self.cfg.checkpoint.cadence;
        let out = self.out().to_path_buf();
        let n_steps;
        let mut hook = |v: &StepView<'_>| -> qflow::Result<MetricValues> {
            *last_time = v.time;
            if ck_cadence > 0 && v.step > 0 && v.step % ck_cadence == 0 {
                Checkpoint {
                    model: v.model.clone(),
                    time: v.time,
                }
                .save(&out.join(format!("ckpt_{:06}.ckpt", v.step)))?;
            }
            if cadence == 0 || v.step % cadence != 0 {
                return Ok(MetricValues::default());
            }
            self.metrics_for(v.model, v.time, &mut rng)
        };
        let rec = match &self.cfg.method {
            MethodConfig::EulerKl {
                dt,
                t_end,
                epochs_per_step,
                batch_n,
                lr,
                eps_clamp,
            } => {
                let cfg = EulerKLConfig {
                    dt: *dt,
                    t_end: *t_end,
                    epochs_per_step: *epochs_per_step,
                    batch_n: *batch_n,
                    lr: *lr,
                    eps_clamp: *eps_clamp,
                    seed: self.cfg.seed,
                    ..EulerKLConfig::default()
                };
                n_steps = cfg.n_steps();
                euler_kl_run(model, &self.op, &cfg, &mut hook)
            }
            MethodConfig::Tdvp {
                dt,
                t_end,
                batch_n,
                shift,
                centered,
            } => {
                let cfg = TDVPConfig {
                    dt: *dt,
                    t_end: *t_end,
                    batch_n: *batch_n,
                    shift: *shift,
                    centered: *centered,
                    seed: self.cfg.seed,
                };
                n_steps = cfg.n_steps();
                tdvp_run(model, &self.op, &cfg, &mut hook)
            }
            MethodConfig::PseudoSpectral { .. } => unreachable!("handled by grid_run"),
        };
        let mut rec = rec?;
        // The final state always gets metrics, whatever the cadence.
        if cadence > 0 && n_steps % cadence != 0 {
            if let Some(last) = rec.rows.last_mut() {
                last.metrics = self.metrics_for(model, last.time, &mut rng)?;
            }
        }
        Ok(rec)
    }

    fn initial_grid(&self, geom: GridGeometry) -> Result<GridState, CliError> {
        let target = self.target()?;
        Ok(GridState::from_fn(geom, |x| target.log_density(x).exp())?)
    }

    /// Pseudo-spectral solve with metrics at multiples of `output_dt`.
    fn grid_run(&mut self) -> Result<TrajectoryRecord, CliError> {
        let (t_end, output_dt, grid_n, half_width, rtol) = match self.cfg.method {
            MethodConfig::PseudoSpectral {
                t_end,
                output_dt,
                grid_n,
                half_width,
                rtol,
            } => (t_end, output_dt, grid_n, half_width, rtol),
            _ => (self.cfg.method.t_end(), 1.0, 32, qflow::reference::DEFAULT_HALF_WIDTH, 1e-8),
        };
        let geom = GridGeometry::cube(self.cfg.dim(), grid_n, half_width)?;
        let q0 = self.initial_grid(geom)?;
        let n_out = (t_end / output_dt).round() as usize;
        let times: Vec<f64> = (1..=n_out).map(|k| k as f64 * output_dt).collect();
        let opts = SpectralOptions {
            rtol,
            ..SpectralOptions::default()
        };
        let traj = pseudospectral_trajectory(&self.op, &q0, &times, &opts)?;
        let mut rng = self.metrics_rng();
        let mut rec = TrajectoryRecord::default();
        let states = std::iter::once((0.0, q0)).chain(traj);
        for (k, (t, q)) in states.enumerate() {
            rec.push(TrajectoryRow {
                step: k,
                time: t,
                metrics: self.grid_metrics(&q, t, &mut rng)?,
                residual: None,
                clamp_count: None,
            });
            if k == n_out {
                q.write_to(&mut std::io::BufWriter::new(fs::File::create(self.out().join("final.grid"))?))?;
            }
        }
        self.note(format!("pseudo-spectral solve on {grid_n}^{} grid to t = {t_end}", self.cfg.dim()));
        Ok(rec)
    }

    fn grid_metrics(&self, q: &GridState, t: f64, rng: &mut ChaCha8Rng) -> Result<MetricValues, CliError> {
        let mut out = MetricValues::default();
        let exact_only = |v: f64| Some(Estimate { mean: v, stderr: 0.0 });
        for m in &self.metrics {
            match m {
                Metric::L1 => {
                    if let Some(exact) = self.exact_at(t)? {
                        out.l1 = Some(l1_loss(|x| q.log_density_at(x), &exact, self.cfg.metrics.samples, rng)?);
                    }
                }
                Metric::CentroidNorm => {
                    let d = self.cfg.dim();
                    let m = d / 2;
                    let norm2: f64 = (0..m)
                        .map(|i| {
                            let a = observable_moment_grid(q, i, 1, 0);
                            a.re * a.re + a.im * a.im
                        })
                        .sum();
                    out.centroid_norm = exact_only(norm2.sqrt());
                }
                Metric::N1 => out.n1 = exact_only(observable_moment_grid(q, 0, 1, 1).re - 1.0),
                Metric::LiouvillianLoss => {}
            }
        }
        Ok(out)
    }

    /// Grid reference solution written to `reference.csv`.
    pub fn cmd_reference(&mut self) -> Result<TrajectoryRecord, CliError> {
        if self.cfg.dim() > qflow::reference::MAX_GRID_DIM {
            return Err(CliError::Run(qflow::Error::DimensionLimit(self.cfg.dim())));
        }
        self.guarded(|ex| {
            let rec = ex.grid_run()?;
            write_csv(&ex.out().join("reference.csv"), &rec)?;
            Ok(rec)
        })
    }

    /// Metrics of a saved flow at its recorded time, written to `eval.csv`.
    pub fn cmd_eval(&mut self, checkpoint: &Path) -> Result<TrajectoryRecord, CliError> {
        self.guarded(|ex| {
            let ck = Checkpoint::load(checkpoint)?;
            if ck.model.dim() != ex.cfg.dim() {
                return Err(CliError::Run(qflow::Error::DimensionMismatch {
                    expected: ex.cfg.dim(),
                    found: ck.model.dim(),
                }));
            }
            let mut rng = ex.metrics_rng();
            let metrics = ex.metrics_for(&ck.model, ck.time, &mut rng)?;
            let mut rec = TrajectoryRecord::default();
            rec.push(TrajectoryRow {
                step: 0,
                time: ck.time,
                metrics,
                residual: None,
                clamp_count: None,
            });
            write_csv(&ex.out().join("eval.csv"), &rec)?;
            Ok(rec)
        })
    }
}

fn write_csv(path: &Path, rec: &TrajectoryRecord) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    rec.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}
