//! Couples a simulated physical twin with its digital twin.
//!
//! Loop order per step `[t, t + dt]`: the observation is generated from the
//! current physical state, the digital twin assimilates it and reports the
//! control computed from its pre-step ensemble, and that control drives the
//! physical twin over the same interval.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{Alpha, DigitalTwin, Observation, StepDiagnostics, TwinConfig};
use crate::error::{Result, TwinError};
use crate::linalg::{is_zero, sym_sqrt};
use crate::models::{ControlledModel, Lorenz63, Pendulum};
use crate::observation::{standard_normal, ObsMode, ObservationModel};
use crate::stats::Ensemble;

/// Lorenz-63 reference initial condition.
pub const LORENZ_X0: [f64; 3] = [7.8590, 7.1136, 27.2293];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Lorenz63 {
        sigma: f64,
        r: f64,
        b: f64,
        rho: f64,
    },
    Pendulum {
        friction: f64,
        rho: f64,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Lorenz63 { .. } => "lorenz63",
            ModelSpec::Pendulum { .. } => "pendulum",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::Lorenz63 { .. } => 3,
            ModelSpec::Pendulum { .. } => 2,
        }
    }

    /// Builds the model with isotropic diffusion `diffusion * I`.
    pub fn build(&self, diffusion: f64) -> Box<dyn ControlledModel> {
        let sigma = DMatrix::identity(self.state_dim(), self.state_dim()) * diffusion;
        match *self {
            ModelSpec::Lorenz63 {
                sigma: s,
                r,
                b,
                rho,
            } => Box::new(Lorenz63::new(s, r, b, rho, sigma)),
            ModelSpec::Pendulum { friction, rho } => Box::new(Pendulum::new(friction, rho, sigma)),
        }
    }

    pub fn rho(&self) -> f64 {
        match *self {
            ModelSpec::Lorenz63 { rho, .. } | ModelSpec::Pendulum { rho, .. } => rho,
        }
    }
}

/// Everything needed to run one physical/digital twin experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub model: ModelSpec,
    /// Digital-twin diffusion `sigma_digital * I`.
    pub sigma_digital: f64,
    /// Physical-twin diffusion `sigma_true * I`.
    pub sigma_true: f64,
    /// Observed state components (zero-based).
    pub obs_components: Vec<usize>,
    /// Observation noise `R = obs_noise * I`.
    pub obs_noise: f64,
    pub obs_mode: ObsMode,
    pub twin: TwinConfig,
    /// Physical-twin initial state.
    pub x0: Vec<f64>,
    /// Particles start at `N(init_mean, init_var * I)`.
    pub init_mean: Vec<f64>,
    pub init_var: f64,
    /// Apply `U = 0` to the physical twin instead of the twin's control.
    pub zero_control: bool,
}

impl ExperimentPreset {
    pub fn lorenz63() -> Self {
        ExperimentPreset {
            name: "lorenz63".into(),
            model: ModelSpec::Lorenz63 {
                sigma: 10.0,
                r: 28.0,
                b: 8.0 / 3.0,
                rho: 5000.0,
            },
            sigma_digital: 0.5,
            sigma_true: 0.0,
            obs_components: vec![0, 1],
            obs_noise: 0.01,
            obs_mode: ObsMode::Continuous,
            twin: TwinConfig {
                gamma: 10.0,
                epsilon: 1.0,
                bandwidth: 1.0,
                alpha: Alpha::Fixed(0.1),
                sigma_infl: 0.2,
                u_max: Some(100.0),
                dt: 0.001,
                m: 100,
                n_steps: 100_000,
                seed: 1,
                ..TwinConfig::default()
            },
            x0: LORENZ_X0.to_vec(),
            init_mean: LORENZ_X0.to_vec(),
            init_var: 0.1,
            zero_control: false,
        }
    }

    pub fn pendulum() -> Self {
        ExperimentPreset {
            name: "pendulum".into(),
            model: ModelSpec::Pendulum {
                friction: 2.0,
                rho: 500.0,
            },
            sigma_digital: 0.1,
            sigma_true: 0.0,
            obs_components: vec![0],
            obs_noise: 0.01,
            obs_mode: ObsMode::Continuous,
            twin: TwinConfig {
                gamma: 1.0,
                epsilon: 1.0,
                bandwidth: 0.1,
                alpha: Alpha::Fixed(0.1),
                sigma_infl: 0.002,
                u_max: None,
                dt: 0.001,
                m: 3,
                n_steps: 100_000,
                seed: 1,
                ..TwinConfig::default()
            },
            x0: vec![0.0, 0.0],
            init_mean: vec![0.0, 0.0],
            init_var: 0.1,
            zero_control: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lorenz63" => Ok(Self::lorenz63()),
            "pendulum" => Ok(Self::pendulum()),
            other => Err(TwinError::config(
                "preset",
                format!("unknown preset `{other}` (expected lorenz63 or pendulum)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.twin.validate()?;
        let d = self.model.state_dim();
        if self.x0.len() != d {
            return Err(TwinError::config(
                "x0",
                format!("expected {d} components, got {}", self.x0.len()),
            ));
        }
        if self.init_mean.len() != d {
            return Err(TwinError::config(
                "init_mean",
                format!("expected {d} components, got {}", self.init_mean.len()),
            ));
        }
        if self
            .x0
            .iter()
            .chain(&self.init_mean)
            .any(|v| !v.is_finite())
        {
            return Err(TwinError::config("x0", "values must be finite"));
        }
        if !(self.init_var >= 0.0 && self.init_var.is_finite()) {
            return Err(TwinError::config("init_var", "must be >= 0"));
        }
        if !(self.sigma_digital > 0.0 && self.sigma_digital.is_finite()) {
            return Err(TwinError::config("sigma_digital", "must be > 0"));
        }
        if !(self.sigma_true >= 0.0 && self.sigma_true.is_finite()) {
            return Err(TwinError::config("sigma_true", "must be >= 0"));
        }
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return Err(TwinError::config("obs_noise", "must be > 0"));
        }
        let finite_params = match self.model {
            ModelSpec::Lorenz63 { sigma, r, b, rho } => {
                [sigma, r, b, rho].iter().all(|v| v.is_finite())
            }
            ModelSpec::Pendulum { friction, rho } => friction.is_finite() && rho.is_finite(),
        };
        if !finite_params {
            return Err(TwinError::config(
                "model",
                "model parameters must be finite",
            ));
        }
        if self.model.rho() < 0.0 {
            return Err(TwinError::config("rho", "must be >= 0"));
        }
        self.observation_model()?;
        self.observation_stride()?;
        Ok(())
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        ObservationModel::components(
            self.model.state_dim(),
            &self.obs_components,
            self.obs_noise,
            self.obs_mode,
        )
    }

    /// Steps between discrete observations (`None` for continuous data).
    pub fn observation_stride(&self) -> Result<Option<usize>> {
        match self.obs_mode {
            ObsMode::Continuous => Ok(None),
            ObsMode::Discrete { interval } => {
                let ratio = interval / self.twin.dt;
                let stride = ratio.round();
                if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
                    return Err(TwinError::config(
                        "obs_interval",
                        format!("must be a positive multiple of dt = {}", self.twin.dt),
                    ));
                }
                Ok(Some(stride as usize))
            }
        }
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub physical: ChaCha8Rng,
    pub observation: ChaCha8Rng,
    pub particles: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self::from_seeds(seed, seed, seed)
    }

    /// Seeds each stream separately; `from_seed(s)` equals `from_seeds(s, s, s)`.
    pub fn from_seeds(physical: u64, observation: u64, particles: u64) -> Self {
        let stream = |seed: u64, id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        RngStreams {
            physical: stream(physical, 0),
            observation: stream(observation, 1),
            particles: stream(particles, 2),
        }
    }
}

/// Digital twin for `preset` with particles drawn from `N(init_mean, init_var I)`
/// and zero co-states.
pub fn build_twin<R: Rng + ?Sized>(preset: &ExperimentPreset, rng: &mut R) -> Result<DigitalTwin> {
    preset.validate()?;
    let d = preset.model.state_dim();
    let m = preset.twin.m;
    let spread = preset.init_var.sqrt();
    let mut states = DMatrix::zeros(d, m);
    for i in 0..m {
        let xi = standard_normal(d, rng);
        for k in 0..d {
            states[(k, i)] = preset.init_mean[k] + spread * xi[k];
        }
    }
    DigitalTwin::new(
        preset.model.build(preset.sigma_digital),
        preset.observation_model()?,
        preset.twin.clone(),
        Ensemble::from_states(states)?,
    )
}

/// Euler(-Maruyama) step of the physical twin.
pub fn step_physical<R: Rng + ?Sized>(
    model: &dyn ControlledModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut next = x + model.controlled_drift(x.as_slice(), u) * dt;
    let sigma = model.diffusion();
    if !is_zero(sigma) {
        let root = sym_sqrt(sigma, "sigma_true")?;
        next += root * standard_normal(x.len(), rng) * dt.sqrt();
    }
    Ok(next)
}

/// `sqrt(|x_true - mean|^2 / d)`.
pub fn rmse(x_true: &DVector<f64>, mean: &DVector<f64>) -> f64 {
    let d = x_true.len().max(1) as f64;
    ((x_true - mean).norm_squared() / d).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub x_true: DVector<f64>,
    pub mean: DVector<f64>,
    pub control: DVector<f64>,
    pub rmse: f64,
    /// `c(X_true) + |U|^2 / 2`.
    pub inst_cost: f64,
    /// Running left-endpoint quadrature of the discounted cost, including this row.
    pub disc_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dt: f64,
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn new(dt: f64) -> Self {
        RunRecord {
            dt,
            rows: Vec::new(),
        }
    }

    pub fn csv_header(state_dim: usize, control_dim: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=state_dim).map(|k| format!("x_true_{k}")));
        cols.extend((1..=state_dim).map(|k| format!("mean_{k}")));
        cols.extend((1..=control_dim).map(|k| format!("u_{k}")));
        cols.extend(["rmse", "inst_cost", "disc_cost"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (d, du) = self
            .rows
            .first()
            .map_or((0, 0), |r| (r.x_true.len(), r.control.len()));
        writeln!(out, "{}", Self::csv_header(d, du))?;
        for row in &self.rows {
            let mut line = format!("{}", row.t);
            for v in row
                .x_true
                .iter()
                .chain(row.mean.iter())
                .chain(row.control.iter())
            {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line.push_str(&format!(
                ",{},{},{}",
                row.rmse, row.inst_cost, row.disc_cost
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn final_row(&self) -> Option<&RunRow> {
        self.rows.last()
    }
}

/// Left-endpoint quadrature `sum_n exp(-gamma t_n) inst_cost_n dt` over all rows.
pub fn discounted_cost(record: &RunRecord, gamma: f64) -> f64 {
    record
        .rows
        .iter()
        .map(|r| (-gamma * r.t).exp() * r.inst_cost * record.dt)
        .sum()
}

/// A failed run with everything recorded up to the failing step.
#[derive(Debug)]
pub struct RunFailure {
    pub error: TwinError,
    pub record: RunRecord,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} rows recorded)",
            self.error,
            self.record.rows.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Physical twin, digital twin and their shared bookkeeping.
pub struct Simulation {
    preset: ExperimentPreset,
    physical: Box<dyn ControlledModel>,
    twin: DigitalTwin,
    x_true: DVector<f64>,
    rngs: RngStreams,
    stride: Option<usize>,
    step: usize,
    record: RunRecord,
    last_diagnostics: Option<StepDiagnostics>,
}

impl Simulation {
    pub fn new(preset: ExperimentPreset) -> Result<Self> {
        let rngs = RngStreams::from_seed(preset.twin.seed);
        Self::with_streams(preset, rngs)
    }

    pub fn with_streams(preset: ExperimentPreset, mut rngs: RngStreams) -> Result<Self> {
        let twin = build_twin(&preset, &mut rngs.particles)?;
        let mut sim = Simulation {
            physical: preset.model.build(preset.sigma_true),
            x_true: DVector::from_column_slice(&preset.x0),
            stride: preset.observation_stride()?,
            record: RunRecord::new(preset.twin.dt),
            preset,
            twin,
            rngs,
            step: 0,
            last_diagnostics: None,
        };
        sim.push_row();
        Ok(sim)
    }

    pub fn preset(&self) -> &ExperimentPreset {
        &self.preset
    }

    pub fn twin(&self) -> &DigitalTwin {
        &self.twin
    }

    pub fn x_true(&self) -> &DVector<f64> {
        &self.x_true
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.preset.twin.dt
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn into_record(self) -> RunRecord {
        self.record
    }

    pub fn last_diagnostics(&self) -> Option<&StepDiagnostics> {
        self.last_diagnostics.as_ref()
    }

    /// Control applied to the physical twin over the next interval.
    pub fn applied_control(&self) -> DVector<f64> {
        if self.preset.zero_control {
            DVector::zeros(self.physical.control_dim())
        } else {
            self.twin.control()
        }
    }

    fn push_row(&mut self) {
        let t = self.time();
        let control = self.applied_control();
        let mean = self.twin.ensemble().mean_state();
        let inst_cost =
            self.physical.running_cost(self.x_true.as_slice()) + 0.5 * control.norm_squared();
        let previous = self.record.rows.last().map_or(0.0, |r| r.disc_cost);
        let disc_cost =
            previous + (-self.preset.twin.gamma * t).exp() * inst_cost * self.preset.twin.dt;
        self.record.rows.push(RunRow {
            t,
            rmse: rmse(&self.x_true, &mean),
            x_true: self.x_true.clone(),
            mean,
            control,
            inst_cost,
            disc_cost,
        });
    }

    fn next_observation(&mut self) -> Result<Observation> {
        let obs = self.twin.obs_model();
        Ok(match self.stride {
            None => Observation::Increment(obs.continuous_obs_increment(
                self.x_true.as_slice(),
                self.preset.twin.dt,
                &mut self.rngs.observation,
            )),
            Some(stride) if self.step > 0 && self.step.is_multiple_of(stride) => {
                Observation::Discrete(
                    obs.discrete_obs(self.x_true.as_slice(), &mut self.rngs.observation)?,
                )
            }
            Some(_) => Observation::None,
        })
    }

    /// Advances both twins by one step and appends a record row.
    pub fn advance(&mut self) -> Result<()> {
        let step = self.step;
        let u = self.applied_control();
        let observation = self.next_observation().map_err(|e| e.at_step(step))?;
        let diag = self.twin.step(&observation)?;
        self.x_true = step_physical(
            self.physical.as_ref(),
            &self.x_true,
            &u,
            self.preset.twin.dt,
            &mut self.rngs.physical,
        )
        .map_err(|e| e.at_step(step))?;
        if !self.x_true.iter().all(|v| v.is_finite()) {
            return Err(TwinError::NonFinite {
                quantity: "physical state".into(),
                diagnostics: Box::new(diag),
                snapshot: Box::new(self.twin.ensemble().clone()),
            }
            .at_step(step));
        }
        self.last_diagnostics = Some(diag);
        self.step += 1;
        self.push_row();
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step < self.preset.twin.n_steps {
            self.advance()?;
        }
        Ok(())
    }
}

/// Runs a preset to its horizon. On failure the partial record is returned
/// alongside the error.
pub fn run_experiment(preset: &ExperimentPreset) -> std::result::Result<RunRecord, RunFailure> {
    let mut sim = Simulation::new(preset.clone()).map_err(|error| RunFailure {
        error,
        record: RunRecord::new(preset.twin.dt),
    })?;
    match sim.run_to_end() {
        Ok(()) => Ok(sim.into_record()),
        Err(error) => Err(RunFailure {
            error,
            record: sim.into_record(),
        }),
    }
}
