//! Mean-field Pontryagin digital-twin stepper.
//!
//! Each particle carries a state `X_i` and a co-state `P_i`. One forward Euler
//! step of size `dt` evaluates, from a single pre-step snapshot,
//!
//! ```text
//! X_i' = b(X_i) + G(X_i) U - sum_j mu_ij X_j + K_i
//! eps P_i' = -gamma P_i + (D_x(b + G U)(X_i))^T P_i + grad c(X_i) + sum_j mu_ij P_j
//!            + (1 + eps) Dpsi(X_i) X_i' - Dpsi(X_i) K_i
//! U = -(1/M) sum_i G(X_i)^T P_i          (clipped to [-u_max, u_max])
//! ```
//!
//! where `K_i` is the data innovation of particle `i` (Kalman–Bucy increment for
//! continuous data, the mollified ensemble Kalman impulse at discrete
//! observation times, zero otherwise), `mu` the Sinkhorn coupling and `psi`
//! the kernel regression of co-states on states.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TwinError};
use crate::filter::{enkf_assimilate, kbf_innovation};
use crate::models::ControlledModel;
use crate::observation::ObservationModel;
use crate::regression::PsiEstimator;
use crate::stats::{column, Ensemble};
use crate::transport::{sinkhorn_coupling, SinkhornOptions};

/// Sinkhorn regularization: a fixed value or tied to the Euler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Fixed(f64),
    StepSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    /// Discount rate `gamma`.
    pub gamma: f64,
    /// Co-state time scale `eps`.
    pub epsilon: f64,
    /// Kernel regression bandwidth `delta`.
    pub bandwidth: f64,
    pub alpha: Alpha,
    /// Additive covariance inflation.
    pub sigma_infl: f64,
    pub u_max: Option<f64>,
    pub dt: f64,
    /// Ensemble size.
    pub m: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Pseudo-time steps for discrete assimilation.
    pub n_pseudo: usize,
    /// Step of the Jacobian-vector finite difference; `None` means `dt`.
    pub fd_step: Option<f64>,
    pub sinkhorn: SinkhornOptions,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            gamma: 1.0,
            epsilon: 1.0,
            bandwidth: 1.0,
            alpha: Alpha::Fixed(0.1),
            sigma_infl: 0.0,
            u_max: None,
            dt: 1e-3,
            m: 10,
            n_steps: 1000,
            seed: 1,
            n_pseudo: 10,
            fd_step: None,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TwinError::config(key, format!("must be > 0 (got {v})")))
            }
        }
        positive("gamma", self.gamma)?;
        positive("epsilon", self.epsilon)?;
        positive("delta", self.bandwidth)?;
        positive("dt", self.dt)?;
        if let Alpha::Fixed(a) = self.alpha {
            positive("alpha", a)?;
        }
        if !(self.sigma_infl >= 0.0 && self.sigma_infl.is_finite()) {
            return Err(TwinError::config(
                "sigma_infl",
                format!("must be >= 0 (got {})", self.sigma_infl),
            ));
        }
        if let Some(u) = self.u_max {
            if !(u >= 0.0) || u.is_nan() {
                return Err(TwinError::config(
                    "u_max",
                    format!("must be >= 0 (got {u})"),
                ));
            }
        }
        if self.m < 1 {
            return Err(TwinError::config("m", "ensemble size must satisfy m >= 1"));
        }
        if self.n_pseudo < 1 {
            return Err(TwinError::config("n_pseudo", "must be >= 1"));
        }
        if let Some(h) = self.fd_step {
            positive("fd_step", h)?;
        }
        positive("sinkhorn_tol", self.sinkhorn.tol)?;
        Ok(())
    }

    pub fn alpha_value(&self) -> f64 {
        match self.alpha {
            Alpha::Fixed(a) => a,
            Alpha::StepSize => self.dt,
        }
    }

    pub fn fd_step_value(&self) -> f64 {
        self.fd_step.unwrap_or(self.dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub control: DVector<f64>,
    pub mean_state: DVector<f64>,
    pub mean_obs: DVector<f64>,
    /// RMS over particles of the score drift `sum_j mu_ij X_j`.
    pub score_norm: f64,
    /// RMS over particles of the combined `Dpsi` terms of the co-state equation.
    pub psi_jacvec_norm: f64,
    pub sinkhorn_iters: usize,
}

impl StepDiagnostics {
    pub fn is_finite(&self) -> bool {
        self.control.iter().all(|v| v.is_finite())
            && self.mean_state.iter().all(|v| v.is_finite())
            && self.mean_obs.iter().all(|v| v.is_finite())
            && self.score_norm.is_finite()
            && self.psi_jacvec_norm.is_finite()
    }
}

/// Data delivered to the twin for one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    None,
    /// Continuous-time increment `dY` over `[t, t + dt]`.
    Increment(DVector<f64>),
    /// Discrete observation `Y` at the current time.
    Discrete(DVector<f64>),
}

/// Open-loop control `-(1/M) sum_i G(X_i)^T P_i`, clipped componentwise.
pub fn compute_control(
    ensemble: &Ensemble,
    model: &dyn ControlledModel,
    u_max: Option<f64>,
) -> DVector<f64> {
    let m = ensemble.size();
    let mut u = DVector::zeros(model.control_dim());
    for i in 0..m {
        let g = model.control_matrix(ensemble.state(i));
        u.gemv_tr(
            1.0,
            &g,
            &DVector::from_column_slice(ensemble.costate(i)),
            1.0,
        );
    }
    u /= -(m as f64);
    // turn -0.0 into 0.0
    u.apply(|v| *v += 0.0);
    if let Some(bound) = u_max {
        u.apply(|v| *v = v.clamp(-bound, bound));
    }
    u
}

/// State right-hand side split into the drift rate and the data innovation
/// rate; one Euler step adds `dt * drift + dt * innovation_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRhs {
    pub drift: DVector<f64>,
    pub innovation_rate: DVector<f64>,
}

impl StateRhs {
    pub fn total(&self) -> DVector<f64> {
        &self.drift + &self.innovation_rate
    }
}

/// `b(x) + G(x) u - score` plus the innovation increment divided by `dt`.
pub fn state_rhs(
    x: &[f64],
    model: &dyn ControlledModel,
    control: &DVector<f64>,
    score: &[f64],
    innovation: &[f64],
    dt: f64,
) -> StateRhs {
    let mut drift = model.controlled_drift(x, control);
    drift -= DVector::from_column_slice(score);
    StateRhs {
        drift,
        innovation_rate: DVector::from_column_slice(innovation) / dt,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateRhs {
    pub rate: DVector<f64>,
    /// `(1 + eps) Dpsi x_dot - Dpsi innovation_rate`.
    pub psi_term: DVector<f64>,
}

/// Parameters of the co-state equation shared by all particles in a step.
#[derive(Debug, Clone, Copy)]
pub struct CostateParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub fd_step: f64,
}

/// Co-state rate `P_i'`. `psi_at_x` is the regression evaluated at `x`, shared
/// by both Jacobian–vector products.
#[allow(clippy::too_many_arguments)]
pub fn costate_rhs(
    x: &[f64],
    p: &[f64],
    model: &dyn ControlledModel,
    control: &DVector<f64>,
    x_dot: &DVector<f64>,
    innovation_rate: &DVector<f64>,
    coupled_costate: &[f64],
    psi: &PsiEstimator<'_>,
    psi_at_x: &DVector<f64>,
    params: CostateParams,
) -> CostateRhs {
    let CostateParams {
        epsilon,
        gamma,
        fd_step,
    } = params;
    let p_vec = DVector::from_column_slice(p);
    let jac = model.controlled_drift_jacobian(x, control);

    let d = x.len();
    let (mut shifted, mut scratch) = (Vec::with_capacity(d), Vec::new());
    let mut along_motion = DVector::zeros(d);
    let mut along_data = DVector::zeros(d);
    let base = psi_at_x.as_slice();
    psi.jacvec_into(
        base,
        x,
        x_dot.as_slice(),
        fd_step,
        along_motion.as_mut_slice(),
        &mut shifted,
        &mut scratch,
    );
    psi.jacvec_into(
        base,
        x,
        innovation_rate.as_slice(),
        fd_step,
        along_data.as_mut_slice(),
        &mut shifted,
        &mut scratch,
    );
    let psi_term = along_motion * (1.0 + epsilon) - along_data;

    let mut rhs = &p_vec * -gamma;
    rhs.gemv_tr(1.0, &jac, &p_vec, 1.0);
    rhs += model.cost_gradient(x);
    rhs += DVector::from_column_slice(coupled_costate);
    rhs += &psi_term;
    CostateRhs {
        rate: rhs / epsilon,
        psi_term,
    }
}

/// Advances the ensemble by one Euler step. Returns the new ensemble and the
/// diagnostics of the pre-step snapshot (including the control that was used).
pub fn step(
    ensemble: &Ensemble,
    model: &dyn ControlledModel,
    obs_model: &ObservationModel,
    config: &TwinConfig,
    observation: &Observation,
) -> Result<(Ensemble, StepDiagnostics)> {
    let order: Vec<usize> = (0..ensemble.size()).collect();
    advance(ensemble, model, obs_model, config, observation, &order)
}

fn advance(
    ensemble: &Ensemble,
    model: &dyn ControlledModel,
    obs_model: &ObservationModel,
    config: &TwinConfig,
    observation: &Observation,
    order: &[usize],
) -> Result<(Ensemble, StepDiagnostics)> {
    let d = model.state_dim();
    let m = ensemble.size();
    if ensemble.dim() != d {
        return Err(TwinError::Dimension(format!(
            "ensemble dimension {} does not match model {} ({d})",
            ensemble.dim(),
            model.name()
        )));
    }
    let dt = config.dt;
    let states = &ensemble.states;
    let costates = &ensemble.costates;

    // shared snapshot quantities
    let mean_state = states.column_mean();
    let mean_obs = obs_model.forward_all(states).column_mean();
    let coupling = sinkhorn_coupling(
        states,
        model.diffusion(),
        config.alpha_value(),
        config.sinkhorn,
    )?;
    let score = coupling.apply(states)?;
    let coupled_costates = coupling.apply(costates)?;
    let control = compute_control(ensemble, model, config.u_max);
    let innovation = match observation {
        Observation::None => DMatrix::zeros(d, m),
        Observation::Increment(dy) => {
            kbf_innovation(states, obs_model, dy, dt, config.sigma_infl)?.per_particle
        }
        Observation::Discrete(y) => {
            enkf_assimilate(states, obs_model, y, config.n_pseudo, config.sigma_infl)? - states
        }
    };
    let psi = PsiEstimator::new(states, costates, config.bandwidth)?;
    let params = CostateParams {
        epsilon: config.epsilon,
        gamma: config.gamma,
        fd_step: config.fd_step_value(),
    };

    let mut new_states = states.clone();
    let mut new_costates = costates.clone();
    let mut score_sq = 0.0;
    let mut psi_sq = 0.0;
    let mut psi_at_x = DVector::zeros(d);
    let mut scratch = Vec::with_capacity(m);
    for &i in order {
        let x = column(states, i);
        let p = column(costates, i);
        let score_i = column(&score, i);
        let innovation_i = column(&innovation, i);
        let x_rhs = state_rhs(x, model, &control, score_i, innovation_i, dt);
        let x_dot = x_rhs.total();
        psi.estimate_into(x, psi_at_x.as_mut_slice(), &mut scratch);
        let p_rhs = costate_rhs(
            x,
            p,
            model,
            &control,
            &x_dot,
            &x_rhs.innovation_rate,
            column(&coupled_costates, i),
            &psi,
            &psi_at_x,
            params,
        );

        let mut xi = new_states.column_mut(i);
        xi.axpy(dt, &x_rhs.drift, 1.0);
        xi += DVector::from_column_slice(innovation_i);
        new_costates.column_mut(i).axpy(dt, &p_rhs.rate, 1.0);

        score_sq += score_i.iter().map(|v| v * v).sum::<f64>();
        psi_sq += p_rhs.psi_term.norm_squared();
    }

    let diagnostics = StepDiagnostics {
        control,
        mean_state,
        mean_obs,
        score_norm: (score_sq / m as f64).sqrt(),
        psi_jacvec_norm: (psi_sq / m as f64).sqrt(),
        sinkhorn_iters: coupling.iterations(),
    };
    let next = Ensemble {
        states: new_states,
        costates: new_costates,
        time: ensemble.time + dt,
    };
    if !diagnostics.is_finite() || !next.is_finite() {
        let quantity = if !diagnostics.control.iter().all(|v| v.is_finite()) {
            "control"
        } else if !next.states.iter().all(|v| v.is_finite()) {
            "states"
        } else if !next.costates.iter().all(|v| v.is_finite()) {
            "costates"
        } else {
            "step diagnostics"
        };
        return Err(TwinError::NonFinite {
            quantity: quantity.into(),
            diagnostics: Box::new(diagnostics),
            snapshot: Box::new(ensemble.clone()),
        });
    }
    Ok((next, diagnostics))
}

/// A digital twin that owns its ensemble and is fed one observation per step.
pub struct DigitalTwin {
    model: Box<dyn ControlledModel>,
    obs_model: ObservationModel,
    config: TwinConfig,
    ensemble: Ensemble,
    steps: usize,
}

impl DigitalTwin {
    pub fn new(
        model: Box<dyn ControlledModel>,
        obs_model: ObservationModel,
        config: TwinConfig,
        ensemble: Ensemble,
    ) -> Result<Self> {
        config.validate()?;
        if ensemble.dim() != model.state_dim() {
            return Err(TwinError::Dimension(format!(
                "initial ensemble has dimension {}, model {} needs {}",
                ensemble.dim(),
                model.name(),
                model.state_dim()
            )));
        }
        if ensemble.size() != config.m {
            return Err(TwinError::config(
                "m",
                format!(
                    "initial ensemble has {} particles, config says {}",
                    ensemble.size(),
                    config.m
                ),
            ));
        }
        if let Some(h) = obs_model.linear_matrix() {
            if h.ncols() != model.state_dim() {
                return Err(TwinError::Dimension(
                    "observation operator does not match state dimension".into(),
                ));
            }
        }
        Ok(DigitalTwin {
            model,
            obs_model,
            config,
            ensemble,
            steps: 0,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn model(&self) -> &dyn ControlledModel {
        self.model.as_ref()
    }

    pub fn obs_model(&self) -> &ObservationModel {
        &self.obs_model
    }

    pub fn config(&self) -> &TwinConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Control implied by the current ensemble; equals the control the next
    /// [`DigitalTwin::step`] will report.
    pub fn control(&self) -> DVector<f64> {
        compute_control(&self.ensemble, self.model.as_ref(), self.config.u_max)
    }

    pub fn step(&mut self, observation: &Observation) -> Result<StepDiagnostics> {
        let (next, diag) = step(
            &self.ensemble,
            self.model.as_ref(),
            &self.obs_model,
            &self.config,
            observation,
        )
        .map_err(|e| e.at_step(self.steps))?;
        self.ensemble = next;
        self.steps += 1;
        Ok(diag)
    }
}
