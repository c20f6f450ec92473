//! Ensemble Kalman–Bucy innovations for continuous data and the mollified
//! (pseudo-time) ensemble Kalman update for discrete data.
//!
//! Both use the "symmetric" innovation `y - (h(X_i) + m^h) / 2` and the gain
//! `K = C^{xh} R^{-1}`. For a linear forward map the cross covariance is taken
//! as `(C^{xx} + sigma_infl I) H^T`, i.e. with additive inflation. Nonlinear
//! forward maps use the raw empirical cross covariance and ignore inflation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TwinError};
use crate::observation::ObservationModel;
use crate::stats::{empirical_cross_cov, inflated_state_cov};

/// Per-particle data increment `K (dY - (h(X_i) + m^h) dt / 2)`, one column per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationTerm {
    pub per_particle: DMatrix<f64>,
}

/// Shared statistics for one assimilation evaluation.
struct Gain {
    gain: DMatrix<f64>,
    predicted: DMatrix<f64>,
    mean_obs: DVector<f64>,
}

fn gain(states: &DMatrix<f64>, obs: &ObservationModel, sigma_infl: f64) -> Result<Gain> {
    let predicted = obs.forward_all(states);
    if predicted.nrows() != obs.obs_dim() {
        return Err(TwinError::Dimension(format!(
            "forward map returned {} components, expected {}",
            predicted.nrows(),
            obs.obs_dim()
        )));
    }
    let cross = match obs.linear_matrix() {
        Some(h) => {
            if h.ncols() != states.nrows() {
                return Err(TwinError::Dimension(format!(
                    "H has {} columns but states have dimension {}",
                    h.ncols(),
                    states.nrows()
                )));
            }
            inflated_state_cov(states, sigma_infl)? * h.transpose()
        }
        None => empirical_cross_cov(states, &predicted)?,
    };
    let mean_obs = predicted.column_mean();
    Ok(Gain {
        gain: cross * obs.noise_precision(),
        predicted,
        mean_obs,
    })
}

impl Gain {
    /// Columns `K (y - scale * (h_i + m^h) / 2)`.
    fn apply(&self, y: &DVector<f64>, scale: f64) -> DMatrix<f64> {
        let mut residual = self.predicted.clone();
        for mut col in residual.column_iter_mut() {
            let r = y - (&col + &self.mean_obs) * (0.5 * scale);
            col.copy_from(&r);
        }
        &self.gain * residual
    }
}

pub fn kbf_innovation(
    states: &DMatrix<f64>,
    obs: &ObservationModel,
    dy: &DVector<f64>,
    dt: f64,
    sigma_infl: f64,
) -> Result<InnovationTerm> {
    if !(dt > 0.0) {
        return Err(TwinError::config("dt", "must be > 0"));
    }
    check_obs_len(obs, dy)?;
    let g = gain(states, obs, sigma_infl)?;
    Ok(InnovationTerm {
        per_particle: g.apply(dy, dt),
    })
}

/// Mollified ensemble Kalman update: integrates
/// `dX/ds = C^{xh} R^{-1} (y - (h(X) + m^h)/2)` over `s in [0, 1]` with
/// `n_pseudo` forward Euler steps, refreshing the (inflated) statistics each step.
pub fn enkf_assimilate(
    states: &DMatrix<f64>,
    obs: &ObservationModel,
    y: &DVector<f64>,
    n_pseudo: usize,
    sigma_infl: f64,
) -> Result<DMatrix<f64>> {
    if n_pseudo == 0 {
        return Err(TwinError::config("n_pseudo", "must be >= 1"));
    }
    check_obs_len(obs, y)?;
    let ds = 1.0 / n_pseudo as f64;
    let mut x = states.clone();
    for _ in 0..n_pseudo {
        let g = gain(&x, obs, sigma_infl)?;
        x += g.apply(y, 1.0) * ds;
    }
    Ok(x)
}

fn check_obs_len(obs: &ObservationModel, y: &DVector<f64>) -> Result<()> {
    if y.len() != obs.obs_dim() {
        return Err(TwinError::Dimension(format!(
            "observation has {} components, expected {}",
            y.len(),
            obs.obs_dim()
        )));
    }
    Ok(())
}
