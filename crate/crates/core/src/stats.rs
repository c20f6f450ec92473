//! Ensemble container and empirical moments.
//!
//! Particles are stored column-wise: an ensemble of `M` states in `R^d` is a
//! `d x M` matrix. All covariances use the `1/M` normalization (not `1/(M-1)`),
//! which matters for the very small ensembles (`M = 3, 4`) the presets use.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TwinError};

/// Paired state/co-state particles of the digital twin.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub states: DMatrix<f64>,
    pub costates: DMatrix<f64>,
    pub time: f64,
}

impl Ensemble {
    pub fn new(states: DMatrix<f64>, costates: DMatrix<f64>, time: f64) -> Result<Self> {
        if states.ncols() == 0 {
            return Err(TwinError::Dimension(
                "ensemble needs at least one particle".into(),
            ));
        }
        if states.shape() != costates.shape() {
            return Err(TwinError::Dimension(format!(
                "states are {:?} but costates are {:?}",
                states.shape(),
                costates.shape()
            )));
        }
        Ok(Ensemble {
            states,
            costates,
            time,
        })
    }

    /// Ensemble with all co-states set to zero.
    pub fn from_states(states: DMatrix<f64>) -> Result<Self> {
        let costates = DMatrix::zeros(states.nrows(), states.ncols());
        Ensemble::new(states, costates, 0.0)
    }

    pub fn size(&self) -> usize {
        self.states.ncols()
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        column(&self.states, i)
    }

    pub fn costate(&self, i: usize) -> &[f64] {
        column(&self.costates, i)
    }

    pub fn mean_state(&self) -> DVector<f64> {
        self.states.column_mean()
    }

    pub fn is_finite(&self) -> bool {
        self.states
            .iter()
            .chain(self.costates.iter())
            .all(|v| v.is_finite())
    }
}

/// Contiguous slice of column `i` of a column-major matrix.
pub fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let d = m.nrows();
    &m.as_slice()[i * d..(i + 1) * d]
}

pub fn empirical_mean(samples: &DMatrix<f64>) -> Result<DVector<f64>> {
    if samples.ncols() == 0 {
        return Err(TwinError::Dimension("mean of an empty sample".into()));
    }
    Ok(samples.column_mean())
}

/// `(1/M) sum_i (x_i - m^x)(y_i - m^y)^T` for column samples `xs` (`d_x x M`)
/// and `ys` (`d_y x M`).
pub fn empirical_cross_cov(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xs.ncols() != ys.ncols() {
        return Err(TwinError::Dimension(format!(
            "cross covariance of {} and {} samples",
            xs.ncols(),
            ys.ncols()
        )));
    }
    let mx = empirical_mean(xs)?;
    let my = empirical_mean(ys)?;
    let dx = centered(xs, &mx);
    let dy = centered(ys, &my);
    Ok(dx * dy.transpose() / xs.ncols() as f64)
}

/// Empirical state covariance with additive inflation `sigma_infl * I`.
pub fn inflated_state_cov(states: &DMatrix<f64>, sigma_infl: f64) -> Result<DMatrix<f64>> {
    if !(sigma_infl >= 0.0) {
        return Err(TwinError::config("sigma_infl", "must be >= 0"));
    }
    let mut c = empirical_cross_cov(states, states)?;
    for k in 0..c.nrows() {
        c[(k, k)] += sigma_infl;
    }
    Ok(c)
}

fn centered(samples: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = samples.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}
