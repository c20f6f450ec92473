//! Particle digital twin for partially observed controlled diffusions.
//!
//! A simulated physical twin is observed through noisy data. The digital twin
//! is an interacting particle system of states and co-states: the states
//! assimilate the data with an ensemble Kalman–Bucy (or mollified ensemble
//! Kalman) filter, the co-states follow mean-field Pontryagin dynamics, and their
//! ensemble average yields the open-loop control that is fed back to the
//! physical twin on every step.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`stats`] | [`Ensemble`], empirical means and (inflated) covariances |
//! | [`models`] | [`ControlledModel`] with Lorenz-63 and inverted pendulum |
//! | [`observation`] | continuous / discrete noisy observations |
//! | [`filter`] | Kalman–Bucy innovations, mollified EnKF update |
//! | [`transport`] | Sinkhorn coupling for score and generator terms |
//! | [`regression`] | Nadaraya–Watson co-state regression |
//! | [`controller`] | control law and the Euler step of the particle system |
//! | [`harness`] | physical/digital twin loop, presets, run records |
//! | [`config`] | flat `key = value` experiment files |
//! | [`selftest`] | analytic oracle checks |

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod observation;
pub mod regression;
pub mod selftest;
pub mod stats;
pub mod transport;

pub use controller::{
    compute_control, step, Alpha, DigitalTwin, Observation, StepDiagnostics, TwinConfig,
};
pub use error::{Result, TwinError};
pub use harness::{
    build_twin, discounted_cost, rmse, run_experiment, ExperimentPreset, RunRecord, RunRow,
    Simulation,
};
pub use models::{ControlledModel, Lorenz63, Pendulum, ScalarLinear};
pub use observation::{ObsMode, ObservationModel};
pub use stats::Ensemble;
