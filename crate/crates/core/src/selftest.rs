//! Analytic oracle checks of the numerical building blocks.
//!
//! Each oracle is deterministic (fixed seeds) and reports the measured error
//! next to its tolerance.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::filter::{enkf_assimilate, kbf_innovation};
use crate::models::{numeric_jacobian, ControlledModel, Lorenz63, Pendulum};
use crate::observation::{ObsMode, ObservationModel};
use crate::transport::{sinkhorn_coupling, SinkhornOptions};

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: &'static str,
    pub passed: bool,
    /// Measured error, in the units of `tolerance`.
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<18} error {:.3e} (tol {:.1e}) {} [{:.1}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn report(
    name: &'static str,
    start: Instant,
    error: f64,
    tolerance: f64,
    detail: String,
) -> OracleReport {
    OracleReport {
        name,
        passed: error <= tolerance,
        error,
        tolerance,
        detail,
        elapsed: start.elapsed(),
    }
}

fn gaussian_samples(
    mean: &[f64],
    cov: &DMatrix<f64>,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let d = mean.len();
    let l = cov
        .clone()
        .cholesky()
        .expect("oracle covariance is positive definite")
        .l();
    let z = DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(rng));
    let mut x = l * z;
    for mut col in x.column_iter_mut() {
        col += DVector::from_column_slice(mean);
    }
    x
}

/// Ensemble-RMS relative error of the coupling applied to `M = 5000` samples
/// of `N(mean, cov)` against `-(s/2) C^{-1} (x - m)`, with `alpha = 0.05` and
/// `Sigma = s I`.
pub fn gaussian_score_error(mean: &[f64], cov: &DMatrix<f64>, s: f64, seed: u64) -> Result<f64> {
    let d = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_samples(mean, cov, 5000, &mut rng);
    let coupling = sinkhorn_coupling(
        &x,
        &(DMatrix::identity(d, d) * s),
        0.05,
        SinkhornOptions::default(),
    )?;
    let got = coupling.apply(&x)?;
    let precision = cov
        .clone()
        .try_inverse()
        .expect("oracle covariance is invertible");
    let mut centred = x;
    for mut col in centred.column_iter_mut() {
        col -= DVector::from_column_slice(mean);
    }
    let exact = precision * centred * (-0.5 * s);
    Ok((got - &exact).norm() / exact.norm())
}

/// Oracle cases `(mean, covariance, s)` for `d = 1, 2, 3`.
pub fn gaussian_score_cases() -> Vec<(Vec<f64>, DMatrix<f64>, f64)> {
    vec![
        (vec![0.5], DMatrix::from_element(1, 1, 1.5), 7.0),
        (
            vec![-1.0, 2.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            5.0,
        ),
        (
            vec![1.0, 0.0, -2.0],
            DMatrix::from_row_slice(3, 3, &[1.2, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.9]),
            8.5,
        ),
    ]
}

/// Gaussian score recovery for `d = 1, 2, 3`; the worst case is reported.
pub fn gaussian_score() -> Result<OracleReport> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (mean, cov, s) in gaussian_score_cases() {
        let rel = gaussian_score_error(&mean, &cov, s, 11)?;
        parts.push(format!("d={}: {rel:.3}", mean.len()));
        worst = worst.max(rel);
    }
    Ok(report(
        "gaussian_score",
        start,
        worst,
        0.15,
        parts.join(", "),
    ))
}

/// Mollified EnKF update of a scalar Gaussian prior against the exact Kalman
/// posterior; the error is the larger of the mean and variance deviations in
/// Monte Carlo standard errors (`M = 10^4`).
pub fn kalman_update() -> Result<OracleReport> {
    let start = Instant::now();
    let (m0, c0, r, y) = (1.0, 2.0, 0.5, 3.0);
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let prior = gaussian_samples(&[m0], &DMatrix::from_element(1, 1, c0), n, &mut rng);
    let obs = ObservationModel::components(1, &[0], r, ObsMode::Discrete { interval: 1.0 })?;
    let post = enkf_assimilate(&prior, &obs, &DVector::from_element(1, y), 50, 0.0)?;
    let m1 = m0 + c0 * (y - m0) / (c0 + r);
    let c1 = c0 * r / (c0 + r);
    let mean = post.mean();
    let var = post.map(|v| (v - mean) * (v - mean)).mean();
    let mean_z = (mean - m1).abs() / (c1 / n as f64).sqrt();
    let var_z = (var - c1).abs() / (c1 * (2.0 / n as f64).sqrt());
    Ok(report(
        "kalman_update",
        start,
        mean_z.max(var_z),
        3.0,
        format!("mean {mean:.4} vs {m1:.4}, variance {var:.4} vs {c1:.4}"),
    ))
}

/// Ensemble Kalman–Bucy filter for `dX = a X dt + sqrt(q) dW`,
/// `dY = X dt + sqrt(r) dV` with `a = -1`, `q = r = 1` and `M = 10^4`. The
/// ensemble variance is compared with the RK4 solution of
/// `C' = 2 a C + q - C^2 / r` at `t = 2, 3, 4, 5`; error is the worst relative
/// deviation.
pub fn riccati_tracking() -> Result<OracleReport> {
    let start = Instant::now();
    let (a, q, r) = (-1.0_f64, 1.0_f64, 1.0_f64);
    let (dt, n_steps, m) = (0.005, 1000, 10_000);
    let c0 = 2.0;
    let obs = ObservationModel::components(1, &[0], r, ObsMode::Continuous)?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut truth = 0.0;
    let mut x = gaussian_samples(&[1.0], &DMatrix::from_element(1, 1, c0), m, &mut rng);
    let mut riccati = c0;
    let rhs = |c: f64| 2.0 * a * c + q - c * c / r;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in 1..=n_steps {
        let dy = obs.continuous_obs_increment(&[truth], dt, &mut rng);
        let innovation = kbf_innovation(&x, &obs, &dy, dt, 0.0)?.per_particle;
        let noise_scale = (q * dt).sqrt();
        for (xi, inc) in x.iter_mut().zip(innovation.iter()) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *xi += a * *xi * dt + noise_scale * noise + inc;
        }
        let w: f64 = StandardNormal.sample(&mut rng);
        truth += a * truth * dt + noise_scale * w;

        let k1 = rhs(riccati);
        let k2 = rhs(riccati + 0.5 * dt * k1);
        let k3 = rhs(riccati + 0.5 * dt * k2);
        let k4 = rhs(riccati + dt * k3);
        riccati += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

        if k % 200 == 0 && k >= 400 {
            let mean = x.mean();
            let var = x.map(|v| (v - mean) * (v - mean)).mean();
            let rel = (var - riccati).abs() / riccati;
            parts.push(format!("t={:.0}: {var:.4}/{riccati:.4}", k as f64 * dt));
            worst = worst.max(rel);
        }
    }
    Ok(report(
        "riccati_tracking",
        start,
        worst,
        0.05,
        parts.join(", "),
    ))
}

/// Analytic drift Jacobians (with and without control) and cost gradients
/// against central differences at 100 random points per model.
pub fn jacobian_checks() -> Result<OracleReport> {
    let start = Instant::now();
    let lorenz = Lorenz63::new(10.0, 28.0, 8.0 / 3.0, 5000.0, DMatrix::identity(3, 3) * 0.5);
    let pendulum = Pendulum::new(2.0, 500.0, DMatrix::identity(2, 2) * 0.1);
    let models: [(&dyn ControlledModel, f64); 2] = [(&lorenz, 20.0), (&pendulum, 4.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (model, range) in models {
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..model.state_dim())
                .map(|_| rng.random_range(-range..range))
                .collect::<Vec<f64>>();
            if x[0].abs() < 1e-3 {
                // keep central differences off the cost kink at x_1 = 0
                x[0] += 1e-2;
            }
            let u = DVector::from_fn(model.control_dim(), |_, _| rng.random_range(-10.0..10.0));
            let scaled = |exact: &DMatrix<f64>, approx: &DMatrix<f64>| {
                ((exact - approx).abs() / exact.amax().max(1.0)).max()
            };
            let jac = numeric_jacobian(|y| model.drift(y), &x, h);
            worst = worst.max(scaled(&model.drift_jacobian(&x), &jac));
            let jac_u = numeric_jacobian(|y| model.controlled_drift(y, &u), &x, h);
            worst = worst.max(scaled(&model.controlled_drift_jacobian(&x, &u), &jac_u));
            let grad = numeric_jacobian(|y| DVector::from_element(1, model.running_cost(y)), &x, h)
                .transpose();
            let exact = model.cost_gradient(&x);
            worst = worst.max(scaled(
                &DMatrix::from_column_slice(exact.len(), 1, exact.as_slice()),
                &grad,
            ));
        }
    }
    Ok(report(
        "jacobian_checks",
        start,
        worst,
        1e-5,
        "lorenz63 + pendulum, 100 points each".into(),
    ))
}

/// Zero row/column sums (1e-8) and symmetry (1e-10) of `mu` over 50 random
/// ensembles. The reported error is the larger violation ratio.
pub fn sinkhorn_invariants() -> Result<OracleReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst_sum: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let m = rng.random_range(2..=60);
        let spread = rng.random_range(0.1..3.0);
        let alpha = rng.random_range(0.05..1.0);
        let x = DMatrix::from_fn(d, m, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spread * z
        });
        let sigma = DMatrix::identity(d, d) * rng.random_range(0.2..2.0);
        let mu = sinkhorn_coupling(&x, &sigma, alpha, SinkhornOptions::default())?.mu_matrix();
        let rows = mu.column_sum().amax();
        let cols = mu.row_sum().amax();
        worst_sum = worst_sum.max(rows).max(cols);
        worst_sym = worst_sym.max((&mu - mu.transpose()).amax());
    }
    let ratio = (worst_sum / 1e-8).max(worst_sym / 1e-10);
    Ok(report(
        "sinkhorn_invariants",
        start,
        ratio,
        1.0,
        format!("max |sum| {worst_sum:.2e}, max asymmetry {worst_sym:.2e}"),
    ))
}

/// Runs every oracle in order.
pub fn run_all() -> Result<Vec<OracleReport>> {
    Ok(vec![
        gaussian_score()?,
        kalman_update()?,
        riccati_tracking()?,
        jacobian_checks()?,
        sinkhorn_invariants()?,
    ])
}
