//! Noisy observations of the physical twin.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TwinError};
use crate::linalg::{is_symmetric, min_eigenvalue, sym_sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsMode {
    /// Increments `dY = h(X) dt + R^{1/2} dW` on every simulation step.
    Continuous,
    /// `Y = h(X) + R^{1/2} xi` every `interval` time units.
    Discrete { interval: f64 },
}

pub type ForwardFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum ForwardMap {
    Linear(DMatrix<f64>),
    Nonlinear { obs_dim: usize, f: ForwardFn },
}

impl fmt::Debug for ForwardMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForwardMap::Linear(h) => f.debug_tuple("Linear").field(h).finish(),
            ForwardMap::Nonlinear { obs_dim, .. } => f
                .debug_struct("Nonlinear")
                .field("obs_dim", obs_dim)
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObservationModel {
    forward: ForwardMap,
    noise_cov: DMatrix<f64>,
    noise_sqrt: DMatrix<f64>,
    noise_precision: DMatrix<f64>,
    mode: ObsMode,
}

impl ObservationModel {
    pub fn linear(h: DMatrix<f64>, noise_cov: DMatrix<f64>, mode: ObsMode) -> Result<Self> {
        Self::build(ForwardMap::Linear(h), noise_cov, mode)
    }

    pub fn nonlinear(
        obs_dim: usize,
        f: ForwardFn,
        noise_cov: DMatrix<f64>,
        mode: ObsMode,
    ) -> Result<Self> {
        Self::build(ForwardMap::Nonlinear { obs_dim, f }, noise_cov, mode)
    }

    /// Observe the listed state components (zero-based) with noise `noise_var * I`.
    pub fn components(
        state_dim: usize,
        components: &[usize],
        noise_var: f64,
        mode: ObsMode,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(TwinError::config(
                "obs_components",
                "at least one component is required",
            ));
        }
        let mut h = DMatrix::zeros(components.len(), state_dim);
        for (row, &c) in components.iter().enumerate() {
            if c >= state_dim {
                return Err(TwinError::config(
                    "obs_components",
                    format!("component {} exceeds state dimension {state_dim}", c + 1),
                ));
            }
            h[(row, c)] = 1.0;
        }
        let r = DMatrix::identity(components.len(), components.len()) * noise_var;
        Self::linear(h, r, mode)
    }

    fn build(forward: ForwardMap, noise_cov: DMatrix<f64>, mode: ObsMode) -> Result<Self> {
        let d_y = match &forward {
            ForwardMap::Linear(h) => h.nrows(),
            ForwardMap::Nonlinear { obs_dim, .. } => *obs_dim,
        };
        if noise_cov.shape() != (d_y, d_y) {
            return Err(TwinError::config(
                "obs_noise",
                format!("R must be {d_y}x{d_y}, got {:?}", noise_cov.shape()),
            ));
        }
        if !is_symmetric(&noise_cov, 1e-12) {
            return Err(TwinError::config("obs_noise", "R must be symmetric"));
        }
        if !(min_eigenvalue(&noise_cov) > 0.0) {
            return Err(TwinError::config(
                "obs_noise",
                "R must be positive definite",
            ));
        }
        if let ObsMode::Discrete { interval } = mode {
            if !(interval > 0.0) {
                return Err(TwinError::config("obs_interval", "must be > 0"));
            }
        }
        let noise_precision = noise_cov
            .clone()
            .try_inverse()
            .ok_or_else(|| TwinError::config("obs_noise", "R is singular"))?;
        let noise_sqrt = sym_sqrt(&noise_cov, "obs_noise")?;
        Ok(ObservationModel {
            forward,
            noise_cov,
            noise_sqrt,
            noise_precision,
            mode,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.forward {
            ForwardMap::Linear(h) => Some(h),
            ForwardMap::Nonlinear { .. } => None,
        }
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn noise_sqrt(&self) -> &DMatrix<f64> {
        &self.noise_sqrt
    }

    /// `R^{-1}`.
    pub fn noise_precision(&self) -> &DMatrix<f64> {
        &self.noise_precision
    }

    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        match &self.forward {
            ForwardMap::Linear(h) => h * DVector::from_column_slice(x),
            ForwardMap::Nonlinear { f, .. } => f(x),
        }
    }

    /// `h` applied to every column of `states`.
    pub fn forward_all(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.forward {
            ForwardMap::Linear(h) => h * states,
            ForwardMap::Nonlinear { obs_dim, f } => {
                let d = states.nrows();
                let mut out = DMatrix::zeros(*obs_dim, states.ncols());
                for (i, x) in states.as_slice().chunks_exact(d.max(1)).enumerate() {
                    out.set_column(i, &f(x));
                }
                out
            }
        }
    }

    /// `h(x) dt + R^{1/2} sqrt(dt) xi` for a given standard normal draw `xi`.
    pub fn continuous_increment_from_draw(
        &self,
        x: &[f64],
        dt: f64,
        xi: &DVector<f64>,
    ) -> DVector<f64> {
        self.forward(x) * dt + &self.noise_sqrt * xi * dt.sqrt()
    }

    pub fn continuous_obs_increment<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        dt: f64,
        rng: &mut R,
    ) -> DVector<f64> {
        let xi = standard_normal(self.obs_dim(), rng);
        self.continuous_increment_from_draw(x, dt, &xi)
    }

    pub fn discrete_from_draw(&self, x: &[f64], xi: &DVector<f64>) -> Result<DVector<f64>> {
        if self.mode == ObsMode::Continuous {
            return Err(TwinError::Usage(
                "discrete observation requested from a continuous observation model".into(),
            ));
        }
        Ok(self.forward(x) + &self.noise_sqrt * xi)
    }

    pub fn discrete_obs<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        let xi = standard_normal(self.obs_dim(), rng);
        self.discrete_from_draw(x, &xi)
    }
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::empirical_cross_cov;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const X_REF: [f64; 3] = [7.8590, 7.1136, 27.2293];

    fn lorenz_obs(mode: ObsMode) -> ObservationModel {
        ObservationModel::components(3, &[0, 1], 0.01, mode).unwrap()
    }

    #[test]
    fn noise_free_increment() {
        let obs = lorenz_obs(ObsMode::Continuous);
        let dy = obs.continuous_increment_from_draw(&X_REF, 0.001, &DVector::zeros(2));
        assert_relative_eq!(dy[0], 0.0078590, epsilon = 1e-15);
        assert_relative_eq!(dy[1], 0.0071136, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_noise_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = ObservationModel::components(3, &[0, 1], 1e-20, ObsMode::Continuous).unwrap();
        let dy = obs.continuous_obs_increment(&X_REF, 0.01, &mut rng);
        assert!((dy - obs.forward(&X_REF) * 0.01).amax() < 1e-9);
    }

    #[test]
    fn discrete_structure() {
        let obs =
            ObservationModel::components(2, &[0, 1], 1.0, ObsMode::Discrete { interval: 0.1 })
                .unwrap();
        let xi = DVector::from_column_slice(&[0.3, -1.2]);
        let y = obs.discrete_from_draw(&[1.0, 2.0], &xi).unwrap();
        assert_relative_eq!(y[0], 1.3, epsilon = 1e-15);
        assert_relative_eq!(y[1], 0.8, epsilon = 1e-15);
        let y0 = obs
            .discrete_from_draw(&[1.0, 2.0], &DVector::zeros(2))
            .unwrap();
        assert_eq!(y0.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn discrete_in_continuous_mode_is_usage_error() {
        let obs = lorenz_obs(ObsMode::Continuous);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            obs.discrete_obs(&X_REF, &mut rng),
            Err(TwinError::Usage(_))
        ));
    }

    #[test]
    fn rejects_bad_noise() {
        let h = DMatrix::identity(2, 2);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(ObservationModel::linear(h.clone(), singular, ObsMode::Continuous).is_err());
        let wrong = DMatrix::identity(3, 3);
        assert!(ObservationModel::linear(h, wrong, ObsMode::Continuous).is_err());
    }

    fn noise_cov_sample(mode: ObsMode) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.02]);
        let obs =
            ObservationModel::linear(DMatrix::identity(2, 3).clone(), r.clone(), mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let dt = 0.001;
        let h = obs.forward(&X_REF);
        let mut samples = DMatrix::zeros(2, n);
        for i in 0..n {
            let e = match mode {
                ObsMode::Continuous => {
                    (obs.continuous_obs_increment(&X_REF, dt, &mut rng) - &h * dt) / dt.sqrt()
                }
                ObsMode::Discrete { .. } => obs.discrete_obs(&X_REF, &mut rng).unwrap() - &h,
            };
            samples.set_column(i, &e);
        }
        (empirical_cross_cov(&samples, &samples).unwrap(), r)
    }

    #[test]
    fn monte_carlo_noise_covariance() {
        for mode in [ObsMode::Continuous, ObsMode::Discrete { interval: 1.0 }] {
            let (c, r) = noise_cov_sample(mode);
            for k in 0..2 {
                assert!(((c[(k, k)] - r[(k, k)]) / r[(k, k)]).abs() < 0.05);
            }
            assert!(((c[(0, 1)] - r[(0, 1)]) / r[(0, 1)]).abs() < 0.05 * 4.0);
            assert!((&c - &r).amax() < 0.05 * r.amax());
        }
    }

    #[test]
    fn seeded_sequences_are_reproducible() {
        let obs = lorenz_obs(ObsMode::Continuous);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| obs.continuous_obs_increment(&X_REF, 0.001, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }
}
