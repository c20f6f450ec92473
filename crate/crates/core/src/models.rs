//! Controlled dynamical systems `dX = (b(X) + G(X) U) dt + Sigma^{1/2} dB`
//! together with their running costs.

use nalgebra::{DMatrix, DVector};

/// Drift, control matrix, running cost and diffusion of one controlled system,
/// plus the derivatives the co-state dynamics need.
pub trait ControlledModel: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn drift(&self, x: &[f64]) -> DVector<f64>;
    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    /// `G(x)`, a `d_x x d_u` matrix.
    fn control_matrix(&self, x: &[f64]) -> DMatrix<f64>;
    /// `D_x (b(x) + G(x) u)`.
    fn controlled_drift_jacobian(&self, x: &[f64], u: &DVector<f64>) -> DMatrix<f64>;

    fn running_cost(&self, x: &[f64]) -> f64;
    fn cost_gradient(&self, x: &[f64]) -> DVector<f64>;

    fn diffusion(&self) -> &DMatrix<f64>;

    /// `b(x) + G(x) u`.
    fn controlled_drift(&self, x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.control_matrix(x) * u
    }
}

/// Lorenz-63 with the control acting on the first component and the one-sided
/// cost `(rho/2) min(x, 0)^2` penalizing negative `x`.
#[derive(Debug, Clone)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub r: f64,
    pub b: f64,
    pub rho: f64,
    diffusion: DMatrix<f64>,
}

impl Lorenz63 {
    pub fn new(sigma: f64, r: f64, b: f64, rho: f64, diffusion: DMatrix<f64>) -> Self {
        assert_eq!(diffusion.shape(), (3, 3), "Lorenz-63 diffusion must be 3x3");
        Lorenz63 {
            sigma,
            r,
            b,
            rho,
            diffusion,
        }
    }
}

impl ControlledModel for Lorenz63 {
    fn name(&self) -> &str {
        "lorenz63"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64]) -> DVector<f64> {
        let (x1, y, z) = (x[0], x[1], x[2]);
        DVector::from_column_slice(&[
            self.sigma * (y - x1),
            -x1 * z + self.r * x1 - y,
            x1 * y - self.b * z,
        ])
    }

    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (x1, y, z) = (x[0], x[1], x[2]);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -self.sigma,
                self.sigma,
                0.0,
                self.r - z,
                -1.0,
                -x1,
                y,
                x1,
                -self.b,
            ],
        )
    }

    fn control_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])
    }

    fn controlled_drift_jacobian(&self, x: &[f64], _u: &DVector<f64>) -> DMatrix<f64> {
        // G is constant
        self.drift_jacobian(x)
    }

    fn running_cost(&self, x: &[f64]) -> f64 {
        let neg = x[0].min(0.0);
        0.5 * self.rho * neg * neg
    }

    fn cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        // At the kink x = 0 this picks the one-sided value 0.
        let g = if x[0] < 0.0 { self.rho * x[0] } else { 0.0 };
        DVector::from_column_slice(&[g, 0.0, 0.0])
    }

    fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }
}

/// Inverted pendulum with friction. State `(theta, v)`; the control enters as
/// `cos(theta) u` in the velocity equation. The cost pulls towards the upright
/// equilibrium `(pi, 0)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub friction: f64,
    pub rho: f64,
    diffusion: DMatrix<f64>,
}

impl Pendulum {
    pub fn new(friction: f64, rho: f64, diffusion: DMatrix<f64>) -> Self {
        assert_eq!(diffusion.shape(), (2, 2), "pendulum diffusion must be 2x2");
        Pendulum {
            friction,
            rho,
            diffusion,
        }
    }
}

impl ControlledModel for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64]) -> DVector<f64> {
        let (theta, v) = (x[0], x[1]);
        DVector::from_column_slice(&[v, -theta.sin() - self.friction * v])
    }

    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -x[0].cos(), -self.friction])
    }

    fn control_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, x[0].cos()])
    }

    fn controlled_drift_jacobian(&self, x: &[f64], u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.drift_jacobian(x);
        j[(1, 0)] -= x[0].sin() * u[0];
        j
    }

    fn running_cost(&self, x: &[f64]) -> f64 {
        let dtheta = x[0] - std::f64::consts::PI;
        0.5 * self.rho * (dtheta * dtheta + x[1] * x[1])
    }

    fn cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[self.rho * (x[0] - std::f64::consts::PI), self.rho * x[1]])
    }

    fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }
}

/// Scalar linear system `dx = (a x + g u) dt + sqrt(s) dB` with cost `(rho/2) x^2`.
/// Used by the filter oracles and smoke tests.
#[derive(Debug, Clone)]
pub struct ScalarLinear {
    pub a: f64,
    pub g: f64,
    pub rho: f64,
    diffusion: DMatrix<f64>,
}

impl ScalarLinear {
    pub fn new(a: f64, g: f64, rho: f64, diffusion: f64) -> Self {
        ScalarLinear {
            a,
            g,
            rho,
            diffusion: DMatrix::from_element(1, 1, diffusion),
        }
    }
}

impl ControlledModel for ScalarLinear {
    fn name(&self) -> &str {
        "scalar_linear"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.a * x[0])
    }

    fn drift_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }

    fn control_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.g)
    }

    fn controlled_drift_jacobian(&self, x: &[f64], _u: &DVector<f64>) -> DMatrix<f64> {
        self.drift_jacobian(x)
    }

    fn running_cost(&self, x: &[f64]) -> f64 {
        0.5 * self.rho * x[0] * x[0]
    }

    fn cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.rho * x[0])
    }

    fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn numeric_jacobian<F>(f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = x.len();
    let mut probe = x.to_vec();
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        columns.push((plus - minus) / (2.0 * h));
    }
    let m = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |r, c| columns[c][r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn lorenz() -> Lorenz63 {
        Lorenz63::new(10.0, 28.0, 8.0 / 3.0, 5000.0, DMatrix::identity(3, 3) * 0.5)
    }

    fn pendulum() -> Pendulum {
        Pendulum::new(2.0, 500.0, DMatrix::identity(2, 2) * 0.1)
    }

    #[test]
    fn lorenz_drift_at_reference_point() {
        let x = [7.8590, 7.1136, 27.2293];
        let b = lorenz().drift(&x);
        // evaluated by hand from the component formulas
        assert_relative_eq!(b[0], 10.0 * (7.1136 - 7.8590), epsilon = 1e-12);
        assert_relative_eq!(b[0], -7.454, epsilon = 1e-9);
        assert_relative_eq!(b[1], -1.056_668_7, epsilon = 1e-6);
        assert_relative_eq!(b[2], -16.705_684_3, epsilon = 1e-6);
    }

    #[test]
    fn lorenz_cost() {
        let m = lorenz();
        let g = m.cost_gradient(&[-2.0, 5.0, 5.0]);
        assert_eq!(g.as_slice(), &[-10000.0, 0.0, 0.0]);
        assert_eq!(m.running_cost(&[-2.0, 5.0, 5.0]), 10000.0);
        assert_eq!(m.running_cost(&[0.0, -3.0, 1.0]), 0.0);
        assert_eq!(m.running_cost(&[4.0, -3.0, 1.0]), 0.0);
        assert_eq!(m.cost_gradient(&[0.0, 1.0, 1.0])[0], 0.0);
    }

    #[test]
    fn pendulum_equilibria_and_cost() {
        let m = pendulum();
        let top = m.drift(&[PI, 0.0]);
        assert!(top.amax() < 1e-15);
        assert_eq!(m.drift(&[0.0, 0.0]).as_slice(), &[0.0, 0.0]);
        assert_eq!(m.running_cost(&[PI, 0.0]), 0.0);
        let g = m.control_matrix(&[PI / 2.0, 0.3]);
        assert_eq!(g[(0, 0)], 0.0);
        assert!(g[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn numeric_jacobian_linear_maps() {
        let id = numeric_jacobian(DVector::from_column_slice, &[0.3, -2.0, 7.0], 1e-4);
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-10);

        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let f = |x: &[f64]| &a * DVector::from_column_slice(x);
        let j = numeric_jacobian(f, &[1.0, 2.0, 3.0], 1e-3);
        assert!((j - &a).amax() < 1e-9);
    }

    fn check_jacobians(model: &dyn ControlledModel, lo: &[f64], hi: &[f64], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(l, h)| rng.random_range(*l..*h))
                .collect();
            let u = DVector::from_element(model.control_dim(), rng.random_range(-50.0..50.0));
            let fd = numeric_jacobian(|y| model.drift(y), &x, 1e-4);
            assert!((fd - model.drift_jacobian(&x)).amax() < 1e-5);
            let fd = numeric_jacobian(|y| model.controlled_drift(y, &u), &x, 1e-4);
            assert!((fd - model.controlled_drift_jacobian(&x, &u)).amax() < 1e-5);
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        check_jacobians(&lorenz(), &[-20.0, -25.0, 0.0], &[20.0, 25.0, 50.0], 1);
        check_jacobians(&pendulum(), &[-2.0 * PI, -5.0], &[2.0 * PI, 5.0], 2);
        check_jacobians(&ScalarLinear::new(-1.0, 1.0, 1.0, 1.0), &[-3.0], &[3.0], 3);
    }

    #[test]
    fn cost_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = lorenz();
        let p = pendulum();
        for _ in 0..100 {
            let mut x: [f64; 3] = [
                rng.random_range(-20.0..20.0),
                rng.random_range(-25.0..25.0),
                10.0,
            ];
            if x[0].abs() < 1e-3 {
                x[0] = 1.0;
            }
            let fd = numeric_jacobian(|y| DVector::from_element(1, l.running_cost(y)), &x, 1e-4);
            let g = l.cost_gradient(&x);
            for k in 0..3 {
                assert!((fd[(0, k)] - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()));
            }
            let y = [rng.random_range(-6.0..6.0), rng.random_range(-5.0..5.0)];
            let fd = numeric_jacobian(|z| DVector::from_element(1, p.running_cost(z)), &y, 1e-4);
            let g = p.cost_gradient(&y);
            for k in 0..2 {
                assert!((fd[(0, k)] - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()));
            }
        }
    }

    #[test]
    fn pendulum_control_jacobian_term() {
        let m = pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let u = DVector::from_element(1, rng.random_range(-10.0..10.0));
            let diff = m.controlled_drift_jacobian(&x, &u) - m.drift_jacobian(&x);
            assert_relative_eq!(diff[(1, 0)], -x[0].sin() * u[0], epsilon = 1e-12);
            assert_eq!(diff[(0, 0)], 0.0);
            assert_eq!(diff[(0, 1)], 0.0);
            assert_eq!(diff[(1, 1)], 0.0);
            let zero = DVector::zeros(1);
            assert_eq!(m.controlled_drift_jacobian(&x, &zero), m.drift_jacobian(&x));
        }
    }

    #[test]
    fn costs_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let x = [
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                3.0,
            ];
            assert!(lorenz().running_cost(&x) >= 0.0);
            assert!(pendulum().running_cost(&x[..2]) >= 0.0);
        }
    }
}
