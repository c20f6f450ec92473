//! Schrödinger-bridge coupling of an ensemble with itself.
//!
//! The Gaussian kernel `d_ij = exp(-|x_i - x_j|^2_Sigma / (2 alpha))`, with
//! `|x|^2_Sigma = x^T Sigma^{-1} x`, is scaled symmetrically to a doubly
//! stochastic matrix `diag(v) D diag(v)`. The coefficients
//!
//! ```text
//! mu_ij = (v_i d_ij v_j - delta_ij) / alpha
//! ```
//!
//! have zero row and column sums. Applied to the states they approximate the
//! score drift `Sigma grad log pi / 2`; applied to any other particle quantity
//! they approximate the action of the corresponding generator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TwinError};

/// Kernel entries are clamped from below so the scaling stays finite for
/// isolated particles.
pub const KERNEL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Coupling {
    kernel: DMatrix<f64>,
    scaling: DVector<f64>,
    alpha: f64,
    iterations: usize,
    residual: f64,
}

impl Coupling {
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn scaling(&self) -> &DVector<f64> {
        &self.scaling
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Final `max_i |v_i (D v)_i - 1|`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn size(&self) -> usize {
        self.scaling.len()
    }

    pub fn mu(&self, i: usize, j: usize) -> f64 {
        let delta = if i == j { 1.0 } else { 0.0 };
        (self.scaling[i] * self.kernel[(i, j)] * self.scaling[j] - delta) / self.alpha
    }

    /// Dense `mu` matrix. The coupling itself only stores `D` and `v`.
    pub fn mu_matrix(&self) -> DMatrix<f64> {
        let m = self.size();
        DMatrix::from_fn(m, m, |i, j| self.mu(i, j))
    }

    /// Column `i` of the result is `sum_j mu_ij values_j`.
    pub fn apply(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.size();
        if values.ncols() != m {
            return Err(TwinError::Dimension(format!(
                "coupling over {m} particles applied to {} values",
                values.ncols()
            )));
        }
        let mut weighted = values.clone();
        for (j, mut col) in weighted.column_iter_mut().enumerate() {
            col *= self.scaling[j];
        }
        // kernel is symmetric, so W D has columns sum_j d_ij v_j y_j
        let mut out = weighted * &self.kernel;
        for (i, mut col) in out.column_iter_mut().enumerate() {
            col *= self.scaling[i];
            col -= values.column(i);
            col /= self.alpha;
        }
        Ok(out)
    }
}

pub fn apply_coupling(coupling: &Coupling, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    coupling.apply(values)
}

/// Builds the coupling for the column ensemble `states` by the damped
/// fixed-point iteration `v <- sqrt(v / (D v))` started from `v = 1`.
pub fn sinkhorn_coupling(
    states: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    alpha: f64,
    opts: SinkhornOptions,
) -> Result<Coupling> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(TwinError::config("alpha", "must be a positive number"));
    }
    let d = states.nrows();
    if sigma.shape() != (d, d) {
        return Err(TwinError::Dimension(format!(
            "Sigma is {:?} but states have dimension {d}",
            sigma.shape()
        )));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| TwinError::config("sigma_digital", "must be positive definite"))?;
    let whitened = chol
        .l()
        .solve_lower_triangular(states)
        .ok_or_else(|| TwinError::config("sigma_digital", "must be positive definite"))?;

    let kernel = gaussian_kernel(&whitened, alpha);
    let (scaling, iterations, residual) = symmetric_scaling(&kernel, opts)?;
    Ok(Coupling {
        kernel,
        scaling,
        alpha,
        iterations,
        residual,
    })
}

fn gaussian_kernel(points: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let m = points.ncols();
    let d = points.nrows();
    let data = points.as_slice();
    let scale = -0.5 / alpha;
    let mut kernel = DMatrix::from_element(m, m, 1.0);
    for i in 0..m {
        let xi = &data[i * d..(i + 1) * d];
        for j in (i + 1)..m {
            let xj = &data[j * d..(j + 1) * d];
            let dist2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (scale * dist2).exp().max(KERNEL_FLOOR);
            kernel[(i, j)] = k;
            kernel[(j, i)] = k;
        }
    }
    kernel
}

fn symmetric_scaling(
    kernel: &DMatrix<f64>,
    opts: SinkhornOptions,
) -> Result<(DVector<f64>, usize, f64)> {
    let m = kernel.nrows();
    let mut v = DVector::from_element(m, 1.0);
    let mut dv = DVector::zeros(m);
    let mut iterations = 0;
    loop {
        dv.gemv(1.0, kernel, &v, 0.0);
        let residual = v
            .iter()
            .zip(dv.iter())
            .map(|(a, b)| (a * b - 1.0).abs())
            .fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(TwinError::SinkhornDiverged {
                iterations,
                residual,
            });
        }
        if residual <= opts.tol {
            return Ok((v, iterations, residual));
        }
        if iterations >= opts.max_iter {
            return Err(TwinError::SinkhornDiverged {
                iterations,
                residual,
            });
        }
        v.zip_apply(&dv, |vi, di| *vi = (*vi / di).sqrt());
        iterations += 1;
    }
}
