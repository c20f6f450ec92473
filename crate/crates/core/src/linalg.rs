//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Result, TwinError};

/// Relative tolerance used when deciding whether a symmetric matrix is PSD.
const PSD_TOL: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Symmetric square root via eigendecomposition. Tiny negative eigenvalues
/// from roundoff are clamped to zero; anything more negative is rejected.
pub fn sym_sqrt(m: &DMatrix<f64>, key: &str) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, 1e-12) {
        return Err(TwinError::config(key, "matrix is not symmetric"));
    }
    let eig = m.clone().symmetric_eigen();
    let scale = 1.0 + m.amax();
    if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL * scale) {
        return Err(TwinError::config(
            key,
            "matrix is not positive semidefinite",
        ));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

pub fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_diagonal_is_elementwise() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![4.0, 0.01]);
        let s = sym_sqrt(&m, "R").unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s[(1, 1)], 0.1, epsilon = 1e-14);
        assert_relative_eq!(s[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt(&m, "R").unwrap();
        assert!((&s * &s - &m).amax() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sym_sqrt(&m, "R").unwrap_err().is_config());
    }
}
