//! Nadaraya–Watson reconstruction of the state-to-co-state map `psi` from the
//! particle pairs `(X_i, P_i)`, and its one-sided finite-difference
//! Jacobian–vector product.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TwinError};
// exp of anything below this is zero in f64
const UNDERFLOW: f64 = -746.0;

#[derive(Debug, Clone, Copy)]
pub struct PsiEstimator<'a> {
    states: &'a DMatrix<f64>,
    costates: &'a DMatrix<f64>,
    bandwidth: f64,
}

impl<'a> PsiEstimator<'a> {
    pub fn new(
        states: &'a DMatrix<f64>,
        costates: &'a DMatrix<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(TwinError::config("delta", "bandwidth must be > 0"));
        }
        if states.shape() != costates.shape() || states.ncols() == 0 {
            return Err(TwinError::Dimension(format!(
                "regression needs matching nonempty snapshots, got {:?} and {:?}",
                states.shape(),
                costates.shape()
            )));
        }
        Ok(PsiEstimator {
            states,
            costates,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel-weighted average of the co-states with weights
    /// `exp(-|x - X_i|^2 / (2 delta))` (Euclidean norm).
    pub fn estimate(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.states.nrows());
        let mut scratch = Vec::new();
        self.estimate_into(x, out.as_mut_slice(), &mut scratch);
        out
    }

    /// As [`PsiEstimator::estimate`], writing into `out` and reusing `scratch`.
    pub fn estimate_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        match self.states.nrows() {
            1 => self.weighted::<1>(x, out, scratch),
            2 => self.weighted::<2>(x, out, scratch),
            3 => self.weighted::<3>(x, out, scratch),
            _ => self.weighted::<0>(x, out, scratch),
        }
    }

    // `D == 0` means the dimension is only known at run time
    fn weighted<const D: usize>(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let d = if D == 0 { self.states.nrows() } else { D };
        let xs = self.states.as_slice();
        let ps = self.costates.as_slice();
        let x = &x[..d];
        scratch.clear();
        scratch.extend(xs.chunks_exact(d).map(|xi| {
            let mut acc = 0.0;
            for k in 0..d {
                let diff = xi[k] - x[k];
                acc += diff * diff;
            }
            acc
        }));
        // shift by the largest exponent before exponentiating
        let min_d2 = scratch.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = -0.5 / self.bandwidth;
        let out = &mut out[..d];
        out.fill(0.0);
        let mut total = 0.0;
        for (&d2, pi) in scratch.iter().zip(ps.chunks_exact(d)) {
            let arg = scale * (d2 - min_d2);
            if !(arg > UNDERFLOW) {
                continue;
            }
            let w = arg.exp();
            total += w;
            for k in 0..d {
                out[k] += w * pi[k];
            }
        }
        if total > 0.0 && total.is_finite() {
            out.iter_mut().for_each(|v| *v /= total);
        } else {
            // non-finite query: fall back to the nearest particle
            let nearest = scratch
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_nan())
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            out.copy_from_slice(&ps[nearest * d..(nearest + 1) * d]);
        }
    }

    /// `(psi(x + h d) - psi(x)) / h`.
    pub fn jacvec(&self, x: &[f64], direction: &[f64], h: f64) -> DVector<f64> {
        let base = self.estimate(x);
        self.jacvec_from(&base, x, direction, h)
    }

    /// As [`PsiEstimator::jacvec`] with `psi(x)` already evaluated.
    pub fn jacvec_from(
        &self,
        base: &DVector<f64>,
        x: &[f64],
        direction: &[f64],
        h: f64,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(base.len());
        let mut shifted = Vec::new();
        let mut scratch = Vec::new();
        self.jacvec_into(
            base.as_slice(),
            x,
            direction,
            h,
            out.as_mut_slice(),
            &mut shifted,
            &mut scratch,
        );
        out
    }

    /// Allocation-free [`PsiEstimator::jacvec_from`].
    #[allow(clippy::too_many_arguments)]
    pub fn jacvec_into(
        &self,
        base: &[f64],
        x: &[f64],
        direction: &[f64],
        h: f64,
        out: &mut [f64],
        shifted: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        debug_assert!(h > 0.0);
        shifted.clear();
        shifted.extend(x.iter().zip(direction).map(|(a, b)| a + h * b));
        self.estimate_into(shifted, out, scratch);
        for (o, b) in out.iter_mut().zip(base) {
            *o = (*o - b) / h;
        }
    }
}

pub fn nw_estimate(estimator: &PsiEstimator<'_>, x: &[f64]) -> DVector<f64> {
    estimator.estimate(x)
}

pub fn nw_jacvec(
    estimator: &PsiEstimator<'_>,
    x: &[f64],
    direction: &[f64],
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(TwinError::config(
            "fd_step",
            "finite-difference step must be > 0",
        ));
    }
    Ok(estimator.jacvec(x, direction, h))
}
