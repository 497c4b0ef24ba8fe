//! Symmetric positive-definite matrices and differentiable spectral functions.

mod eig;
mod spectral;

pub use eig::{eig_sym, jacobi_eigen, EigenPair, CONVERGENCE_TOL, MAX_SWEEPS};
pub use spectral::{
    condition_ratio, dk_matrix, spectral_apply, spectral_backward, spectral_backward_with_dk,
    DkMatrix, SpectralFn, DEFAULT_CLIP, DEFAULT_DEGENERACY_TOL,
};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A symmetric matrix intended to live on the SPD cone.
///
/// Construction symmetrizes the input exactly. Positive definiteness is not
/// checked here; spectral functions clip eigenvalues at [`DEFAULT_CLIP`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Mat);

impl SpdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m.symmetrized()))
    }

    pub fn identity(d: usize) -> Self {
        Self(Mat::identity(d))
    }

    pub fn from_diag(values: &[f64]) -> Self {
        Self(Mat::diag(values))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub(crate) fn check_dim(&self, other: &SpdMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for SpdMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}
