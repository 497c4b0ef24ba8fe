//! Cyclic Jacobi eigendecomposition for symmetric matrices.

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::SpdMatrix;

/// Default sweep limit for [`eig_sym`].
pub const MAX_SWEEPS: usize = 64;

/// Relative off-diagonal Frobenius norm at which the sweeps stop.
pub const CONVERGENCE_TOL: f64 = 1e-12;

/// Orthonormal eigenvectors (columns of `vectors`) with eigenvalues sorted
/// in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub vectors: Mat,
    pub values: Vec<f64>,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        self.vectors.sandwich_diag(&mapped)
    }

    pub fn reconstruct(&self) -> Mat {
        self.vectors.sandwich_diag(&self.values)
    }

    /// Copy with every eigenvalue raised to at least `floor`.
    pub fn clipped(&self, floor: f64) -> EigenPair {
        EigenPair {
            vectors: self.vectors.clone(),
            values: self.values.iter().map(|&l| l.max(floor)).collect(),
        }
    }
}

/// Eigendecomposition of a symmetric matrix with the default sweep limit.
pub fn eig_sym(c: &SpdMatrix) -> Result<EigenPair> {
    jacobi_eigen(c.as_mat(), MAX_SWEEPS)
}

/// Cyclic Jacobi on an arbitrary symmetric matrix.
///
/// Rotations sweep the strict upper triangle row by row. Each sweep ends
/// with a convergence check on the off-diagonal Frobenius norm relative to
/// `‖A‖_F`. The result is sorted descending and each eigenvector is signed
/// so that its largest-magnitude component is positive (first such index on
/// ties), which makes the output a deterministic function of the input.
pub fn jacobi_eigen(a: &Mat, max_sweeps: usize) -> Result<EigenPair> {
    if !a.is_square() {
        return Err(Error::DimMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }

    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Mat::identity(n);
    let target = CONVERGENCE_TOL * a.frobenius();

    let mut converged = off_diagonal_norm(&m) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&m) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            off_norm: off_diagonal_norm(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the sweep order for exactly equal eigenvalues.
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));

    let values: Vec<f64> = order.iter().map(|&k| m[(k, k)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[(r, k)].abs() > v[(pivot, k)].abs() {
                pivot = r;
            }
        }
        let sign = if v[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = sign * v[(r, k)];
        }
    }
    Ok(EigenPair { vectors, values })
}

fn off_diagonal_norm(m: &Mat) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `m[p][q]`, accumulated into `v`.
fn rotate(m: &mut Mat, v: &mut Mat, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::random::{random_spd, seeded};

    fn orthogonality_error(v: &Mat) -> f64 {
        v.transpose().matmul(v).sub(&Mat::identity(v.rows())).max_abs()
    }

    #[test]
    fn identity_three() {
        let e = eig_sym(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(e.vectors, Mat::identity(3));
    }

    #[test]
    fn diagonal_is_signed_permutation() {
        let c = SpdMatrix::new(Mat::diag(&[1.0, 4.0])).unwrap();
        let e = eig_sym(&c).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vectors, Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn two_by_two_matches_characteristic_roots() {
        // λ² − 4λ + 3 = 0
        let (tr, det) = (4.0_f64, 3.0_f64);
        let disc = (tr * tr - 4.0 * det).sqrt();
        let roots = [(tr + disc) / 2.0, (tr - disc) / 2.0];
        let c = SpdMatrix::new(Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]])).unwrap();
        let e = eig_sym(&c).unwrap();
        for (got, want) in e.values.iter().zip(roots) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // Largest component positive: both entries of the first vector tie, so
        // the first one decides.
        assert!((e.vectors[(0, 0)] - r).abs() < 1e-15);
        assert!((e.vectors[(1, 0)] - r).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Mat::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]);
        assert!(matches!(jacobi_eigen(&m, MAX_SWEEPS), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn no_convergence_with_zero_sweeps() {
        let m = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!(matches!(jacobi_eigen(&m, 0), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        let mut rng = seeded(7);
        for d in [2, 3, 5, 8, 22, 56] {
            let c = random_spd(&mut rng, d, 1e4);
            let e = eig_sym(&c).unwrap();
            assert!(orthogonality_error(&e.vectors) <= 1e-10);
            let err = e.reconstruct().sub(c.as_mat()).frobenius();
            assert!(err <= 1e-9 * c.as_mat().frobenius(), "d={d} err={err}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = seeded(11);
        let c = random_spd(&mut rng, 12, 100.0);
        let a = eig_sym(&c).unwrap();
        let b = eig_sym(&c).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs(seed in any::<u64>(), d in 1usize..16) {
            let c = random_spd(&mut seeded(seed), d, 1e4);
            let e = eig_sym(&c).unwrap();
            prop_assert!(e.reconstruct().sub(c.as_mat()).max_abs() <= 1e-10 * c.as_mat().max_abs());
            prop_assert!(orthogonality_error(&e.vectors) <= 1e-12);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
