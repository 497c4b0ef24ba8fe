//! Spectral matrix functions `f(C) = V f(Λ) Vᵀ` and their reverse-mode
//! gradients through Daleckiĭ–Kreĭn divided-difference matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::{eig_sym, EigenPair, SpdMatrix};

/// Eigenvalue floor applied before both `f` and `f′`.
pub const DEFAULT_CLIP: f64 = 1e-12;

/// Relative eigenvalue gap below which the logarithm's divided difference
/// switches to its Taylor expansion.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpectralFn {
    Sqrt,
    Log,
    Identity,
}

impl SpectralFn {
    pub fn value(self, x: f64) -> f64 {
        match self {
            SpectralFn::Sqrt => x.sqrt(),
            SpectralFn::Log => x.ln(),
            SpectralFn::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SpectralFn::Sqrt => 0.5 / x.sqrt(),
            SpectralFn::Log => 1.0 / x,
            SpectralFn::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectralFn::Sqrt => "sqrt",
            SpectralFn::Log => "log",
            SpectralFn::Identity => "identity",
        }
    }
}

/// `V · diag(f(max(λᵢ, clip))) · Vᵀ`.
pub fn spectral_apply(c: &SpdMatrix, f: SpectralFn, clip: f64) -> Result<Mat> {
    let eig = eig_sym(c)?;
    Ok(eig.clipped(clip).reconstruct_with(|l| f.value(l)))
}

/// Daleckiĭ–Kreĭn matrix of divided differences, with `f′(λᵢ)` on the
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DkMatrix {
    pub entries: Mat,
    /// Off-diagonal pairs `i < j` that took the Taylor branch.
    pub taylor_hits: usize,
}

impl DkMatrix {
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    /// Number of off-diagonal pairs `i < j`.
    pub fn pair_count(&self) -> usize {
        let d = self.dim();
        d * d.saturating_sub(1) / 2
    }

    /// Fraction of off-diagonal pairs that hit the Taylor branch.
    pub fn branch_fraction(&self) -> f64 {
        match self.pair_count() {
            0 => 0.0,
            n => self.taylor_hits as f64 / n as f64,
        }
    }

    /// `max Kᵢⱼ / min Kᵢⱼ` over all entries.
    pub fn entry_range_ratio(&self) -> f64 {
        let s = self.entries.as_slice();
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        let min = s.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

pub fn dk_matrix(values: &[f64], f: SpectralFn, degeneracy_rel_tol: f64) -> Result<DkMatrix> {
    if let Some(&bad) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::DomainError { value: bad });
    }
    let d = values.len();
    let mut k = Mat::zeros(d, d);
    let mut taylor_hits = 0;

    match f {
        SpectralFn::Identity => {
            k.as_mut_slice().fill(1.0);
        }
        SpectralFn::Sqrt => {
            let roots: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
            for i in 0..d {
                for j in i..d {
                    let v = 1.0 / (roots[i] + roots[j]);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
        }
        SpectralFn::Log => {
            let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            for i in 0..d {
                k[(i, i)] = 1.0 / values[i];
                for j in (i + 1)..d {
                    let (li, lj) = (values[i], values[j]);
                    let v = if (li - lj).abs() < degeneracy_rel_tol * li.max(lj) {
                        taylor_hits += 1;
                        // ln λⱼ expanded about λᵢ to second order
                        1.0 / li - (lj - li) / (2.0 * li * li)
                    } else {
                        (logs[i] - logs[j]) / (li - lj)
                    };
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
        }
    }
    Ok(DkMatrix {
        entries: k,
        taylor_hits,
    })
}

/// Gradient of a scalar loss with respect to `C`, given the upstream
/// gradient `Ḡ = ∂L/∂f(C)` and the eigendecomposition from the forward pass.
///
/// Computes `V (K ⊙ (Vᵀ Ḡ V)) Vᵀ` with `Ḡ` symmetrized first. The diagonal
/// of `K` already carries `f′(λᵢ)`, so no separate diagonal term is added.
pub fn spectral_backward(eig: &EigenPair, f: SpectralFn, upstream: &Mat) -> Result<Mat> {
    let clipped = eig.clipped(DEFAULT_CLIP);
    let dk = dk_matrix(&clipped.values, f, DEFAULT_DEGENERACY_TOL)?;
    spectral_backward_with_dk(eig, &dk, upstream)
}

/// Backward sandwich with a precomputed DK matrix.
pub fn spectral_backward_with_dk(eig: &EigenPair, dk: &DkMatrix, upstream: &Mat) -> Result<Mat> {
    let d = eig.dim();
    if upstream.rows() != d || upstream.cols() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: upstream.rows(),
        });
    }
    if dk.dim() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: dk.dim(),
        });
    }
    let v = &eig.vectors;
    let vt = v.transpose();
    let inner = vt.matmul(&upstream.symmetrized()).matmul(v);
    let weighted = dk.entries.hadamard(&inner);
    Ok(v.matmul(&weighted).matmul(&vt).symmetrized())
}

/// `λ_max / λ_min`.
pub fn condition_ratio(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DimMismatch {
            expected: 1,
            got: 0,
        });
    }
    if let Some(&bad) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::DomainError { value: bad });
    }
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::random::{random_spd, random_symmetric, seeded};

    fn rel_err(a: &Mat, b: &Mat) -> f64 {
        a.sub(b).frobenius() / b.frobenius().max(f64::MIN_POSITIVE)
    }

    /// Central differences of `tr(Ḡᵀ f(C))`, perturbing one entry at a time
    /// through the symmetrizing constructor.
    fn fd_gradient(c: &SpdMatrix, f: SpectralFn, g: &Mat) -> Mat {
        let d = c.dim();
        let h = 1e-5 * c.as_mat().frobenius();
        let loss = |m: &Mat| {
            let fc = spectral_apply(&SpdMatrix::new(m.clone()).unwrap(), f, DEFAULT_CLIP).unwrap();
            g.hadamard(&fc).as_slice().iter().sum::<f64>()
        };
        let mut out = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut plus = c.as_mat().clone();
                plus[(i, j)] += h;
                let mut minus = c.as_mat().clone();
                minus[(i, j)] -= h;
                out[(i, j)] = (loss(&plus) - loss(&minus)) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn sqrt_of_diagonal() {
        let c = SpdMatrix::from_diag(&[4.0, 9.0]);
        let r = spectral_apply(&c, SpectralFn::Sqrt, DEFAULT_CLIP).unwrap();
        assert_eq!(r, Mat::diag(&[2.0, 3.0]));
    }

    #[test]
    fn log_of_identity_is_zero() {
        let r = spectral_apply(&SpdMatrix::identity(4), SpectralFn::Log, DEFAULT_CLIP).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let c = SpdMatrix::new(Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]])).unwrap();
        let r = spectral_apply(&c, SpectralFn::Sqrt, DEFAULT_CLIP).unwrap();
        assert!(r.matmul(&r).sub(c.as_mat()).max_abs() < 1e-10);
    }

    #[test]
    fn clip_floor_applies() {
        let c = SpdMatrix::from_diag(&[1.0, 0.0]);
        let r = spectral_apply(&c, SpectralFn::Log, DEFAULT_CLIP).unwrap();
        assert_eq!(r[(1, 1)], DEFAULT_CLIP.ln());
    }

    #[test]
    fn reconstruction_identities() {
        let mut rng = seeded(3);
        for d in [2, 5, 8, 22] {
            for kappa in [1.0, 100.0, 1e4] {
                let c = random_spd(&mut rng, d, kappa);
                let s = spectral_apply(&c, SpectralFn::Sqrt, DEFAULT_CLIP).unwrap();
                assert!(rel_err(&s.matmul(&s), c.as_mat()) < 1e-8);
                let l = spectral_apply(&c, SpectralFn::Log, DEFAULT_CLIP).unwrap();
                let back = eig_sym(&SpdMatrix::new(l).unwrap())
                    .unwrap()
                    .reconstruct_with(f64::exp);
                assert!(rel_err(&back, c.as_mat()) < 1e-8);
            }
        }
    }

    #[test]
    fn dk_sqrt_two_by_two() {
        let k = dk_matrix(&[4.0, 1.0], SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL).unwrap();
        // direct divided difference (2 − 1)/(4 − 1)
        let off = (2.0 - 1.0) / (4.0 - 1.0);
        assert!((k.entries[(0, 1)] - off).abs() < 1e-15);
        assert_eq!(k.entries[(0, 0)], 0.25);
        assert_eq!(k.entries[(1, 1)], 0.5);
    }

    #[test]
    fn dk_identity_is_ones() {
        let k = dk_matrix(&[5.0, 3.0, 0.1], SpectralFn::Identity, DEFAULT_DEGENERACY_TOL).unwrap();
        assert!(k.entries.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dk_log_formula() {
        let e = std::f64::consts::E;
        let k = dk_matrix(&[e, 1.0], SpectralFn::Log, DEFAULT_DEGENERACY_TOL).unwrap();
        let want = 1.0 / (e - 1.0);
        assert!((k.entries[(0, 1)] - want).abs() < 1e-15);
        assert!((k.entries[(0, 1)] - 0.58198).abs() < 1e-5);
        assert_eq!(k.taylor_hits, 0);
    }

    #[test]
    fn dk_log_taylor_branch_near_degenerate() {
        let lam = 3.0;
        let values = [lam * (1.0 + 3e-13), lam];
        let k = dk_matrix(&values, SpectralFn::Log, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(k.taylor_hits, 1);
        // divided difference of ln at nearly equal points is 1/mean to O(δ²)
        let mean = 0.5 * (values[0] + values[1]);
        assert!((k.entries[(0, 1)] * mean - 1.0).abs() < 1e-12);
        let naive = dk_matrix(&values, SpectralFn::Log, 0.0).unwrap();
        assert!((naive.entries[(0, 1)] * mean - 1.0).abs() > 1e-9);
    }

    #[test]
    fn dk_rejects_non_positive() {
        assert!(matches!(
            dk_matrix(&[1.0, 0.0], SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn condition_ratio_examples() {
        assert_eq!(condition_ratio(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(condition_ratio(&[100.0, 1.0]).unwrap(), 100.0);
        let ks = dk_matrix(&[100.0, 1.0], SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL).unwrap();
        let kl = dk_matrix(&[100.0, 1.0], SpectralFn::Log, DEFAULT_DEGENERACY_TOL).unwrap();
        assert!((ks.entry_range_ratio() - 10.0).abs() < 1e-12);
        assert!((kl.entry_range_ratio() - 100.0).abs() < 1e-12);
        assert!(condition_ratio(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn sqrt_ratio_by_exhaustive_scan() {
        let k = dk_matrix(&[9.0, 4.0, 1.0], SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL).unwrap();
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for i in 0..3 {
            for j in 0..3 {
                lo = lo.min(k.entries[(i, j)]);
                hi = hi.max(k.entries[(i, j)]);
            }
        }
        assert!((hi / lo - 3.0).abs() < 1e-12);
        assert_eq!(condition_ratio(&[9.0, 4.0, 1.0]).unwrap(), 9.0);
    }

    #[test]
    fn backward_identity_returns_symmetrized_upstream() {
        let mut rng = seeded(5);
        let c = random_spd(&mut rng, 4, 10.0);
        let g = crate::random::gaussian_mat(&mut rng, 4, 4);
        let eig = eig_sym(&c).unwrap();
        let out = spectral_backward(&eig, SpectralFn::Identity, &g).unwrap();
        assert!(out.sub(&g.symmetrized()).max_abs() < 1e-13);
    }

    #[test]
    fn backward_sqrt_diagonal() {
        let c = SpdMatrix::from_diag(&[4.0, 9.0]);
        let eig = eig_sym(&c).unwrap();
        let out = spectral_backward(&eig, SpectralFn::Sqrt, &Mat::identity(2)).unwrap();
        assert!((out[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((out[(1, 1)] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn backward_dim_mismatch() {
        let eig = eig_sym(&SpdMatrix::identity(3)).unwrap();
        assert!(matches!(
            spectral_backward(&eig, SpectralFn::Log, &Mat::identity(2)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(17);
        for (d, kappa) in [(2, 3.0), (3, 50.0), (5, 10.0), (5, 1e3)] {
            for f in [SpectralFn::Sqrt, SpectralFn::Log] {
                let c = random_spd(&mut rng, d, kappa);
                let g = random_symmetric(&mut rng, d);
                let eig = eig_sym(&c).unwrap();
                let got = spectral_backward(&eig, f, &g).unwrap();
                let want = fd_gradient(&c, f, &g);
                let tol = (1e-3 * got.frobenius()).max(1e-5);
                assert!(got.sub(&want).max_abs() < tol, "d={d} f={f:?}");
            }
        }
    }

    #[test]
    fn gradient_norm_bounds() {
        let mut rng = seeded(23);
        for _ in 0..50 {
            let c = random_spd(&mut rng, 6, 1e3);
            let g = random_symmetric(&mut rng, 6);
            let g = g.scale(1.0 / g.frobenius());
            let eig = eig_sym(&c).unwrap();
            let lmin = *eig.values.last().unwrap();
            let s = spectral_backward(&eig, SpectralFn::Sqrt, &g).unwrap().frobenius();
            let l = spectral_backward(&eig, SpectralFn::Log, &g).unwrap().frobenius();
            assert!(s <= 1.05 / (2.0 * lmin.sqrt()));
            assert!(l <= 1.05 / lmin);
        }
    }

    proptest! {
        #[test]
        fn two_by_two_conditioning_law(lo in 1e-3f64..1e3, kappa in 1.0f64..1e4) {
            let values = [kappa * lo, lo];
            let sqrt = dk_matrix(&values, SpectralFn::Sqrt, 1e-8).unwrap().entry_range_ratio();
            let log = dk_matrix(&values, SpectralFn::Log, 1e-8).unwrap().entry_range_ratio();
            prop_assert!((sqrt / kappa.sqrt() - 1.0).abs() <= 1e-9);
            prop_assert!((log / kappa - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn dk_is_symmetric_and_positive(seed in any::<u64>(), d in 1usize..10) {
            let values = eig_sym(&random_spd(&mut seeded(seed), d, 1e3)).unwrap().values;
            for f in [SpectralFn::Sqrt, SpectralFn::Log, SpectralFn::Identity] {
                let dk = dk_matrix(&values, f, 1e-8).unwrap();
                for i in 0..d {
                    for j in 0..d {
                        prop_assert_eq!(dk.entries[(i, j)], dk.entries[(j, i)]);
                        prop_assert!(dk.entries[(i, j)] > 0.0);
                    }
                }
            }
        }
    }
}
