//! Bures–Wasserstein and Log-Euclidean geometry on the SPD cone.

use serde::{Deserialize, Serialize};

use crate::embed::{embed, EmbeddingKind};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::spd::{eig_sym, jacobi_eigen, spectral_apply, SpdMatrix, SpectralFn, DEFAULT_CLIP, MAX_SWEEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    BuresWasserstein,
    LogEuclidean,
    Frobenius,
}

pub fn distance(kind: DistanceKind, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    match kind {
        DistanceKind::BuresWasserstein => bw_distance(a, b),
        DistanceKind::LogEuclidean => logeuclidean_distance(a, b),
        DistanceKind::Frobenius => {
            a.check_dim(b)?;
            Ok(a.as_mat().sub(b.as_mat()).frobenius())
        }
    }
}

pub(crate) fn sqrtm(c: &SpdMatrix) -> Result<Mat> {
    spectral_apply(c, SpectralFn::Sqrt, DEFAULT_CLIP)
}

/// `tr((√A B √A)^{1/2})` given `√A`.
fn fidelity_trace(sqrt_a: &Mat, b: &SpdMatrix) -> Result<f64> {
    let m = sqrt_a.matmul(b.as_mat()).matmul(sqrt_a);
    let eig = jacobi_eigen(&m, MAX_SWEEPS)?;
    Ok(eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

/// `[tr A + tr B − 2 tr((√A B √A)^{1/2})]^{1/2}`, with the bracket clamped
/// at zero.
pub fn bw_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_dim(b)?;
    let sqrt_a = sqrtm(a)?;
    bw_distance_with_sqrt(&sqrt_a, a, b)
}

fn bw_distance_with_sqrt(sqrt_a: &Mat, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let scale = a.as_mat().trace() + b.as_mat().trace();
    let bracket = scale - 2.0 * fidelity_trace(sqrt_a, b)?;
    if bracket < 0.0 {
        if -bracket > 1e-9 * scale {
            log::warn!("negative BW bracket {bracket:e} (trace sum {scale:e}) clamped to zero");
        }
        return Ok(0.0);
    }
    Ok(bracket.sqrt())
}

/// `‖log A − log B‖_F`.
pub fn logeuclidean_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_dim(b)?;
    let la = spectral_apply(a, SpectralFn::Log, DEFAULT_CLIP)?;
    let lb = spectral_apply(b, SpectralFn::Log, DEFAULT_CLIP)?;
    Ok(la.sub(&lb).frobenius())
}

fn common_dim(cs: &[SpdMatrix]) -> Result<usize> {
    let first = cs
        .first()
        .ok_or_else(|| Error::InvalidSpec("empty matrix set".into()))?;
    for c in cs {
        first.check_dim(c)?;
    }
    Ok(first.dim())
}

/// `(1/n) Σ (√μ Cᵢ √μ)^{1/2}`.
fn fixed_point_map(sqrt_mu: &Mat, cs: &[SpdMatrix]) -> Result<Mat> {
    let d = sqrt_mu.rows();
    let mut acc = Mat::zeros(d, d);
    for c in cs {
        let inner = SpdMatrix::new(sqrt_mu.matmul(c.as_mat()).matmul(sqrt_mu))?;
        acc = acc.add(&sqrtm(&inner)?);
    }
    Ok(acc.scale(1.0 / cs.len() as f64))
}

/// Result of [`bw_barycenter_detailed`].
#[derive(Debug, Clone)]
pub struct Barycenter {
    pub mean: SpdMatrix,
    pub iterations: usize,
    /// `‖μ − (1/n)Σ(√μ Cᵢ √μ)^{1/2}‖_F / ‖μ‖_F` at the returned iterate.
    pub relative_residual: f64,
}

/// BW barycenter by fixed-point iteration on its defining equation, started
/// from the Euclidean mean.
pub fn bw_barycenter(cs: &[SpdMatrix], max_iter: usize, tol: f64) -> Result<SpdMatrix> {
    bw_barycenter_detailed(cs, max_iter, tol).map(|b| b.mean)
}

pub fn bw_barycenter_detailed(cs: &[SpdMatrix], max_iter: usize, tol: f64) -> Result<Barycenter> {
    let d = common_dim(cs)?;
    let mut sum = Mat::zeros(d, d);
    for c in cs {
        sum = sum.add(c.as_mat());
    }
    let mut mu = SpdMatrix::new(sum.scale(1.0 / cs.len() as f64))?;

    let mut residual = f64::INFINITY;
    for iteration in 0..=max_iter {
        let next = fixed_point_map(&sqrtm(&mu)?, cs)?;
        residual = next.sub(mu.as_mat()).frobenius() / mu.as_mat().frobenius();
        if residual <= tol {
            return Ok(Barycenter {
                mean: mu,
                iterations: iteration,
                relative_residual: residual,
            });
        }
        if iteration < max_iter {
            mu = SpdMatrix::new(next)?;
        }
    }
    Err(Error::BarycenterNoConvergence {
        iterations: max_iter,
        residual,
        last: mu.into_mat().into_vec(),
    })
}

/// Spread of a set around its BW barycenter, and how far the Euclidean mean
/// of square roots is from the barycenter's square root.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionReport {
    #[serde(skip)]
    pub barycenter: Option<SpdMatrix>,
    /// `maxᵢ d_BW(Cᵢ, μ) / ‖√μ‖_F`.
    pub epsilon: f64,
    /// `‖√μ − mean(√Cᵢ)‖_F`.
    pub sqrt_mean_gap: f64,
    /// `‖√μ‖_F`, for relative comparisons.
    pub sqrt_mean_norm: f64,
}

pub fn dispersion_report(cs: &[SpdMatrix]) -> Result<DispersionReport> {
    if cs.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "dispersion needs at least 2 matrices, got {}",
            cs.len()
        )));
    }
    let d = common_dim(cs)?;
    let mu = bw_barycenter(cs, 200, 1e-10)?;
    let sqrt_mu = sqrtm(&mu)?;
    let norm = sqrt_mu.frobenius();

    let mut max_dist = 0.0_f64;
    let mut mean_sqrt = Mat::zeros(d, d);
    for c in cs {
        max_dist = max_dist.max(bw_distance(c, &mu)?);
        mean_sqrt = mean_sqrt.add(&sqrtm(c)?);
    }
    let mean_sqrt = mean_sqrt.scale(1.0 / cs.len() as f64);
    Ok(DispersionReport {
        barycenter: Some(mu),
        epsilon: max_dist / norm,
        sqrt_mean_gap: sqrt_mu.sub(&mean_sqrt).frobenius(),
        sqrt_mean_norm: norm,
    })
}

/// Outcome of checking the embedding distortion inequalities on one pair.
#[derive(Debug, Clone, Serialize)]
pub struct DistortionRecord {
    pub token_distance: f64,
    pub bw_distance: f64,
    pub sqrt_distance: f64,
    /// `token ≥ d_BW / √(2(κ+1))`.
    pub lower_ok: bool,
    /// `token ≤ ‖√A − √B‖_F` (norm-equivalence upper side).
    pub upper_ok: bool,
    /// `token ≥ ‖√A − √B‖_F / √2` (norm-equivalence lower side).
    pub sandwich_lower_ok: bool,
    /// `d_BW ≤ ‖√A − √B‖_F`.
    pub procrustes_ok: bool,
    /// `‖√A − √B‖_F² ≤ ‖A − B‖_tr`.
    pub powers_stormer_ok: bool,
    /// `‖√A − √B‖_F ≤ ‖A − B‖_F / (2√λ_min)`.
    pub lipschitz_ok: bool,
    /// `token / d_BW`, defined as 1 when both vanish.
    pub ratio: f64,
}

impl DistortionRecord {
    pub fn all_ok(&self) -> bool {
        self.lower_ok
            && self.upper_ok
            && self.sandwich_lower_ok
            && self.procrustes_ok
            && self.powers_stormer_ok
            && self.lipschitz_ok
    }
}

pub fn distortion_check(a: &SpdMatrix, b: &SpdMatrix, kappa_bound: f64) -> Result<DistortionRecord> {
    a.check_dim(b)?;
    let sqrt_a = sqrtm(a)?;
    let sqrt_b = sqrtm(b)?;
    let ta = embed(a, EmbeddingKind::Bwspd)?;
    let tb = embed(b, EmbeddingKind::Bwspd)?;
    let token_distance = ta
        .values
        .iter()
        .zip(&tb.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let bw = bw_distance_with_sqrt(&sqrt_a, a, b)?;
    let sqrt_distance = sqrt_a.sub(&sqrt_b).frobenius();

    let diff = a.as_mat().sub(b.as_mat());
    let trace_norm: f64 = jacobi_eigen(&diff, MAX_SWEEPS)?
        .values
        .iter()
        .map(|v| v.abs())
        .sum();
    let lambda_min = eig_sym(a)?
        .values
        .iter()
        .chain(eig_sym(b)?.values.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(DEFAULT_CLIP);

    let slack = |x: f64| 1e-9 * (1.0 + x.abs());
    let lower = bw / (2.0 * (kappa_bound + 1.0)).sqrt();
    let ratio = if bw == 0.0 && token_distance == 0.0 {
        1.0
    } else {
        token_distance / bw
    };
    Ok(DistortionRecord {
        token_distance,
        bw_distance: bw,
        sqrt_distance,
        lower_ok: token_distance >= lower - 1e-9,
        upper_ok: token_distance <= sqrt_distance + slack(sqrt_distance),
        sandwich_lower_ok: token_distance >= sqrt_distance / 2f64.sqrt() - slack(sqrt_distance),
        procrustes_ok: bw <= sqrt_distance + slack(sqrt_distance),
        powers_stormer_ok: sqrt_distance * sqrt_distance <= trace_norm + slack(trace_norm),
        lipschitz_ok: sqrt_distance
            <= diff.frobenius() / (2.0 * lambda_min.sqrt()) + slack(sqrt_distance),
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::embed::unvech_slice;
    use crate::random::{random_orthogonal, random_spd, seeded, spd_with_spectrum};
    use rand::Rng;

    #[test]
    fn self_distance_zero() {
        let mut rng = seeded(2);
        let a = random_spd(&mut rng, 6, 50.0);
        for kind in [DistanceKind::BuresWasserstein, DistanceKind::LogEuclidean, DistanceKind::Frobenius] {
            assert!(distance(kind, &a, &a).unwrap() < 1e-7);
        }
    }

    #[test]
    fn bw_hand_trace_formula() {
        // tr A + tr B − 2 tr(diag(2,2)) = 5 + 5 − 8 = 2
        let a = SpdMatrix::from_diag(&[4.0, 1.0]);
        let b = SpdMatrix::from_diag(&[1.0, 4.0]);
        assert!((bw_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bw_commuting_equals_sqrt_difference() {
        let mut rng = seeded(4);
        for d in [2, 5, 8] {
            let q = random_orthogonal(&mut rng, d);
            let la: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..20.0)).collect();
            let lb: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..20.0)).collect();
            let a = SpdMatrix::new(q.sandwich_diag(&la)).unwrap();
            let b = SpdMatrix::new(q.sandwich_diag(&lb)).unwrap();
            let want = sqrtm(&a).unwrap().sub(&sqrtm(&b).unwrap()).frobenius();
            assert!((bw_distance(&a, &b).unwrap() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn bw_symmetric() {
        let mut rng = seeded(8);
        let a = random_spd(&mut rng, 5, 30.0);
        let b = random_spd(&mut rng, 5, 30.0);
        let ab = bw_distance(&a, &b).unwrap();
        let ba = bw_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn dim_mismatch() {
        let a = SpdMatrix::identity(2);
        let b = SpdMatrix::identity(3);
        assert!(matches!(bw_distance(&a, &b), Err(Error::DimMismatch { .. })));
        assert!(matches!(logeuclidean_distance(&a, &b), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn logeuclidean_examples() {
        let i = SpdMatrix::identity(2);
        assert_eq!(logeuclidean_distance(&i, &i).unwrap(), 0.0);
        let e = SpdMatrix::from_diag(&[std::f64::consts::E, 1.0]);
        assert!((logeuclidean_distance(&e, &i).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logeuclidean_matches_token_route() {
        let mut rng = seeded(12);
        let a = random_spd(&mut rng, 5, 40.0);
        let b = random_spd(&mut rng, 5, 40.0);
        let ta = embed(&a, EmbeddingKind::LogEuclidean).unwrap();
        let tb = embed(&b, EmbeddingKind::LogEuclidean).unwrap();
        let diff: Vec<f64> = ta.values.iter().zip(&tb.values).map(|(x, y)| x - y).collect();
        let want = unvech_slice(5, &diff).frobenius();
        assert!((logeuclidean_distance(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn barycenter_identities() {
        let mut rng = seeded(6);
        let a = random_spd(&mut rng, 4, 20.0);
        let tol = 1e-10;
        let single = bw_barycenter(std::slice::from_ref(&a), 200, tol).unwrap();
        assert!(single.as_mat().sub(a.as_mat()).frobenius() <= 1e-9 * a.as_mat().frobenius());
        let dup = bw_barycenter(&[a.clone(), a.clone()], 200, tol).unwrap();
        assert!(dup.as_mat().sub(a.as_mat()).frobenius() <= 1e-9 * a.as_mat().frobenius());
    }

    #[test]
    fn barycenter_scalar_case() {
        // commuting: √μ = mean(√Cᵢ) = (2 + 4)/2
        let cs = [SpdMatrix::from_diag(&[4.0]), SpdMatrix::from_diag(&[16.0])];
        let mu = bw_barycenter(&cs, 200, 1e-12).unwrap();
        assert!((mu[(0, 0)] - 9.0).abs() < 1e-9);
    }

    #[test]
    fn barycenter_reports_non_convergence() {
        let mut rng = seeded(13);
        let cs: Vec<SpdMatrix> = (0..4).map(|_| random_spd(&mut rng, 3, 10.0)).collect();
        let err = bw_barycenter(&cs, 1, 1e-14).unwrap_err();
        match err {
            Error::BarycenterNoConvergence { last, .. } => assert_eq!(last.len(), 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dispersion_of_identical_set() {
        let mut rng = seeded(14);
        let a = random_spd(&mut rng, 4, 10.0);
        let r = dispersion_report(&[a.clone(), a.clone(), a]).unwrap();
        assert!(r.epsilon < 1e-8);
        assert!(r.sqrt_mean_gap < 1e-8);
    }

    #[test]
    fn dispersion_scalar_closed_form() {
        // μ = 1.5², ε = max(|1 − 1.5|, |2 − 1.5|) / 1.5
        let r = dispersion_report(&[SpdMatrix::from_diag(&[1.0]), SpdMatrix::from_diag(&[4.0])]).unwrap();
        assert!((r.barycenter.unwrap()[(0, 0)] - 2.25).abs() < 1e-9);
        assert!((r.epsilon - 1.0 / 3.0).abs() < 1e-9);
        assert!(r.sqrt_mean_gap < 1e-9);
    }

    #[test]
    fn dispersion_needs_two() {
        assert!(dispersion_report(&[SpdMatrix::identity(2)]).is_err());
    }

    #[test]
    fn distortion_equal_pair() {
        let a = SpdMatrix::from_diag(&[3.0, 2.0]);
        let r = distortion_check(&a, &a, 1.5).unwrap();
        assert!(r.all_ok());
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn distortion_commuting_bounds_are_tight() {
        // Diagonal pair: √A − √B diagonal, token distance equals d_BW.
        let a = SpdMatrix::from_diag(&[4.0, 1.0]);
        let b = SpdMatrix::from_diag(&[1.0, 9.0]);
        let r = distortion_check(&a, &b, 9.0).unwrap();
        assert!(r.all_ok());
        assert!((r.ratio - 1.0).abs() < 1e-12);

        // Shared eigenbasis [1,±1]/√2 with equal trace split: √A − √B has a
        // zero diagonal, so the ratio hits 1/√2.
        let q = Mat::from_rows(&[[1.0, 1.0], [1.0, -1.0]]).scale(std::f64::consts::FRAC_1_SQRT_2);
        let a = SpdMatrix::new(q.sandwich_diag(&[4.0, 1.0])).unwrap();
        let b = SpdMatrix::new(q.sandwich_diag(&[1.0, 4.0])).unwrap();
        let r = distortion_check(&a, &b, 4.0).unwrap();
        assert!(r.all_ok());
        assert!((r.ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn distortion_random_pairs() {
        let mut rng = seeded(99);
        for _ in 0..100 {
            let d = 4;
            let la: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random::<f64>() * 2.0)).collect();
            let lb: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random::<f64>() * 2.0)).collect();
            let a = spd_with_spectrum(&mut rng, &la);
            let b = spd_with_spectrum(&mut rng, &lb);
            let r = distortion_check(&a, &b, 100.0).unwrap();
            assert!(r.all_ok(), "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bw_is_a_symmetric_metric(seed in any::<u64>(), d in 1usize..8) {
            let mut rng = seeded(seed);
            let (a, b, c) = (random_spd(&mut rng, d, 50.0), random_spd(&mut rng, d, 50.0), random_spd(&mut rng, d, 50.0));
            let (ab, ba) = (bw_distance(&a, &b).unwrap(), bw_distance(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
            let (ac, cb) = (bw_distance(&a, &c).unwrap(), bw_distance(&c, &b).unwrap());
            prop_assert!(ab <= ac + cb + 1e-9);
        }

        #[test]
        fn distortion_bounds_hold(seed in any::<u64>(), d in 1usize..10, kappa in 1.0f64..100.0) {
            let mut rng = seeded(seed);
            let (a, b) = (random_spd(&mut rng, d, kappa), random_spd(&mut rng, d, kappa));
            let r = distortion_check(&a, &b, kappa).unwrap();
            prop_assert!(r.all_ok(), "{:?}", r);
        }
    }
}
