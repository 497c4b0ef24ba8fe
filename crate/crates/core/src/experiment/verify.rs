use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{bandpass, estimate_covariance, multiband_tokens, perturb_sqrt, BandSpec};
use crate::embed::{embed, embed_backward, token_len, unembed, vech, EmbeddingKind};
use crate::error::{Error, Result};
use crate::geometry::{bw_barycenter_detailed, bw_distance, dispersion_report, distortion_check, sqrtm};
use crate::linalg::Mat;
use crate::nn::{AttentionMode, Mode, ModelConfig, Tape, Tensor, Transformer};
use crate::random::{gaussian_mat, log_uniform_spectrum, random_orthogonal, random_spd, random_symmetric, seeded};
use crate::spd::{
    condition_ratio, dk_matrix, eig_sym, spectral_apply, spectral_backward, SpdMatrix, SpectralFn, DEFAULT_CLIP,
    DEFAULT_DEGENERACY_TOL,
};

use super::bench::cmd_bench;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Relative gap below which the log divided difference uses its Taylor
    /// expansion. Setting it to 0 disables the branch, which the
    /// conditioning suite must detect.
    pub log_taylor_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { log_taylor_tol: DEFAULT_DEGENERACY_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

fn prop(name: &str, passed: bool, measured: &[(&str, f64)]) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        passed,
        measured: measured.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
    }
}

type SuiteFn = fn(&VerifyOptions) -> Result<Vec<PropertyResult>>;

/// Every suite, in execution order.
pub const SUITES: [(&str, SuiteFn); 16] = [
    ("eigen", suite_eigen),
    ("spectral", suite_spectral),
    ("vech", suite_vech),
    ("norm_equivalence", suite_norm_equivalence),
    ("injectivity", suite_injectivity),
    ("distortion_commuting", suite_distortion_commuting),
    ("distortion_general", suite_distortion_general),
    ("backward", suite_backward),
    ("conditioning", suite_conditioning),
    ("gradient_bounds", suite_gradient_bounds),
    ("speed_ratio", suite_speed_ratio),
    ("barycenter", suite_barycenter),
    ("barycenter_approximation", suite_barycenter_approximation),
    ("bn_embed", suite_bn_embed),
    ("attention", suite_attention),
    ("covariance", suite_covariance),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(n, _)| *n).collect()
}

/// Runs all suites, or only the one named by `filter`.
pub fn cmd_verify(filter: Option<&str>, options: &VerifyOptions) -> Result<VerifyReport> {
    let selected: Vec<_> = SUITES.iter().filter(|(n, _)| filter.is_none_or(|f| f == *n)).collect();
    if selected.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "unknown suite {:?}; expected one of {}",
            filter.unwrap_or_default(),
            suite_names().join(", ")
        )));
    }
    let suites = selected
        .into_iter()
        .map(|(name, f)| {
            let properties = f(options)?;
            log::info!("suite {name}: {} properties", properties.len());
            Ok(SuiteResult { name: name.to_string(), passed: properties.iter().all(|p| p.passed), properties })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport { passed: suites.iter().all(|s| s.passed), suites })
}

fn rel_err(a: &Mat, b: &Mat) -> f64 {
    a.sub(b).frobenius() / b.frobenius().max(f64::MIN_POSITIVE)
}

fn expm_sym(m: &Mat) -> Result<Mat> {
    Ok(crate::spd::jacobi_eigen(m, crate::spd::MAX_SWEEPS)?.reconstruct_with(f64::exp))
}

fn suite_eigen(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(101);
    let (mut orth, mut recon, mut sorted) = (0.0_f64, 0.0_f64, true);
    for d in [2, 5, 8, 22, 56] {
        for kappa in [10.0, 1e4] {
            for _ in 0..4 {
                let c = random_spd(&mut rng, d, kappa);
                let e = eig_sym(&c)?;
                orth = orth.max(e.vectors.transpose().matmul(&e.vectors).sub(&Mat::identity(d)).max_abs());
                recon = recon.max(rel_err(&e.reconstruct(), c.as_mat()));
                sorted &= e.values.windows(2).all(|w| w[0] >= w[1]);
            }
        }
    }
    Ok(vec![
        prop("orthogonality", orth <= 1e-10, &[("max_abs_error", orth)]),
        prop("reconstruction", recon <= 1e-9, &[("max_rel_error", recon)]),
        prop("descending", sorted, &[]),
    ])
}

fn suite_spectral(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(102);
    let (mut sq, mut lg) = (0.0_f64, 0.0_f64);
    for d in [2, 8, 22] {
        for _ in 0..10 {
            let c = random_spd(&mut rng, d, 1e4);
            let s = spectral_apply(&c, SpectralFn::Sqrt, DEFAULT_CLIP)?;
            sq = sq.max(rel_err(&s.matmul(&s), c.as_mat()));
            let l = spectral_apply(&c, SpectralFn::Log, DEFAULT_CLIP)?;
            lg = lg.max(rel_err(&expm_sym(&l)?, c.as_mat()));
        }
    }
    let log_id = spectral_apply(&SpdMatrix::identity(6), SpectralFn::Log, DEFAULT_CLIP)?.max_abs();
    Ok(vec![
        prop("sqrt_squared", sq <= 1e-8, &[("max_rel_error", sq)]),
        prop("exp_of_log", lg <= 1e-8, &[("max_rel_error", lg)]),
        prop("log_identity_zero", log_id == 0.0, &[("max_abs", log_id)]),
    ])
}

fn suite_vech(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let lengths = [(8, 36), (22, 253), (56, 1596)];
    let lengths_ok = lengths.iter().all(|&(d, n)| token_len(d) == n);
    let mut rng = seeded(103);
    let mut round_trip = true;
    for d in [1, 3, 8, 22] {
        let m = random_symmetric(&mut rng, d);
        round_trip &= crate::embed::unvech(&vech(&m)?) == m;
    }
    Ok(vec![
        prop("token_lengths", lengths_ok, &[("d8", 36.0), ("d22", 253.0), ("d56", 1596.0)]),
        prop("round_trip", round_trip, &[]),
    ])
}

fn suite_norm_equivalence(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(104);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..1000 {
        let m = random_symmetric(&mut rng, 2 + i % 21);
        let r = vech(&m)?.norm() / m.frobenius();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let diag = Mat::diag(&[1.0, -2.0, 3.0]);
    let offdiag = Mat::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 2.0, 0.0]]);
    let t_diag = vech(&diag)?.norm() / diag.frobenius();
    let t_off = vech(&offdiag)?.norm() / offdiag.frobenius();
    Ok(vec![
        prop(
            "sandwich",
            lo >= 1.0 / 2f64.sqrt() - 1e-12 && hi <= 1.0 + 1e-12,
            &[("min_ratio", lo), ("max_ratio", hi)],
        ),
        prop(
            "tight",
            (t_diag - 1.0).abs() < 1e-15 && (t_off - 0.5f64.sqrt()).abs() < 1e-15,
            &[("diagonal_ratio", t_diag), ("offdiagonal_ratio", t_off)],
        ),
    ])
}

fn suite_injectivity(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(105);
    let mut out = Vec::new();
    for kind in EmbeddingKind::ALL {
        let mut worst = 0.0_f64;
        for d in [2, 5, 8] {
            for _ in 0..20 {
                let c = random_spd(&mut rng, d, 100.0);
                let t = embed(&c, kind)?;
                worst = worst.max(rel_err(unembed(&t.values, d, kind)?.as_mat(), c.as_mat()));
            }
        }
        out.push(prop(&format!("left_inverse_{}", kind.name()), worst <= 1e-8, &[("max_rel_error", worst)]));
    }
    Ok(out)
}

/// Eigenvalues drawn independently log-uniform in `[1, kappa]`, without
/// pinned endpoints, so two draws almost surely differ.
fn free_spectrum<R: Rng>(rng: &mut R, d: usize, kappa: f64) -> Vec<f64> {
    (0..d).map(|_| kappa.powf(rng.random::<f64>())).collect()
}

fn suite_distortion_commuting(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(106);
    let (mut gap, mut upper_gap) = (0.0_f64, 0.0_f64);
    for d in [2, 5, 8, 22] {
        for _ in 0..50 {
            let q = random_orthogonal(&mut rng, d);
            let a = SpdMatrix::new(q.sandwich_diag(&free_spectrum(&mut rng, d, 100.0)))?;
            let b = SpdMatrix::new(q.sandwich_diag(&free_spectrum(&mut rng, d, 100.0)))?;
            let r = distortion_check(&a, &b, 100.0)?;
            gap = gap.max((r.bw_distance - r.sqrt_distance).abs());
            // diagonal commuting pairs make the token upper bound an equality
            let da = free_spectrum(&mut rng, d, 100.0);
            let db = free_spectrum(&mut rng, d, 100.0);
            let r = distortion_check(&SpdMatrix::from_diag(&da), &SpdMatrix::from_diag(&db), 100.0)?;
            upper_gap = upper_gap.max((r.token_distance - r.bw_distance).abs());
        }
    }
    Ok(vec![
        prop("bw_equals_sqrt_distance", gap <= 1e-8, &[("max_abs_gap", gap)]),
        prop("upper_bound_attained", upper_gap <= 1e-8, &[("max_abs_gap", upper_gap)]),
    ])
}

/// Largest over smallest eigenvalue across both matrices.
pub fn joint_condition(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let (ea, eb) = (eig_sym(a)?, eig_sym(b)?);
    let hi = ea.values[0].max(eb.values[0]);
    let lo = ea.values.last().unwrap().min(*eb.values.last().unwrap());
    Ok(hi / lo)
}

fn suite_distortion_general(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(107);
    let mut out = Vec::new();
    for d in [2, 5, 8, 22] {
        let mut violations = [0usize; 5];
        let mut min_lower_ratio = f64::INFINITY;
        for _ in 0..1000 {
            let kappa = 100f64.powf(rng.random::<f64>());
            let a = random_spd(&mut rng, d, kappa);
            let b = random_spd(&mut rng, d, kappa);
            let k = joint_condition(&a, &b)?;
            let r = distortion_check(&a, &b, k)?;
            for (v, ok) in violations.iter_mut().zip([
                r.lower_ok,
                r.upper_ok && r.sandwich_lower_ok,
                r.procrustes_ok,
                r.powers_stormer_ok,
                r.lipschitz_ok,
            ]) {
                *v += usize::from(!ok);
            }
            if r.bw_distance > 0.0 {
                min_lower_ratio = min_lower_ratio.min(r.token_distance * (2.0 * (k + 1.0)).sqrt() / r.bw_distance);
            }
        }
        let total: usize = violations.iter().sum();
        out.push(prop(
            &format!("bounds_d{d}"),
            total == 0,
            &[
                ("lower_violations", violations[0] as f64),
                ("sandwich_violations", violations[1] as f64),
                ("procrustes_violations", violations[2] as f64),
                ("powers_stormer_violations", violations[3] as f64),
                ("lipschitz_violations", violations[4] as f64),
                ("min_lower_slack_ratio", min_lower_ratio),
            ],
        ));
    }
    Ok(out)
}

fn fd_directional(c: &SpdMatrix, h: &Mat, step: f64, loss: &dyn Fn(&SpdMatrix) -> Result<f64>) -> Result<f64> {
    let plus = SpdMatrix::new(c.as_mat().add(&h.scale(step)))?;
    let minus = SpdMatrix::new(c.as_mat().sub(&h.scale(step)))?;
    Ok((loss(&plus)? - loss(&minus)?) / (2.0 * step))
}

fn suite_backward(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(108);
    let mut out = Vec::new();
    for kind in EmbeddingKind::ALL {
        let mut worst = 0.0_f64;
        for d in [2, 3, 5, 8] {
            for _ in 0..10 {
                let c = random_spd(&mut rng, d, 100.0);
                let w: Vec<f64> = (0..token_len(d)).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h = random_symmetric(&mut rng, d).scale(0.1);
                let loss = |m: &SpdMatrix| -> Result<f64> {
                    Ok(embed(m, kind)?.values.iter().zip(&w).map(|(x, y)| x * y).sum())
                };
                let g = embed_backward(&c, kind, &w)?;
                let analytic: f64 = g.as_slice().iter().zip(h.as_slice()).map(|(x, y)| x * y).sum();
                let fd = fd_directional(&c, &h, 1e-5, &loss)?;
                worst = worst.max((analytic - fd).abs() / (1e-4f64).max(1e-2 * analytic.abs()));
            }
        }
        out.push(prop(&format!("fd_{}", kind.name()), worst <= 1.0, &[("max_scaled_error", worst)]));
    }
    Ok(out)
}

fn suite_conditioning(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(109);
    let (mut sqrt_err, mut log_err) = (0.0_f64, 0.0_f64);
    for kappa in [10.0, 100.0, 1e4] {
        for d in [2, 5, 8, 22] {
            let values = log_uniform_spectrum(&mut rng, d, kappa);
            let k = condition_ratio(&values)?;
            let s = dk_matrix(&values, SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL)?.entry_range_ratio();
            let l = dk_matrix(&values, SpectralFn::Log, opts.log_taylor_tol)?.entry_range_ratio();
            sqrt_err = sqrt_err.max((s / k.sqrt() - 1.0).abs());
            log_err = log_err.max((l / k - 1.0).abs());
        }
    }
    let pair = [100.0, 1.0];
    let s100 = dk_matrix(&pair, SpectralFn::Sqrt, DEFAULT_DEGENERACY_TOL)?.entry_range_ratio();
    let l100 = dk_matrix(&pair, SpectralFn::Log, opts.log_taylor_tol)?.entry_range_ratio();

    // near-equal and equal eigenvalues against ln(1+δ)/(λδ)
    let mut degenerate_err = 0.0_f64;
    for &base in &[0.5, 1.0, 7.0] {
        for &rel in &[0.0, 1e-15, 1e-13, 1e-11] {
            let (li, lj) = (base, base * (1.0 + rel));
            let k = dk_matrix(&[lj, li], SpectralFn::Log, opts.log_taylor_tol)?.entries[(0, 1)];
            let delta = (lj - li) / li;
            let exact = if delta == 0.0 { 1.0 / li } else { delta.ln_1p() / delta / li };
            let err = (k - exact).abs() / exact;
            degenerate_err = degenerate_err.max(if err.is_finite() { err } else { f64::INFINITY });
        }
    }
    Ok(vec![
        prop("sqrt_ratio_is_sqrt_kappa", sqrt_err <= 1e-6, &[("max_rel_error", sqrt_err)]),
        prop("log_ratio_is_kappa", log_err <= 1e-6, &[("max_rel_error", log_err)]),
        prop(
            "kappa_100_pair",
            (s100 - 10.0).abs() <= 1e-9 * 10.0 && (l100 - 100.0).abs() <= 1e-9 * 100.0,
            &[("sqrt_ratio", s100), ("log_ratio", l100)],
        ),
        prop("log_near_degenerate", degenerate_err <= 1e-9, &[("max_rel_error", degenerate_err)]),
    ])
}

fn suite_gradient_bounds(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(110);
    let (mut sqrt_ratio, mut log_ratio, mut amplification) = (0.0_f64, 0.0_f64, 0.0_f64);
    for d in [3, 8, 22] {
        for _ in 0..20 {
            let c = random_spd(&mut rng, d, 1e3);
            let g = random_symmetric(&mut rng, d);
            let g = g.scale(1.0 / g.frobenius());
            let eig = eig_sym(&c)?;
            let lmin = *eig.values.last().unwrap();
            let s = spectral_backward(&eig, SpectralFn::Sqrt, &g)?.frobenius();
            let l = spectral_backward(&eig, SpectralFn::Log, &g)?.frobenius();
            sqrt_ratio = sqrt_ratio.max(s * 2.0 * lmin.sqrt());
            log_ratio = log_ratio.max(l * lmin);
            amplification = amplification.max(l / s);
        }
    }
    // the bound ratio (1/λ_min)/(1/(2√λ_min)) equals 2/√λ_min; with λ_min = 1
    // and κ = 1e3 the worst-case log/sqrt ratio is at most 2√κ
    Ok(vec![
        prop("sqrt_bound", sqrt_ratio <= 1.0 + 1e-9, &[("max_norm_over_bound", sqrt_ratio)]),
        prop("log_bound", log_ratio <= 1.0 + 1e-9, &[("max_norm_over_bound", log_ratio)]),
        prop(
            "log_over_sqrt",
            amplification <= 2.0 * 1e3f64.sqrt(),
            &[("max_log_over_sqrt", amplification)],
        ),
    ])
}

fn suite_speed_ratio(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let t = cmd_bench(&[8, 22], 10, 7)?;
    let row = |d: usize, f: &str| t.rows.iter().find(|r| r.dim == d && r.function == f).expect("bench row");
    let (l8, l22) = (row(8, "log"), row(22, "log"));
    let mut measured = vec![("pairs_d8", l8.pairs as f64), ("pairs_d22", l22.pairs as f64)];
    let ratios: Vec<(String, f64)> = t.grad_time_ratio.iter().map(|(d, r)| (format!("grad_time_ratio_d{d}"), *r)).collect();
    measured.extend(ratios.iter().map(|(k, v)| (k.as_str(), *v)));
    Ok(vec![
        prop("pair_counts", l8.pairs == 28 && l22.pairs == 231, &measured),
        prop(
            "branch_rate_rises_when_clustered",
            [l8, l22].iter().all(|r| r.p_branch_clustered > r.p_branch),
            &[
                ("p_branch_d22", l22.p_branch),
                ("p_branch_clustered_d22", l22.p_branch_clustered),
            ],
        ),
    ])
}

/// A batch of `n` matrices around a random anchor with dispersion `eps`.
pub fn clustered_batch<R: Rng>(rng: &mut R, d: usize, n: usize, eps: f64) -> Result<Vec<SpdMatrix>> {
    let mu = random_spd(rng, d, 10.0);
    let root = sqrtm(&mu)?;
    (0..n).map(|_| perturb_sqrt(rng, &root, eps)).collect()
}

/// `‖μ − (1/n) Σ (√μ Cᵢ √μ)^{1/2}‖_F / ‖μ‖_F` at the returned barycenter.
pub fn fixed_point_residual(cs: &[SpdMatrix], mu: &SpdMatrix) -> Result<f64> {
    let r = sqrtm(mu)?;
    let mut acc = Mat::zeros(mu.dim(), mu.dim());
    for c in cs {
        acc = acc.add(&sqrtm(&SpdMatrix::new(r.matmul(c.as_mat()).matmul(&r))?)?);
    }
    Ok(mu.as_mat().sub(&acc.scale(1.0 / cs.len() as f64)).frobenius() / mu.as_mat().frobenius())
}

fn suite_barycenter(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(111);
    let mut worst = 0.0_f64;
    for eps in [0.05, 0.2] {
        for _ in 0..3 {
            let cs = clustered_batch(&mut rng, 6, 32, eps)?;
            let mu = bw_barycenter_detailed(&cs, 200, 1e-12)?.mean;
            worst = worst.max(fixed_point_residual(&cs, &mu)?);
        }
    }
    let c = random_spd(&mut rng, 5, 50.0);
    let single = bw_barycenter_detailed(std::slice::from_ref(&c), 200, 1e-12)?.mean;
    let dup = bw_barycenter_detailed(&[c.clone(), c.clone(), c.clone()], 200, 1e-12)?.mean;
    let (e1, e2) = (rel_err(single.as_mat(), c.as_mat()), rel_err(dup.as_mat(), c.as_mat()));
    Ok(vec![
        prop("fixed_point_residual", worst <= 1e-10, &[("max_rel_residual", worst)]),
        prop("singleton_and_duplicates", e1 <= 1e-12 && e2 <= 1e-12, &[("singleton", e1), ("duplicates", e2)]),
    ])
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn suite_barycenter_approximation(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(112);
    let mut points = Vec::new();
    for eps in [0.02, 0.05, 0.1, 0.15, 0.2] {
        for _ in 0..20 {
            let cs = clustered_batch(&mut rng, 4, 16, eps)?;
            let r = dispersion_report(&cs)?;
            points.push((eps, r.sqrt_mean_gap / r.sqrt_mean_norm));
        }
    }
    let slope = log_log_slope(&points);
    Ok(vec![prop("second_order_slope", (1.7..=2.3).contains(&slope), &[("slope", slope)])])
}

fn suite_bn_embed(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(113);
    let (rows, dim) = (64, 10);
    let x = gaussian_mat(&mut rng, rows, dim).scale(3.0).map(|v| v + 5.0);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![rows, dim], x.as_slice().to_vec()));
    let g = tape.leaf(Tensor::filled(vec![dim], 1.0));
    let b = tape.leaf(Tensor::zeros(vec![dim]));
    let (y, _, _) = tape.batch_norm(xv, g, b, 1e-5)?;
    let y = &tape.value(y).data;
    let (mut mean_err, mut var_err) = (0.0_f64, 0.0_f64);
    for j in 0..dim {
        let col: Vec<f64> = (0..rows).map(|i| y[i * dim + j]).collect();
        let m = col.iter().sum::<f64>() / rows as f64;
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / rows as f64;
        mean_err = mean_err.max(m.abs());
        var_err = var_err.max((v - 1.0).abs());
    }
    Ok(vec![prop(
        "standardizes_features",
        mean_err <= 1e-12 && var_err <= 1e-4,
        &[("max_abs_mean", mean_err), ("max_var_error", var_err)],
    )])
}

fn suite_attention(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(114);
    let d = 3;
    let mut cfg = ModelConfig { token_dim: token_len(d), d_model: 8, layers: 1, heads: 2, d_ff: 8, n_classes: 2, seq_len: 3, ..ModelConfig::default() };
    let mats: Vec<SpdMatrix> = (0..6).map(|_| random_spd(&mut rng, d, 20.0)).collect();
    let data: Vec<f64> = mats.iter().flat_map(|c| embed(c, EmbeddingKind::Bwspd).unwrap().values).collect();
    let tokens = Tensor::new(vec![2, 3, token_len(d)], data);

    let standard = Transformer::new(cfg.clone(), EmbeddingKind::Bwspd, 5)?.logits(&tokens)?;
    cfg.attention = AttentionMode::GeometricAware { alpha: 0.0 };
    let zero_alpha = Transformer::new(cfg.clone(), EmbeddingKind::Bwspd, 5)?.logits(&tokens)?;

    // with α = 1 the weights are softmax(−d_BW) over the raw tokens
    cfg.attention = AttentionMode::GeometricAware { alpha: 1.0 };
    let model = Transformer::new(cfg.clone(), EmbeddingKind::Bwspd, 5)?;
    let graph = model.forward_graph(&tokens, Mode::Eval, None)?;
    let w = graph.tape.attention_weights(graph.attention[0]).expect("attention node");
    let mut bias_err = 0.0_f64;
    for i in 0..3 {
        let row: Vec<f64> = (0..3).map(|j| (-bw_distance(&mats[i], &mats[j]).unwrap()).exp()).collect();
        let z: f64 = row.iter().sum();
        for j in 0..3 {
            bias_err = bias_err.max((w.weights[i * 3 + j] - row[j] / z).abs());
        }
    }

    cfg.seq_len = 1;
    let single = Tensor::new(vec![2, 1, token_len(d)], tokens.data[..2 * token_len(d)].to_vec());
    let model = Transformer::new(cfg, EmbeddingKind::Bwspd, 5)?;
    let graph = model.forward_graph(&single, Mode::Eval, None)?;
    let w1 = graph.tape.attention_weights(graph.attention[0]).expect("attention node");
    let trivial = w1.weights.iter().all(|&v| v == 1.0);
    Ok(vec![
        prop("alpha_zero_is_standard", standard == zero_alpha, &[]),
        prop("alpha_one_is_bw_softmax", bias_err <= 1e-6, &[("max_abs_error", bias_err)]),
        prop("single_token_weight_one", trivial, &[]),
    ])
}

fn suite_covariance(_: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(115);
    // mixing a white source gives covariance A Aᵀ in expectation
    let (c, t) = (4, 20_000);
    let a = gaussian_mat(&mut rng, c, c);
    let x = a.matmul(&gaussian_mat(&mut rng, c, t));
    let est = estimate_covariance(&x, 0.0)?;
    let expected = a.matmul(&a.transpose());
    let cov_err = rel_err(est.as_mat(), &expected);
    let shifted = x.map(|v| v + 3.0);
    let shift_err = rel_err(estimate_covariance(&shifted, 0.0)?.as_mat(), est.as_mat());

    let fs = 128.0;
    let n = 512;
    let sine = Mat::from_vec(
        2,
        n,
        (0..2 * n).map(|k| if k < n { (2.0 * PI * 6.0 * k as f64 / fs).sin() } else { 0.01 * rng.random_range(-1.0..1.0) }).collect(),
    );
    let bands = BandSpec::standard_triplet(fs)?;
    let toks = multiband_tokens(&sine, &bands, EmbeddingKind::Euclidean)?;
    let power: Vec<f64> = toks.iter().map(|t| t.values[0]).collect();
    let mu_band = bandpass(&sine, &bands[0])?;
    let pass_err = (0..n).map(|k| (mu_band[(0, k)] - sine[(0, k)]).abs()).fold(0.0, f64::max);
    Ok(vec![
        prop("sample_covariance", cov_err <= 0.05, &[("rel_error", cov_err)]),
        prop("mean_invariant", shift_err <= 1e-10, &[("rel_error", shift_err)]),
        prop(
            "band_tokens_localize",
            power[0] > 100.0 * power[1].max(power[2]) && pass_err <= 1e-9,
            &[("mu_power", power[0]), ("beta_power", power[1]), ("gamma_power", power[2]), ("passband_error", pass_err)],
        ),
    ])
}
