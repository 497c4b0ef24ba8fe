use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{log_uniform_spectrum, random_symmetric, seeded, spd_with_spectrum};
use crate::spd::{dk_matrix, eig_sym, spectral_backward_with_dk, SpdMatrix, SpectralFn, DEFAULT_CLIP, DEFAULT_DEGENERACY_TOL};

const BENCH_KAPPA: f64 = 100.0;
/// Relative gap inside each clustered eigenvalue pair, well below the
/// Taylor-branch threshold.
const CLUSTER_GAP: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub function: String,
    /// Off-diagonal eigenvalue pairs `d(d−1)/2`.
    pub pairs: usize,
    pub forward_us: f64,
    pub backward_us: f64,
    /// Taylor-branch hit fraction on well-separated spectra.
    pub p_branch: f64,
    /// Taylor-branch hit fraction on spectra made of near-equal pairs.
    pub p_branch_clustered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub trials: usize,
    pub rows: Vec<BenchRow>,
    /// `(dim, T_grad(log) / T_grad(sqrt))`.
    pub grad_time_ratio: Vec<(usize, f64)>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,function,pairs,forward_us,backward_us,p_branch,p_branch_clustered\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{:.3},{:.3},{:.6},{:.6}\n",
                r.dim, r.function, r.pairs, r.forward_us, r.backward_us, r.p_branch, r.p_branch_clustered
            );
        }
        out
    }
}

/// Spectrum of near-equal pairs `(λ, λ(1 + gap))`; odd `d` gets one
/// unpaired value.
pub fn clustered_spectrum<R: Rng>(rng: &mut R, d: usize, kappa: f64, gap: f64) -> Vec<f64> {
    let base = log_uniform_spectrum(rng, d.div_ceil(2), kappa);
    let mut out: Vec<f64> = base.iter().flat_map(|&l| [l * (1.0 + gap), l]).take(d).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

fn branch_fraction(c: &SpdMatrix, f: SpectralFn) -> Result<f64> {
    let eig = eig_sym(c)?.clipped(DEFAULT_CLIP);
    Ok(dk_matrix(&eig.values, f, DEFAULT_DEGENERACY_TOL)?.branch_fraction())
}

fn bench_one(dim: usize, f: SpectralFn, trials: usize, seed: u64) -> Result<BenchRow> {
    let mut rng = seeded(seed ^ ((dim as u64) << 8));
    let (mut fwd, mut bwd, mut p, mut pc) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..trials {
        let spectrum = log_uniform_spectrum(&mut rng, dim, BENCH_KAPPA);
        let c = spd_with_spectrum(&mut rng, &spectrum);
        let upstream = random_symmetric(&mut rng, dim);

        let t = Instant::now();
        let eig = eig_sym(&c)?.clipped(DEFAULT_CLIP);
        let out = eig.reconstruct_with(|l| f.value(l));
        fwd += t.elapsed().as_secs_f64();
        std::hint::black_box(&out);

        let t = Instant::now();
        let dk = dk_matrix(&eig.values, f, DEFAULT_DEGENERACY_TOL)?;
        let g = spectral_backward_with_dk(&eig, &dk, &upstream)?;
        bwd += t.elapsed().as_secs_f64();
        std::hint::black_box(&g);

        p += dk.branch_fraction();
        let spectrum = clustered_spectrum(&mut rng, dim, BENCH_KAPPA, CLUSTER_GAP);
        let clustered = spd_with_spectrum(&mut rng, &spectrum);
        pc += branch_fraction(&clustered, f)?;
    }
    let n = trials as f64;
    Ok(BenchRow {
        dim,
        function: f.name().into(),
        pairs: dim * (dim - 1) / 2,
        forward_us: fwd / n * 1e6,
        backward_us: bwd / n * 1e6,
        p_branch: p / n,
        p_branch_clustered: pc / n,
    })
}

/// Forward/backward timings and branch statistics for the square-root and
/// logarithm maps at each dimension.
pub fn cmd_bench(dims: &[usize], trials: usize, seed: u64) -> Result<BenchTable> {
    if let Some(&bad) = dims.iter().find(|&&d| d < 2) {
        return Err(Error::InvalidConfig(format!("bench dimension {bad} must be ≥ 2")));
    }
    if dims.is_empty() || trials == 0 {
        return Err(Error::InvalidConfig("bench needs at least one dimension and one trial".into()));
    }
    let mut rows = Vec::new();
    let mut grad_time_ratio = Vec::new();
    for &d in dims {
        let sqrt = bench_one(d, SpectralFn::Sqrt, trials, seed)?;
        let log = bench_one(d, SpectralFn::Log, trials, seed)?;
        grad_time_ratio.push((d, log.backward_us / sqrt.backward_us));
        rows.push(sqrt);
        rows.push(log);
    }
    Ok(BenchTable { trials, rows, grad_time_ratio })
}
