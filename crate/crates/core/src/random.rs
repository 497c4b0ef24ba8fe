//! Seeded random matrices for tests, diagnostics and synthetic data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Mat;
use crate::spd::SpdMatrix;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Mat::from_vec(rows, cols, data)
}

/// Symmetric matrix with standard-normal upper triangle.
pub fn random_symmetric<R: Rng>(rng: &mut R, d: usize) -> Mat {
    gaussian_mat(rng, d, d).symmetrized()
}

/// Haar-ish orthogonal matrix: modified Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Mat {
    let g = gaussian_mat(rng, d, d);
    let mut q = Mat::zeros(d, d);
    for j in 0..d {
        let mut col: Vec<f64> = (0..d).map(|i| g[(i, j)]).collect();
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| q[(i, k)] * col[i]).sum();
            for (i, c) in col.iter_mut().enumerate() {
                *c -= dot * q[(i, k)];
            }
        }
        let norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        for (i, c) in col.iter().enumerate() {
            q[(i, j)] = c / norm;
        }
    }
    q
}

/// SPD matrix `Q diag(values) Qᵀ` with a random orthogonal `Q`.
pub fn spd_with_spectrum<R: Rng>(rng: &mut R, values: &[f64]) -> SpdMatrix {
    let q = random_orthogonal(rng, values.len());
    SpdMatrix::new(q.sandwich_diag(values)).expect("finite by construction")
}

/// Eigenvalues log-uniform in `[1, kappa]` with both endpoints present
/// (for `d ≥ 2`), so the condition ratio is exactly `kappa` up to roundoff.
pub fn log_uniform_spectrum<R: Rng>(rng: &mut R, d: usize, kappa: f64) -> Vec<f64> {
    let mut values: Vec<f64> = (0..d)
        .map(|_| kappa.powf(rng.random::<f64>()))
        .collect();
    if d >= 2 {
        values[0] = kappa;
        values[d - 1] = 1.0;
    }
    values
}

pub fn random_spd<R: Rng>(rng: &mut R, d: usize, kappa: f64) -> SpdMatrix {
    let values = log_uniform_spectrum(rng, d, kappa);
    spd_with_spectrum(rng, &values)
}
