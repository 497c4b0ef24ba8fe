use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::spd::SpdMatrix;

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Multichannel segments with one label per trial. Each segment is a
/// `channels × samples` matrix.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub data: Vec<Mat>,
    pub labels: Vec<usize>,
}

impl SegmentBatch {
    pub fn new(sample_rate_hz: f64, data: Vec<Mat>, labels: Vec<usize>) -> Result<Self> {
        let first = data.first().ok_or_else(|| Error::InvalidSpec("empty segment batch".into()))?;
        let (channels, samples) = (first.rows(), first.cols());
        if samples < 2 {
            return Err(Error::TooFewSamples { samples });
        }
        if labels.len() != data.len() {
            return Err(Error::DimMismatch { expected: data.len(), got: labels.len() });
        }
        if let Some(bad) = data.iter().find(|m| m.rows() != channels || m.cols() != samples) {
            return Err(Error::ShapeMismatch {
                op: "segment_batch",
                detail: format!("{}×{} segment among {channels}×{samples}", bad.rows(), bad.cols()),
            });
        }
        Ok(Self { channels, samples, sample_rate_hz, data, labels })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `(1/(T−1))·X̃X̃ᵀ + ridge·I` with `X̃` de-meaned per channel.
pub fn estimate_covariance(x: &Mat, ridge: f64) -> Result<SpdMatrix> {
    let (c, t) = (x.rows(), x.cols());
    if t < 2 {
        return Err(Error::TooFewSamples { samples: t });
    }
    if !x.is_finite() {
        return Err(Error::InvalidSpec("segment contains non-finite samples".into()));
    }
    let centered: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut cov = Mat::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let s: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = s / (t - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += ridge;
    }
    SpdMatrix::new(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;
    use crate::spd::eig_sym;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_channels_give_ridge() {
        let x = Mat::from_rows(&[[3.0, 3.0, 3.0], [-1.0, -1.0, -1.0]]);
        let c = estimate_covariance(&x, 1e-6).unwrap();
        assert_eq!(c.as_mat(), &Mat::diag(&[1e-6, 1e-6]));
    }

    #[test]
    fn two_sample_hand_computation() {
        let x = Mat::from_rows(&[[1.0, -1.0], [1.0, -1.0]]);
        let c = estimate_covariance(&x, 1e-6).unwrap();
        assert_eq!(c.as_mat(), &Mat::from_rows(&[[2.0 + 1e-6, 2.0], [2.0, 2.0 + 1e-6]]));
    }

    #[test]
    fn de_meaning_removes_offsets() {
        let a = Mat::from_rows(&[[1.0, 2.0, 4.0], [0.0, 1.0, -1.0]]);
        let b = Mat::from_rows(&[[11.0, 12.0, 14.0], [-5.0, -4.0, -6.0]]);
        let (ca, cb) = (estimate_covariance(&a, 0.0).unwrap(), estimate_covariance(&b, 0.0).unwrap());
        assert!(ca.as_mat().sub(cb.as_mat()).max_abs() < 1e-14);
    }

    #[test]
    fn white_noise_is_near_identity() {
        let mut rng = seeded(1);
        let t = 100_000;
        let data = (0..8 * t).map(|_| rng.sample(StandardNormal)).collect();
        let c = estimate_covariance(&Mat::from_vec(8, t, data), DEFAULT_RIDGE).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i == j {
                    assert!((0.9..=1.1).contains(&c[(i, j)]));
                } else {
                    assert!(c[(i, j)].abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn ridge_bounds_spectrum_and_errors() {
        let mut rng = seeded(2);
        // rank-deficient: 6 channels, 3 samples
        let x = Mat::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect());
        let c = estimate_covariance(&x, 1e-6).unwrap();
        let min = eig_sym(&c).unwrap().values.last().copied().unwrap();
        assert!(min >= 1e-6 - 1e-12);
        let one = Mat::from_rows(&[[1.0], [2.0]]);
        assert!(matches!(estimate_covariance(&one, 1e-6), Err(Error::TooFewSamples { samples: 1 })));
    }
}
