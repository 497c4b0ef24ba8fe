use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::embed::{embed, EmbeddingKind, TokenVector};
use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::covariance::{estimate_covariance, DEFAULT_RIDGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub sample_rate_hz: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, lo_hz: f64, hi_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let band = Self { name: name.into(), lo_hz, hi_hz, sample_rate_hz };
        band.validate()?;
        Ok(band)
    }

    /// Passes everything from DC to Nyquist.
    pub fn full(sample_rate_hz: f64) -> Self {
        Self { name: "full".into(), lo_hz: 0.0, hi_hz: sample_rate_hz / 2.0, sample_rate_hz }
    }

    /// μ (4–8 Hz), β (8–13 Hz), γ (13–30 Hz).
    pub fn standard_triplet(sample_rate_hz: f64) -> Result<Vec<Self>> {
        [("mu", 4.0, 8.0), ("beta", 8.0, 13.0), ("gamma", 13.0, 30.0)]
            .into_iter()
            .map(|(n, lo, hi)| Self::new(n, lo, hi, sample_rate_hz))
            .collect()
    }

    fn is_full(&self) -> bool {
        self.lo_hz == 0.0 && self.hi_hz == self.sample_rate_hz / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        let ok = self.is_full() || (0.0 < self.lo_hz && self.lo_hz < self.hi_hz && self.hi_hz < nyquist);
        if ok && self.sample_rate_hz > 0.0 {
            Ok(())
        } else {
            Err(Error::BandOutOfRange { lo: self.lo_hz, hi: self.hi_hz, rate: self.sample_rate_hz })
        }
    }
}

/// Zero-phase band-pass by zeroing FFT bins outside `[lo, hi]`, per channel.
pub fn bandpass(x: &Mat, band: &BandSpec) -> Result<Mat> {
    band.validate()?;
    let n = x.cols();
    if n == 0 {
        return Ok(x.clone());
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let bin = k.min(n - k) as f64;
            let f = bin * band.sample_rate_hz / n as f64;
            band.lo_hz <= f && f <= band.hi_hz
        })
        .collect();
    let mut out = Mat::zeros(x.rows(), n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for c in 0..x.rows() {
        for (b, &v) in buf.iter_mut().zip(x.row(c)) {
            *b = Complex::new(v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &k) in buf.iter_mut().zip(&keep) {
            if !k {
                *b = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for (t, b) in buf.iter().enumerate() {
            out[(c, t)] = b.re / n as f64;
        }
    }
    Ok(out)
}

/// One token per band: `embed(estimate_covariance(bandpass(X, band)))`.
pub fn multiband_tokens(x: &Mat, bands: &[BandSpec], kind: EmbeddingKind) -> Result<Vec<TokenVector>> {
    if bands.is_empty() {
        return Err(Error::InvalidSpec("multi-band tokenization needs at least one band".into()));
    }
    bands
        .iter()
        .map(|b| embed(&estimate_covariance(&bandpass(x, b)?, DEFAULT_RIDGE)?, kind))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    const FS: f64 = 128.0;
    const N: usize = 512;

    fn sinusoid(hz: f64) -> Mat {
        Mat::from_vec(1, N, (0..N).map(|t| (2.0 * PI * hz * t as f64 / FS).sin()).collect())
    }

    fn rms(m: &Mat) -> f64 {
        (m.as_slice().iter().map(|v| v * v).sum::<f64>() / m.as_slice().len() as f64).sqrt()
    }

    #[test]
    fn in_band_sinusoid_passes() {
        let x = sinusoid(10.0);
        let beta = BandSpec::new("beta", 8.0, 13.0, FS).unwrap();
        assert!(rms(&bandpass(&x, &beta).unwrap()) / rms(&x) >= 0.99);
    }

    #[test]
    fn out_of_band_sinusoid_is_removed() {
        let x = sinusoid(10.0);
        let gamma = BandSpec::new("gamma", 13.0, 30.0, FS).unwrap();
        assert!(rms(&bandpass(&x, &gamma).unwrap()) <= 1e-3 * rms(&x));
    }

    #[test]
    fn zero_signal_and_invalid_bands() {
        let z = Mat::zeros(3, N);
        let band = BandSpec::new("b", 8.0, 13.0, FS).unwrap();
        assert!(bandpass(&z, &band).unwrap().as_slice().iter().all(|&v| v == 0.0));
        for (lo, hi) in [(0.0, 10.0), (13.0, 8.0), (8.0, 64.0), (8.0, 80.0)] {
            assert!(matches!(BandSpec::new("x", lo, hi, FS), Err(Error::BandOutOfRange { .. })));
        }
    }

    #[test]
    fn full_band_is_identity() {
        let mut rng = seeded(3);
        let x = Mat::from_vec(4, N, (0..4 * N).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = bandpass(&x, &BandSpec::full(FS)).unwrap();
        assert!(y.sub(&x).frobenius() <= 1e-12 * x.frobenius());

        let single = embed(&estimate_covariance(&x, DEFAULT_RIDGE).unwrap(), EmbeddingKind::LogEuclidean).unwrap();
        let multi = multiband_tokens(&x, &[BandSpec::full(FS)], EmbeddingKind::LogEuclidean).unwrap();
        let diff: f64 = single.values.iter().zip(&multi[0].values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-9 * single.norm());
    }

    #[test]
    fn triplet_gives_three_tokens_and_energy_lands_in_beta() {
        let mut rng = seeded(4);
        let mut x = Mat::zeros(4, N);
        for c in 0..4 {
            for t in 0..N {
                let s: f64 = rng.sample(StandardNormal);
                x[(c, t)] = (c as f64 + 1.0) * (2.0 * PI * 10.0 * t as f64 / FS).sin() + 0.1 * s;
            }
        }
        let bands = BandSpec::standard_triplet(FS).unwrap();
        let tokens = multiband_tokens(&x, &bands, EmbeddingKind::Euclidean).unwrap();
        assert_eq!(tokens.len(), 3);
        let traces: Vec<f64> = bands
            .iter()
            .map(|b| estimate_covariance(&bandpass(&x, b).unwrap(), DEFAULT_RIDGE).unwrap().as_mat().trace())
            .collect();
        assert!(traces[1] > 10.0 * traces[0] && traces[1] > 10.0 * traces[2]);
    }
}
