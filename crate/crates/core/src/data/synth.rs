//! Synthetic SPD datasets with known class geometry.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bw_distance;
use crate::linalg::Mat;
use crate::random::{gaussian_mat, random_orthogonal, random_symmetric, seeded, Rng64};
use crate::spd::{eig_sym, spectral_apply, SpdMatrix, SpectralFn, DEFAULT_CLIP};

use super::covariance::SegmentBatch;
use super::filter::{bandpass, BandSpec};

fn default_kappa() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub d: usize,
    pub trials_per_class: usize,
    /// Minimum BW distance between class anchors.
    pub separation: f64,
    /// Relative √-space perturbation size.
    pub dispersion: f64,
    pub seed: u64,
    /// Condition number of the shared anchor spectrum.
    #[serde(default = "default_kappa")]
    pub spread_kappa: f64,
    /// Weight of a class-independent rank-one component `w·vvᵀ`, `‖v‖ = 1`,
    /// added to every sample after perturbation.
    #[serde(default)]
    pub common_mode: f64,
    /// Each sample is multiplied by `jitter^u`, `u ~ U(−1, 1)`; 1 disables it.
    #[serde(default = "default_jitter")]
    pub scale_jitter: f64,
}

fn default_jitter() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n_classes: usize, d: usize, trials_per_class: usize, separation: f64, dispersion: f64, seed: u64) -> Self {
        Self {
            n_classes,
            d,
            trials_per_class,
            separation,
            dispersion,
            seed,
            spread_kappa: default_kappa(),
            common_mode: 0.0,
            scale_jitter: default_jitter(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_classes < 1 || self.d < 1 || self.trials_per_class < 1 {
            return bad("n_classes, d and trials_per_class must be positive".into());
        }
        if !(self.separation > 0.0) {
            return bad(format!("separation must be > 0, got {}", self.separation));
        }
        if !(self.dispersion >= 0.0) || !(self.spread_kappa >= 1.0) || !(self.common_mode >= 0.0) || !(self.scale_jitter >= 1.0) {
            return bad("dispersion and common_mode must be ≥ 0, spread_kappa and scale_jitter ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub anchors: Vec<SpdMatrix>,
    pub samples: Vec<SpdMatrix>,
    pub labels: Vec<usize>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of one class.
    pub fn class(&self, k: usize) -> Vec<SpdMatrix> {
        self.samples
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == k)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Square of `S` after clipping its eigenvalues at a small positive floor.
fn square_clipped(s: &Mat) -> Result<SpdMatrix> {
    let eig = eig_sym(&SpdMatrix::new(s.clone())?)?;
    let floor = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * 1e-6;
    SpdMatrix::new(eig.reconstruct_with(|l| l.max(floor).max(DEFAULT_CLIP).powi(2)))
}

/// `√C = √μ + E` with `E` a symmetric Gaussian direction of Frobenius norm
/// `ε·‖√μ‖_F`.
pub fn perturb_sqrt<R: Rng>(rng: &mut R, sqrt_mu: &Mat, eps: f64) -> Result<SpdMatrix> {
    let g = random_symmetric(rng, sqrt_mu.rows());
    let e = g.scale(eps * sqrt_mu.frobenius() / g.frobenius());
    square_clipped(&sqrt_mu.add(&e))
}

/// Class anchors `Q_k diag(spread) Q_kᵀ`, rescaled so the closest pair is
/// at BW distance `s`; each sample perturbs its anchor in √-space.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let d = spec.d;
    let spread: Vec<f64> = (0..d)
        .map(|i| if d == 1 { 1.0 } else { spec.spread_kappa.powf(-(i as f64) / (d - 1) as f64) })
        .collect();
    let raw: Vec<Mat> = (0..spec.n_classes)
        .map(|_| random_orthogonal(&mut rng, d).sandwich_diag(&spread))
        .collect();
    let raw_spd = raw.iter().map(|m| SpdMatrix::new(m.clone())).collect::<Result<Vec<_>>>()?;
    let mut min_dist = f64::INFINITY;
    for a in 0..raw_spd.len() {
        for b in (a + 1)..raw_spd.len() {
            min_dist = min_dist.min(bw_distance(&raw_spd[a], &raw_spd[b])?);
        }
    }
    // d_BW(cA, cB) = √c·d_BW(A, B)
    let scale = if min_dist.is_finite() && min_dist > 0.0 {
        (spec.separation / min_dist).powi(2) * (1.0 + 1e-9)
    } else {
        1.0
    };
    let anchors = raw.iter().map(|m| SpdMatrix::new(m.scale(scale))).collect::<Result<Vec<_>>>()?;

    let common = if spec.common_mode > 0.0 {
        let v = gaussian_mat(&mut rng, d, 1);
        let v = v.scale(1.0 / v.frobenius());
        Some(v.matmul(&v.transpose()).scale(spec.common_mode))
    } else {
        None
    };

    let mut samples = Vec::with_capacity(spec.n_classes * spec.trials_per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for (k, mu) in anchors.iter().enumerate() {
        let sqrt_mu = spectral_apply(mu, SpectralFn::Sqrt, DEFAULT_CLIP)?;
        for _ in 0..spec.trials_per_class {
            let c = if spec.dispersion == 0.0 {
                mu.clone()
            } else {
                perturb_sqrt(&mut rng, &sqrt_mu, spec.dispersion)?
            };
            let c = match &common {
                Some(m) => SpdMatrix::new(c.as_mat().add(m))?,
                None => c,
            };
            let c = if spec.scale_jitter > 1.0 {
                let f = spec.scale_jitter.powf(rng.random_range(-1.0..1.0));
                SpdMatrix::new(c.as_mat().scale(f))?
            } else {
                c
            };
            samples.push(c);
            labels.push(k);
        }
    }
    Ok(SynthDataset { anchors, samples, labels })
}

/// Accuracy of assigning each sample to the BW-nearest anchor.
pub fn nearest_anchor_accuracy(anchors: &[SpdMatrix], samples: &[SpdMatrix], labels: &[usize]) -> Result<f64> {
    let mut correct = 0;
    for (s, &l) in samples.iter().zip(labels) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, a) in anchors.iter().enumerate() {
            let dist = bw_distance(s, a)?;
            if dist < best.1 {
                best = (k, dist);
            }
        }
        correct += usize::from(best.0 == l);
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}

/// Segments whose class is carried only by which spatial pattern drives
/// which frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMixtureSpec {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub trials_per_class: usize,
    /// Standard deviation of additive broadband white noise.
    pub noise: f64,
    pub seed: u64,
}

/// Three classes. Class `k` drives band `b` of the μ/β/γ triplet with
/// pattern `A_{(b+k) mod 3}`; each band source is normalized to unit power
/// so the broadband covariance `Σⱼ AⱼAⱼᵀ` is the same for every class.
pub fn synth_band_mixture(spec: &BandMixtureSpec) -> Result<SegmentBatch> {
    if spec.channels < 1 || spec.samples < 2 || spec.trials_per_class < 1 {
        return Err(Error::InvalidSpec("band mixture needs channels ≥ 1, samples ≥ 2, trials ≥ 1".into()));
    }
    let bands = BandSpec::standard_triplet(spec.sample_rate_hz)?;
    let mut rng = seeded(spec.seed);
    let c = spec.channels;
    let patterns: Vec<Mat> = (0..3)
        .map(|_| {
            let a = gaussian_mat(&mut rng, c, c);
            a.scale(1.0 / a.frobenius() * (c as f64).sqrt())
        })
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for k in 0..3 {
        for _ in 0..spec.trials_per_class {
            data.push(mixture_trial(&mut rng, spec, &bands, &patterns, k)?);
            labels.push(k);
        }
    }
    SegmentBatch::new(spec.sample_rate_hz, data, labels)
}

fn mixture_trial(rng: &mut Rng64, spec: &BandMixtureSpec, bands: &[BandSpec], patterns: &[Mat], k: usize) -> Result<Mat> {
    let (c, n) = (spec.channels, spec.samples);
    let mut x = Mat::from_vec(c, n, (0..c * n).map(|_| spec.noise * rng.sample::<f64, _>(StandardNormal)).collect());
    for (b, band) in bands.iter().enumerate() {
        let white = gaussian_mat(rng, c, n);
        let mut src = bandpass(&white, band)?;
        for i in 0..c {
            let row = &mut src.as_mut_slice()[i * n..(i + 1) * n];
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            row.iter_mut().for_each(|v| *v /= rms.max(f64::MIN_POSITIVE));
        }
        x = x.add(&patterns[(b + k) % 3].matmul(&src));
    }
    Ok(x)
}
