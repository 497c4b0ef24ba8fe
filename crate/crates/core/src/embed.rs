//! Geometric token embeddings: `vech(√C)`, `vech(log C)` and `vech(C)`.
//!
//! All three produce vectors of length `d(d+1)/2` in the same row-major
//! upper-triangular order, so the downstream model is identical for every
//! embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::spd::{
    eig_sym, jacobi_eigen, spectral_backward, EigenPair, SpdMatrix, SpectralFn, DEFAULT_CLIP, MAX_SWEEPS,
};

/// Length of the token for a `d × d` source matrix.
pub fn token_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Inverse of [`token_len`], if `len` is triangular.
pub fn source_dim(len: usize) -> Option<usize> {
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (token_len(d) == len).then_some(d)
}

/// Slot of entry `(i, j)`, `i ≤ j`, in the row-major upper-triangular packing.
#[inline]
pub fn vech_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * d - i * i.saturating_sub(1) / 2 + (j - i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenVector {
    pub dim_src: usize,
    pub values: Vec<f64>,
}

impl TokenVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[serde(alias = "bw_spd", alias = "BWSPD")]
    Bwspd,
    #[serde(alias = "LogEuclidean")]
    LogEuclidean,
    #[serde(alias = "Euclidean")]
    Euclidean,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 3] = [
        EmbeddingKind::LogEuclidean,
        EmbeddingKind::Bwspd,
        EmbeddingKind::Euclidean,
    ];

    pub fn spectral_fn(self) -> SpectralFn {
        match self {
            EmbeddingKind::Bwspd => SpectralFn::Sqrt,
            EmbeddingKind::LogEuclidean => SpectralFn::Log,
            EmbeddingKind::Euclidean => SpectralFn::Identity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Bwspd => "bwspd",
            EmbeddingKind::LogEuclidean => "log_euclidean",
            EmbeddingKind::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "bwspd" | "bw_spd" | "bw" => Ok(EmbeddingKind::Bwspd),
            "log_euclidean" | "logeuclidean" | "le" | "log" => Ok(EmbeddingKind::LogEuclidean),
            "euclidean" | "euc" => Ok(EmbeddingKind::Euclidean),
            other => Err(Error::InvalidConfig(format!("unknown embedding '{other}'"))),
        }
    }
}

/// Upper triangle of a symmetric matrix, row by row.
pub fn vech(m: &Mat) -> Result<TokenVector> {
    if !m.is_square() {
        return Err(Error::DimMismatch {
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let asym = m.max_asymmetry();
    if asym > 1e-9 * m.frobenius() {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(vech_unchecked(m))
}

pub(crate) fn vech_unchecked(m: &Mat) -> TokenVector {
    let d = m.rows();
    let mut values = Vec::with_capacity(token_len(d));
    for i in 0..d {
        values.extend_from_slice(&m.row(i)[i..]);
    }
    TokenVector { dim_src: d, values }
}

/// Symmetric matrix whose upper triangle is `t`.
pub fn unvech(t: &TokenVector) -> Mat {
    unvech_slice(t.dim_src, &t.values)
}

pub fn unvech_slice(d: usize, values: &[f64]) -> Mat {
    assert_eq!(values.len(), token_len(d), "token length does not match dimension");
    let mut m = Mat::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = values[k];
            m[(j, i)] = values[k];
            k += 1;
        }
    }
    m
}

/// Adjoint of `M ↦ vech(sym(M))`: the token gradient lands on the diagonal
/// as is and is split evenly between `(i, j)` and `(j, i)` off the diagonal.
pub fn vech_adjoint(d: usize, upstream: &[f64]) -> Result<Mat> {
    if upstream.len() != token_len(d) {
        return Err(Error::DimMismatch {
            expected: token_len(d),
            got: upstream.len(),
        });
    }
    let mut g = Mat::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        g[(i, i)] = upstream[k];
        k += 1;
        for j in (i + 1)..d {
            g[(i, j)] = 0.5 * upstream[k];
            g[(j, i)] = 0.5 * upstream[k];
            k += 1;
        }
    }
    Ok(g)
}

/// Forward embedding, keeping the eigendecomposition for a later backward.
pub fn embed_with_eig(c: &SpdMatrix, kind: EmbeddingKind) -> Result<(TokenVector, Option<EigenPair>)> {
    match kind {
        EmbeddingKind::Euclidean => Ok((vech_unchecked(c.as_mat()), None)),
        _ => {
            let f = kind.spectral_fn();
            let eig = eig_sym(c)?;
            let m = eig.clipped(DEFAULT_CLIP).reconstruct_with(|l| f.value(l));
            Ok((vech_unchecked(&m), Some(eig)))
        }
    }
}

pub fn embed(c: &SpdMatrix, kind: EmbeddingKind) -> Result<TokenVector> {
    embed_with_eig(c, kind).map(|(t, _)| t)
}

/// Rebuilds the SPD matrix a token of a `d × d` source was embedded from.
pub fn unembed(values: &[f64], d: usize, kind: EmbeddingKind) -> Result<SpdMatrix> {
    if values.len() != token_len(d) {
        return Err(Error::DimMismatch { expected: token_len(d), got: values.len() });
    }
    let m = unvech_slice(d, values);
    let c = match kind {
        EmbeddingKind::Euclidean => m,
        EmbeddingKind::Bwspd => m.matmul(&m),
        EmbeddingKind::LogEuclidean => jacobi_eigen(&m, MAX_SWEEPS)?.reconstruct_with(f64::exp),
    };
    SpdMatrix::new(c)
}

/// Gradient of a scalar loss with respect to `C`, given `∂L/∂token`.
pub fn embed_backward(c: &SpdMatrix, kind: EmbeddingKind, upstream: &[f64]) -> Result<Mat> {
    let g = vech_adjoint(c.dim(), upstream)?;
    match kind {
        EmbeddingKind::Euclidean => Ok(g),
        _ => spectral_backward(&eig_sym(c)?, kind.spectral_fn(), &g),
    }
}

/// Same as [`embed_backward`] reusing a forward eigendecomposition.
pub fn embed_backward_with_eig(
    eig: Option<&EigenPair>,
    d: usize,
    kind: EmbeddingKind,
    upstream: &[f64],
) -> Result<Mat> {
    let g = vech_adjoint(d, upstream)?;
    match (kind, eig) {
        (EmbeddingKind::Euclidean, _) => Ok(g),
        (_, Some(eig)) => spectral_backward(eig, kind.spectral_fn(), &g),
        (_, None) => Err(Error::InvalidConfig(
            "spectral embedding backward needs the forward eigendecomposition".into(),
        )),
    }
}
