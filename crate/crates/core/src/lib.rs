//! SPD-token Transformer: geometric token embeddings of covariance matrices,
//! differentiable spectral matrix functions, a small reverse-mode Transformer
//! classifier and the experiment/diagnostic drivers around them.

pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod nn;
pub mod random;
pub mod spd;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use spd::{EigenPair, SpdMatrix, SpectralFn};
