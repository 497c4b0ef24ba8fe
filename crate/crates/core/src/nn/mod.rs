//! Reverse-mode autodiff and the Transformer classifier shared by every
//! embedding.

mod model;
mod optim;
mod tape;
mod tensor;

pub use model::{
    AttentionMode, BnEmbedState, ForwardGraph, LossAndGrads, Mode, ModelConfig, ParamStore, Transformer,
};
pub use optim::{AdamConfig, AdamState};
pub use tape::{AttentionWeights, Gradients, Tape, Var};
pub use tensor::Tensor;
