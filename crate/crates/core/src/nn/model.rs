use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::{source_dim, unembed, EmbeddingKind};
use crate::error::{Error, Result};
use crate::geometry::bw_distance;
use crate::random::{seeded, Rng64};

use super::optim::AdamState;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionMode {
    Standard,
    /// Scores `(1 − α)·q·k/√d_k − α·d_BW(Cᵢ, Cⱼ)`, with `Cᵢ` rebuilt from the
    /// input tokens.
    GeometricAware {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Token length `D_token`.
    pub token_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub use_bn_embed: bool,
    pub seq_len: usize,
    pub attention: AttentionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            token_dim: 253,
            d_model: 128,
            layers: 6,
            heads: 8,
            d_ff: 256,
            dropout: 0.1,
            n_classes: 4,
            use_bn_embed: true,
            seq_len: 1,
            attention: AttentionMode::Standard,
        }
    }
}

impl ModelConfig {
    /// `d_model = 64, L = 4, H = 4, d_ff = 128`.
    pub fn scaled_down(token_dim: usize, n_classes: usize) -> Self {
        Self {
            token_dim,
            n_classes,
            d_model: 64,
            layers: 4,
            heads: 4,
            d_ff: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.token_dim == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return fail("token_dim, d_ff and seq_len must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if let AttentionMode::GeometricAware { alpha } = self.attention {
            if !(0.0..=1.0).contains(&alpha) {
                return fail(format!("alpha {alpha} outside [0, 1]"));
            }
            if alpha != 0.0 && source_dim(self.token_dim).is_none() {
                return fail(format!("token_dim {} is not d(d+1)/2", self.token_dim));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of BN-Embed. The affine `gamma`/`beta` are trainable
/// and live in the [`ParamStore`] as `bn.gamma` / `bn.beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnEmbedState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnEmbedState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Folds in one batch: `mean` and the biased `var` over `rows` rows.
    /// The running variance tracks the unbiased estimate.
    pub fn update(&mut self, mean: &[f64], var: &[f64], rows: usize) {
        let m = self.momentum;
        let unbias = rows as f64 / (rows as f64 - 1.0);
        for c in 0..mean.len() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * var[c] * unbias;
        }
    }
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    proj_w: usize,
    proj_b: usize,
    pos: usize,
    bn: Option<(usize, usize)>,
    layers: Vec<LayerIdx>,
    head_w: usize,
    head_b: usize,
}

/// A recorded forward pass.
pub struct ForwardGraph {
    pub tape: Tape,
    pub logits: Var,
    /// Input tokens as a `[batch·T, D_token]` leaf.
    pub input: Var,
    /// One leaf per parameter, in [`ParamStore`] order.
    pub params: Vec<Var>,
    /// One attention node per layer.
    pub attention: Vec<Var>,
    /// BN-Embed batch mean and biased variance (train mode only).
    pub bn_batch: Option<(Vec<f64>, Vec<f64>)>,
}

pub struct LossAndGrads {
    pub loss: f64,
    /// Per parameter, in [`ParamStore`] order.
    pub grads: Vec<Vec<f64>>,
    /// `∂loss/∂tokens`, `[batch, T, D_token]` row-major.
    pub input_grad: Vec<f64>,
    pub bn_batch: Option<(Vec<f64>, Vec<f64>)>,
}

/// Projection, positional table, optional BN-Embed, post-norm encoder
/// blocks, mean pooling and a linear head.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    /// How tokens were produced; only read by geometric-aware attention.
    pub embedding: EmbeddingKind,
    pub params: ParamStore,
    pub bn: Option<BnEmbedState>,
    layout: Layout,
}

fn uniform_init(rng: &mut Rng64, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::new(
        vec![fan_in, fan_out],
        (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect(),
    )
}

impl Transformer {
    pub fn new(config: ModelConfig, embedding: EmbeddingKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut p = ParamStore::default();
        let dm = config.d_model;

        let proj_w = p.push("proj.w", uniform_init(&mut rng, config.token_dim, dm));
        let proj_b = p.push("proj.b", Tensor::zeros(vec![dm]));
        let normal = Normal::new(0.0, 0.02).expect("valid sigma");
        let pos = p.push(
            "pos",
            Tensor::new(
                vec![config.seq_len, dm],
                (0..config.seq_len * dm).map(|_| normal.sample(&mut rng)).collect(),
            ),
        );
        let bn = config.use_bn_embed.then(|| {
            (
                p.push("bn.gamma", Tensor::filled(vec![dm], 1.0)),
                p.push("bn.beta", Tensor::zeros(vec![dm])),
            )
        });
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut lin = |p: &mut ParamStore, name: &str, i: usize, o: usize| {
                (
                    p.push(format!("layers.{l}.{name}.w"), uniform_init(&mut rng, i, o)),
                    p.push(format!("layers.{l}.{name}.b"), Tensor::zeros(vec![o])),
                )
            };
            let (wq, bq) = lin(&mut p, "attn.q", dm, dm);
            let (wk, bk) = lin(&mut p, "attn.k", dm, dm);
            let (wv, bv) = lin(&mut p, "attn.v", dm, dm);
            let (wo, bo) = lin(&mut p, "attn.o", dm, dm);
            let ln1_g = p.push(format!("layers.{l}.ln1.gamma"), Tensor::filled(vec![dm], 1.0));
            let ln1_b = p.push(format!("layers.{l}.ln1.beta"), Tensor::zeros(vec![dm]));
            let (w1, b1) = lin(&mut p, "ff1", dm, config.d_ff);
            let (w2, b2) = lin(&mut p, "ff2", config.d_ff, dm);
            let ln2_g = p.push(format!("layers.{l}.ln2.gamma"), Tensor::filled(vec![dm], 1.0));
            let ln2_b = p.push(format!("layers.{l}.ln2.beta"), Tensor::zeros(vec![dm]));
            layers.push(LayerIdx {
                wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b,
            });
        }
        let head_w = p.push("head.w", uniform_init(&mut rng, dm, config.n_classes));
        let head_b = p.push("head.b", Tensor::zeros(vec![config.n_classes]));

        Ok(Self {
            bn: config.use_bn_embed.then(|| BnEmbedState::new(dm)),
            config,
            embedding,
            params: p,
            layout: Layout { proj_w, proj_b, pos, bn, layers, head_w, head_b },
        })
    }

    /// Every trainable scalar.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Trainable scalars excluding the positional table and BN-Embed affine.
    pub fn param_count_core(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| *n != "pos" && !n.starts_with("bn."))
            .map(|(_, t)| t.len())
            .sum()
    }

    fn check_tokens(&self, tokens: &Tensor) -> Result<usize> {
        let c = &self.config;
        match tokens.shape[..] {
            [b, t, d] if b > 0 && t == c.seq_len && d == c.token_dim => Ok(b),
            _ => Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "tokens {:?}, expected [batch, {}, {}]",
                    tokens.shape, c.seq_len, c.token_dim
                ),
            }),
        }
    }

    /// `−d_BW` between every pair of tokens within each sequence.
    fn geometric_bias(&self, tokens: &Tensor, batch: usize) -> Result<Vec<f64>> {
        let (t, dt) = (self.config.seq_len, self.config.token_dim);
        let d = source_dim(dt).ok_or_else(|| Error::InvalidConfig(format!("token_dim {dt} is not d(d+1)/2")))?;
        let mut bias = vec![0.0; batch * t * t];
        for b in 0..batch {
            let mats = (0..t)
                .map(|i| unembed(&tokens.data[(b * t + i) * dt..][..dt], d, self.embedding))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..t {
                for j in (i + 1)..t {
                    let dist = bw_distance(&mats[i], &mats[j])?;
                    bias[(b * t + i) * t + j] = -dist;
                    bias[(b * t + j) * t + i] = -dist;
                }
            }
        }
        Ok(bias)
    }

    /// Records a forward pass. Dropout is applied only in train mode and
    /// only when `dropout_rng` is given.
    pub fn forward_graph(&self, tokens: &Tensor, mode: Mode, mut dropout_rng: Option<&mut Rng64>) -> Result<ForwardGraph> {
        let batch = self.check_tokens(tokens)?;
        let c = &self.config;
        let (t_len, dm) = (c.seq_len, c.d_model);
        let rows = batch * t_len;
        let lay = &self.layout;

        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::new(vec![rows, c.token_dim], tokens.data.clone()));
        let params: Vec<Var> = self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let pv = |i: usize| params[i];

        let bias = match c.attention {
            AttentionMode::GeometricAware { alpha } if alpha != 0.0 && t_len > 1 => {
                Some((self.geometric_bias(tokens, batch)?, alpha))
            }
            _ => None,
        };

        let mut x = tape.linear(input, pv(lay.proj_w), pv(lay.proj_b))?;
        x = tape.add_tiled(x, pv(lay.pos), t_len)?;
        let mut bn_batch = None;
        if let (Some((g, b)), Some(state)) = (lay.bn, &self.bn) {
            x = match mode {
                Mode::Train => {
                    let (y, mean, var) = tape.batch_norm(x, pv(g), pv(b), state.eps)?;
                    bn_batch = Some((mean, var));
                    y
                }
                Mode::Eval => tape.frozen_norm(x, pv(g), pv(b), &state.running_mean, &state.running_var, state.eps)?,
            };
        }

        let drop = c.dropout;
        let mut maybe_dropout = |tape: &mut Tape, v: Var| -> Var {
            match (&mut dropout_rng, mode) {
                (Some(rng), Mode::Train) if drop > 0.0 => {
                    let keep = 1.0 / (1.0 - drop);
                    let mask = (0..rows * dm)
                        .map(|_| if rng.random::<f64>() < drop { 0.0 } else { keep })
                        .collect();
                    tape.dropout(v, mask)
                }
                _ => v,
            }
        };

        let mut attention = Vec::with_capacity(lay.layers.len());
        for (l, li) in lay.layers.iter().enumerate() {
            let q = tape.linear(x, pv(li.wq), pv(li.bq))?;
            let k = tape.linear(x, pv(li.wk), pv(li.bk))?;
            let v = tape.linear(x, pv(li.wv), pv(li.bv))?;
            let a = tape.attention(q, k, v, c.heads, t_len, bias.as_ref().map(|(b, a)| (&b[..], *a)))?;
            attention.push(a);
            let o = tape.linear(a, pv(li.wo), pv(li.bo))?;
            let o = maybe_dropout(&mut tape, o);
            let r = tape.add(x, o)?;
            x = tape.layer_norm(r, pv(li.ln1_g), pv(li.ln1_b), LAYER_NORM_EPS)?;

            let h = tape.linear(x, pv(li.w1), pv(li.b1))?;
            let h = tape.relu(h);
            let f = tape.linear(h, pv(li.w2), pv(li.b2))?;
            let f = maybe_dropout(&mut tape, f);
            let r = tape.add(x, f)?;
            x = tape.layer_norm(r, pv(li.ln2_g), pv(li.ln2_b), LAYER_NORM_EPS)?;

            if !tape.value(x).data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
        }
        let pooled = tape.mean_pool(x, t_len)?;
        let logits = tape.linear(pooled, pv(lay.head_w), pv(lay.head_b))?;
        if !tape.value(logits).data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: lay.layers.len() });
        }
        Ok(ForwardGraph { tape, logits, input, params, attention, bn_batch })
    }

    /// Eval-mode logits, `[batch, n_classes]`.
    pub fn logits(&self, tokens: &Tensor) -> Result<Tensor> {
        let g = self.forward_graph(tokens, Mode::Eval, None)?;
        Ok(g.tape.value(g.logits).clone())
    }

    pub fn predict(&self, tokens: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(tokens)?;
        let c = self.config.n_classes;
        Ok(logits
            .data
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy and its gradient with respect to every parameter
    /// and the input tokens.
    pub fn loss_and_grads(
        &self,
        tokens: &Tensor,
        labels: &[usize],
        mode: Mode,
        dropout_rng: Option<&mut Rng64>,
    ) -> Result<LossAndGrads> {
        let mut g = self.forward_graph(tokens, mode, dropout_rng)?;
        let loss_var = g.tape.cross_entropy(g.logits, labels)?;
        let loss = g.tape.value(loss_var).data[0];
        let grads = g.tape.backward(loss_var)?;
        let collect = |v: Var, n: usize| grads.get(v).map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        Ok(LossAndGrads {
            loss,
            grads: g
                .params
                .iter()
                .zip(&self.params.tensors)
                .map(|(&v, t)| collect(v, t.len()))
                .collect(),
            input_grad: collect(g.input, tokens.len()),
            bn_batch: g.bn_batch.take(),
        })
    }

    /// One optimizer step in train mode; returns the pre-step loss.
    pub fn train_step(
        &mut self,
        tokens: &Tensor,
        labels: &[usize],
        optimizer: &mut AdamState,
        dropout_rng: &mut Rng64,
    ) -> Result<f64> {
        let out = self.loss_and_grads(tokens, labels, Mode::Train, Some(dropout_rng))?;
        if let (Some(state), Some((mean, var))) = (&mut self.bn, &out.bn_batch) {
            state.update(mean, var, tokens.shape[0] * self.config.seq_len);
        }
        optimizer.step(&mut self.params, &out.grads);
        Ok(out.loss)
    }

    /// Parameters and BN running statistics as named tensors.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        if let Some(bn) = &self.bn {
            let n = bn.running_mean.len();
            out.push(("bn.running_mean".into(), Tensor::new(vec![n], bn.running_mean.clone())));
            out.push(("bn.running_var".into(), Tensor::new(vec![n], bn.running_var.clone())));
        }
        out
    }

    /// Overwrites parameters and running statistics from named tensors;
    /// every name must match a tensor of the same shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in tensors {
            let slot = match name.as_str() {
                "bn.running_mean" | "bn.running_var" => {
                    let bn = self.bn.as_mut().ok_or_else(|| Error::InvalidConfig(format!("{name} without BN-Embed")))?;
                    let v = if name.ends_with("mean") { &mut bn.running_mean } else { &mut bn.running_var };
                    if v.len() != t.len() {
                        return Err(Error::ShapeMismatch { op: "load", detail: name.clone() });
                    }
                    v.copy_from_slice(&t.data);
                    continue;
                }
                _ => self
                    .params
                    .get_mut(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?,
            };
            if slot.shape != t.shape {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    detail: format!("{name}: {:?} vs {:?}", slot.shape, t.shape),
                });
            }
            slot.data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}
