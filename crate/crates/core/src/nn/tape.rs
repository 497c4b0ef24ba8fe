//! Reverse-mode automatic differentiation over 2-D activations.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward pass. Nodes only ever reference earlier nodes, so a reverse walk
//! over the recording order is a valid topological order.

use crate::error::{Error, Result};

use super::tensor::{matmul, matmul_nt, matmul_tn_acc, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x[n×k] · w[k×m]`
    MatMul { x: Var, w: Var },
    /// row-broadcast bias
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    /// row `r` of `x` gets row `r % period` of `table`
    AddTiled { x: Var, table: Var, period: usize },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    /// per-feature `scale ⊙ (x − shift)` followed by `γ ⊙ · + β`
    FrozenNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, scale: Vec<f64> },
    Attention(Box<AttentionCache>),
    MeanPool { x: Var, seq: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    seq: usize,
    score_scale: f64,
    /// softmax weights, `[batch, heads, seq, seq]`
    weights: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of every node after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Softmax weights produced by an attention node, for inspection in tests.
pub struct AttentionWeights<'a> {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub weights: &'a [f64],
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.as_2d()
    }

    pub fn attention_weights(&self, v: Var) -> Option<AttentionWeights<'_>> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => {
                let (rows, _) = self.dims(v);
                Some(AttentionWeights {
                    batch: rows / c.seq,
                    heads: c.heads,
                    seq: c.seq,
                    weights: &c.weights,
                })
            }
            _ => None,
        }
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.dims(x);
        let w_shape = &self.value(w).shape;
        if w_shape.len() != 2 || w_shape[0] != k {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("input has {k} columns, weight shape {w_shape:?}"),
            });
        }
        let m = w_shape[1];
        let out = matmul(&self.value(x).data, &self.value(w).data, n, k, m);
        let mut shape = self.value(x).shape.clone();
        *shape.last_mut().unwrap() = m;
        Ok(self.push(Tensor::new(shape, out), Op::MatMul { x, w }))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.dims(x);
        if self.value(b).len() != m {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("{m} columns, bias of length {}", self.value(b).len()),
            });
        }
        let bias = &self.value(b).data;
        let mut out = self.value(x).clone();
        for row in out.data.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.value(a).shape, self.value(b).shape),
            });
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor::new(shape, data), Op::Add { a, b }))
    }

    pub fn add_tiled(&mut self, x: Var, table: Var, period: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.value(table).len() != period * m || n % period != 0 {
            return Err(Error::ShapeMismatch {
                op: "add_tiled",
                detail: format!("{n}×{m} input, table {:?}, period {period}", self.value(table).shape),
            });
        }
        let tab = &self.value(table).data;
        let mut out = self.value(x).clone();
        for (r, row) in out.data.chunks_mut(m).enumerate() {
            let t = &tab[(r % period) * m..(r % period + 1) * m];
            for (o, &tv) in row.iter_mut().zip(t) {
                *o += tv;
            }
        }
        Ok(self.push(out, Op::AddTiled { x, table, period }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = v.max(0.0);
        }
        self.push(out, Op::Relu { x })
    }

    /// Inverted dropout; `mask` entries are `0` or `1/(1−p)`.
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Per-row normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, m) = self.dims(x);
        self.check_affine("layer_norm", gamma, beta, m)?;
        let xv = &self.value(x).data;
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..m {
                xhat[r * m + c] = (row[c] - mean) * is;
            }
        }
        let out = self.affine_rows(&xhat, gamma, beta, n, m);
        let shape = self.value(x).shape.clone();
        Ok(self.push(
            Tensor::new(shape, out),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
        ))
    }

    /// Per-feature normalization over all rows with batch statistics.
    /// Returns the output and the (biased) batch mean and variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, m) = self.dims(x);
        if n < 2 {
            return Err(Error::DegenerateBatch { rows: n });
        }
        self.check_affine("batch_norm", gamma, beta, m)?;
        let xv = &self.value(x).data;
        let mut mean = vec![0.0; m];
        for row in xv.chunks(m) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; m];
        for row in xv.chunks(m) {
            for c in 0..m {
                let dv = row[c] - mean[c];
                var[c] += dv * dv;
            }
        }
        var.iter_mut().for_each(|a| *a /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                xhat[r * m + c] = (xv[r * m + c] - mean[c]) * inv_std[c];
            }
        }
        let out = self.affine_rows(&xhat, gamma, beta, n, m);
        let shape = self.value(x).shape.clone();
        let var_out = self.push(
            Tensor::new(shape, out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std },
        );
        Ok((var_out, mean, var))
    }

    /// Per-feature normalization with fixed statistics (evaluation mode).
    pub fn frozen_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (n, m) = self.dims(x);
        self.check_affine("frozen_norm", gamma, beta, m)?;
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xv = &self.value(x).data;
        let mut xhat = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                xhat[r * m + c] = (xv[r * m + c] - mean[c]) * scale[c];
            }
        }
        let out = self.affine_rows(&xhat, gamma, beta, n, m);
        let shape = self.value(x).shape.clone();
        Ok(self.push(
            Tensor::new(shape, out),
            Op::FrozenNorm { x, gamma, beta, xhat, scale },
        ))
    }

    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, m: usize) -> Result<()> {
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{m} features, affine lengths {} / {}", self.value(gamma).len(), self.value(beta).len()),
            });
        }
        Ok(())
    }

    fn affine_rows(&self, xhat: &[f64], gamma: Var, beta: Var, n: usize, m: usize) -> Vec<f64> {
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] = g[c] * xhat[r * m + c] + b[c];
            }
        }
        out
    }

    /// Multi-head scaled dot-product attention over sequences of length
    /// `seq`, with an optional additive per-pair score bias
    /// `[batch, seq, seq]` shared across heads.
    ///
    /// Scores are `(1 − α)·q·k/√d_k + α·bias`; `α = 0` (or no bias) is the
    /// standard form.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        bias: Option<(&[f64], f64)>,
    ) -> Result<Var> {
        let (n, dm) = self.dims(q);
        if self.dims(k) != (n, dm) || self.dims(v) != (n, dm) || dm % heads != 0 || n % seq != 0 {
            return Err(Error::ShapeMismatch {
                op: "attention",
                detail: format!("q {:?}, k {:?}, v {:?}, heads {heads}, seq {seq}", self.dims(q), self.dims(k), self.dims(v)),
            });
        }
        let batch = n / seq;
        let dk = dm / heads;
        let bias = match bias {
            Some((b, alpha)) if alpha != 0.0 => {
                if b.len() != batch * seq * seq {
                    return Err(Error::ShapeMismatch {
                        op: "attention",
                        detail: format!("bias length {} for batch {batch}, seq {seq}", b.len()),
                    });
                }
                Some((b, alpha))
            }
            _ => None,
        };
        let alpha = bias.map_or(0.0, |(_, a)| a);
        let score_scale = if bias.is_some() {
            (1.0 - alpha) / (dk as f64).sqrt()
        } else {
            1.0 / (dk as f64).sqrt()
        };

        let qv = &self.value(q).data;
        let kv = &self.value(k).data;
        let vv = &self.value(v).data;
        let mut weights = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; n * dm];
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..seq {
                    let qi = &qv[(b * seq + i) * dm + h * dk..][..dk];
                    for j in 0..seq {
                        let kj = &kv[(b * seq + j) * dm + h * dk..][..dk];
                        let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                        scores[j] = dot * score_scale;
                        if let Some((bb, a)) = bias {
                            scores[j] += a * bb[(b * seq + i) * seq + j];
                        }
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w = &mut weights[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut z = 0.0;
                    for j in 0..seq {
                        w[j] = (scores[j] - max).exp();
                        z += w[j];
                    }
                    for wj in w.iter_mut() {
                        *wj /= z;
                    }
                    let oi = &mut out[(b * seq + i) * dm + h * dk..][..dk];
                    for j in 0..seq {
                        let vj = &vv[(b * seq + j) * dm + h * dk..][..dk];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += w[j] * x;
                        }
                    }
                }
            }
        }
        let shape = self.value(q).shape.clone();
        Ok(self.push(
            Tensor::new(shape, out),
            Op::Attention(Box::new(AttentionCache {
                q,
                k,
                v,
                heads,
                seq,
                score_scale,
                weights,
            })),
        ))
    }

    /// Mean over consecutive groups of `seq` rows.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if seq == 0 || n % seq != 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_pool",
                detail: format!("{n} rows not divisible by sequence length {seq}"),
            });
        }
        let batch = n / seq;
        let xv = &self.value(x).data;
        let mut out = vec![0.0; batch * m];
        for b in 0..batch {
            for t in 0..seq {
                for c in 0..m {
                    out[b * m + c] += xv[(b * seq + t) * m + c];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= seq as f64);
        Ok(self.push(Tensor::new(vec![batch, m], out), Op::MeanPool { x, seq }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{n} rows, {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, n_classes: c });
        }
        let lv = &self.value(logits).data;
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let (arg, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            // the arg-max term is exactly 1; ln_1p keeps small losses accurate
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != arg)
                .map(|(_, v)| (v - max).exp())
                .sum();
            let log_z = rest.ln_1p() + max;
            loss += rest.ln_1p() - (row[labels[r]] - max);
            for j in 0..c {
                probs[r * c + j] = (row[j] - log_z).exp();
            }
        }
        loss /= n as f64;
        Ok(self.push(
            Tensor::new(vec![1], vec![loss]),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be scalar, shape {:?}", self.value(loss).shape),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for parent in parents(&node.op) {
                if parent.0 >= idx {
                    return Err(Error::GraphCycle { node: idx });
                }
            }
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let (n, k) = self.dims(*x);
                let m = self.value(*w).shape[1];
                acc(*x, matmul_nt(g, &self.value(*w).data, n, m, k));
                let mut gw = vec![0.0; k * m];
                matmul_tn_acc(&mut gw, &self.value(*x).data, g, n, k, m);
                acc(*w, gw);
            }
            Op::AddBias { x, b } => {
                let m = self.value(*b).len();
                let mut gb = vec![0.0; m];
                for row in g.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                acc(*x, g.to_vec());
                acc(*b, gb);
            }
            Op::Add { a, b } => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddTiled { x, table, period } => {
                let (_, m) = self.dims(*x);
                let mut gt = vec![0.0; period * m];
                for (r, row) in g.chunks(m).enumerate() {
                    let t = &mut gt[(r % period) * m..(r % period + 1) * m];
                    t.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                acc(*x, g.to_vec());
                acc(*table, gt);
            }
            Op::Relu { x } => {
                let xv = &self.value(*x).data;
                acc(*x, g.iter().zip(xv).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Dropout { x, mask } => {
                acc(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect());
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, m) = self.dims(*x);
                let gam = &self.value(*gamma).data;
                let (gg, gb) = affine_grads(g, xhat, m);
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    let dxh: Vec<f64> = (0..m).map(|c| g[r * m + c] * gam[c]).collect();
                    let xh = &xhat[r * m..(r + 1) * m];
                    let s1: f64 = dxh.iter().sum();
                    let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                    for c in 0..m {
                        gx[r * m + c] = inv_std[r] / m as f64 * (m as f64 * dxh[c] - s1 - xh[c] * s2);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, m) = self.dims(*x);
                let gam = &self.value(*gamma).data;
                let (gg, gb) = affine_grads(g, xhat, m);
                let mut s1 = vec![0.0; m];
                let mut s2 = vec![0.0; m];
                for r in 0..n {
                    for c in 0..m {
                        let d = g[r * m + c] * gam[c];
                        s1[c] += d;
                        s2[c] += d * xhat[r * m + c];
                    }
                }
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        let d = g[r * m + c] * gam[c];
                        gx[r * m + c] = inv_std[c] / n as f64 * (n as f64 * d - s1[c] - xhat[r * m + c] * s2[c]);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::FrozenNorm { x, gamma, beta, xhat, scale } => {
                let (_, m) = self.dims(*x);
                let gam = &self.value(*gamma).data;
                let (gg, gb) = affine_grads(g, xhat, m);
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * gam[i % m] * scale[i % m])
                    .collect();
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::Attention(c) => {
                let (gq, gk, gv) = self.attention_backward(c, g);
                acc(c.q, gq);
                acc(c.k, gk);
                acc(c.v, gv);
            }
            Op::MeanPool { x, seq } => {
                let (n, m) = self.dims(*x);
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    let b = r / seq;
                    for c in 0..m {
                        gx[r * m + c] = g[b * m + c] / *seq as f64;
                    }
                }
                acc(*x, gx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (n, c) = self.dims(*logits);
                let scale = g[0] / n as f64;
                let mut gl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * c + l] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, gl);
            }
        }
    }

    fn attention_backward(&self, c: &AttentionCache, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, dm) = self.dims(c.q);
        let (heads, seq) = (c.heads, c.seq);
        let batch = n / seq;
        let dk = dm / heads;
        let qv = &self.value(c.q).data;
        let kv = &self.value(c.k).data;
        let vv = &self.value(c.v).data;
        let mut gq = vec![0.0; n * dm];
        let mut gk = vec![0.0; n * dm];
        let mut gv = vec![0.0; n * dm];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..seq {
                    let w = &c.weights[((b * heads + h) * seq + i) * seq..][..seq];
                    let goi = &g[(b * seq + i) * dm + h * dk..][..dk];
                    for j in 0..seq {
                        let off = (b * seq + j) * dm + h * dk;
                        let vj = &vv[off..off + dk];
                        dp[j] = goi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        for (gvj, go) in gv[off..off + dk].iter_mut().zip(goi) {
                            *gvj += w[j] * go;
                        }
                    }
                    let row_dot: f64 = dp.iter().zip(w).map(|(a, b)| a * b).sum();
                    let qoff = (b * seq + i) * dm + h * dk;
                    for j in 0..seq {
                        let ds = w[j] * (dp[j] - row_dot) * c.score_scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let koff = (b * seq + j) * dm + h * dk;
                        for t in 0..dk {
                            gq[qoff + t] += ds * kv[koff + t];
                            gk[koff + t] += ds * qv[qoff + t];
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn affine_grads(g: &[f64], xhat: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gg = vec![0.0; m];
    let mut gb = vec![0.0; m];
    for (i, (gv, xv)) in g.iter().zip(xhat).enumerate() {
        gg[i % m] += gv * xv;
        gb[i % m] += gv;
    }
    (gg, gb)
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { x, w } => vec![*x, *w],
        Op::AddBias { x, b } => vec![*x, *b],
        Op::Add { a, b } => vec![*a, *b],
        Op::AddTiled { x, table, .. } => vec![*x, *table],
        Op::Relu { x } | Op::Dropout { x, .. } | Op::MeanPool { x, .. } => vec![*x],
        Op::LayerNorm { x, gamma, beta, .. }
        | Op::BatchNorm { x, gamma, beta, .. }
        | Op::FrozenNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Attention(c) => vec![c.q, c.k, c.v],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;
    use rand::Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Builds a graph from leaves, returns the scalar output node.
    type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

    /// Compares tape gradients against central differences for every leaf
    /// entry.
    fn check_gradients(leaves: Vec<Tensor>, build: &Build, tol: f64) {
        let eval = |vals: &[Tensor]| -> f64 {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let out = build(&mut t, &vars);
            t.value(out).data[0]
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads.get(vars[li]).map(|g| g.to_vec()).unwrap_or(vec![0.0; leaf.len()]);
            for e in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data[e] += h;
                let mut minus = leaves.clone();
                minus[li].data[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                assert!(
                    (fd - g[e]).abs() <= tol.max(1e-2 * fd.abs()).max(tol),
                    "leaf {li} entry {e}: fd {fd} vs tape {}",
                    g[e]
                );
            }
        }
    }

    /// Weighted sum of all entries so that every output matters.
    fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Var {
        let (n, m) = t.value(x).as_2d();
        let mut rng = seeded(seed);
        let w = t.leaf(rand_tensor(&mut rng, vec![m, 1]));
        let y = t.matmul(x, w).unwrap();
        let ones = t.leaf(Tensor::filled(vec![1, n], 1.0 / n as f64));
        t.matmul(ones, y).unwrap()
    }

    #[test]
    fn linear_gradient_is_x_transpose_upstream() {
        let mut rng = seeded(1);
        let x = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![4, 2]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w);
        let y = tape.matmul(xv, wv).unwrap();
        let ones = tape.leaf(Tensor::filled(vec![1, 3], 1.0));
        let s = tape.matmul(ones, y).unwrap();
        let probe = tape.leaf(Tensor::new(vec![2, 1], vec![1.0, -2.0]));
        let out = tape.matmul(s, probe).unwrap();
        let grads = tape.backward(out).unwrap();
        // upstream on y is [1, −2] for every row
        let gw = grads.get(wv).unwrap();
        for k in 0..4 {
            let col_sum: f64 = (0..3).map(|r| x.data[r * 4 + k]).sum();
            assert!((gw[k * 2] - col_sum).abs() < 1e-12);
            assert!((gw[k * 2 + 1] + 2.0 * col_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = seeded(2);
        let leaves = vec![
            rand_tensor(&mut rng, vec![2, 8]),
            rand_tensor(&mut rng, vec![8]),
            rand_tensor(&mut rng, vec![8]),
        ];
        check_gradients(
            leaves,
            &|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(t, y, 7)
            },
            1e-6,
        );
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut rng = seeded(3);
        let mut t = Tape::new();
        let x = t.leaf(rand_tensor(&mut rng, vec![4, 16]));
        let g = t.leaf(Tensor::filled(vec![16], 1.0));
        let b = t.leaf(Tensor::zeros(vec![16]));
        let y = t.layer_norm(x, g, b, 0.0).unwrap();
        for row in t.value(y).data.chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_gradient_and_stats() {
        let mut rng = seeded(4);
        let leaves = vec![
            rand_tensor(&mut rng, vec![6, 5]),
            rand_tensor(&mut rng, vec![5]),
            rand_tensor(&mut rng, vec![5]),
        ];
        check_gradients(
            leaves,
            &|t, v| {
                let (y, _, _) = t.batch_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(t, y, 8)
            },
            1e-6,
        );
    }

    #[test]
    fn batch_norm_needs_two_rows() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![1, 3]));
        let g = t.leaf(Tensor::filled(vec![3], 1.0));
        let b = t.leaf(Tensor::zeros(vec![3]));
        assert!(matches!(t.batch_norm(x, g, b, 1e-5), Err(Error::DegenerateBatch { rows: 1 })));
    }

    #[test]
    fn attention_gradient() {
        let mut rng = seeded(5);
        // batch 2, seq 3, d_model 4, 2 heads
        let leaves = vec![
            rand_tensor(&mut rng, vec![6, 4]),
            rand_tensor(&mut rng, vec![6, 4]),
            rand_tensor(&mut rng, vec![6, 4]),
        ];
        check_gradients(
            leaves.clone(),
            &|t, v| {
                let y = t.attention(v[0], v[1], v[2], 2, 3, None).unwrap();
                weighted_sum(t, y, 9)
            },
            1e-6,
        );
        let bias: Vec<f64> = (0..18).map(|i| -(i as f64) * 0.1).collect();
        check_gradients(
            leaves,
            &move |t, v| {
                let y = t.attention(v[0], v[1], v[2], 2, 3, Some((&bias, 0.5))).unwrap();
                weighted_sum(t, y, 9)
            },
            1e-6,
        );
    }

    #[test]
    fn attention_rows_sum_to_one_and_single_key() {
        let mut rng = seeded(6);
        let mut t = Tape::new();
        let q = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let k = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let v = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let a = t.attention(q, k, v, 2, 3, None).unwrap();
        for row in t.attention_weights(a).unwrap().weights.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let single = t.attention(q, k, v, 2, 1, None).unwrap();
        assert!(t.attention_weights(single).unwrap().weights.iter().all(|&w| w == 1.0));
        assert_eq!(t.value(single).data, t.value(v).data);
    }

    #[test]
    fn alpha_zero_is_standard_attention() {
        let mut rng = seeded(7);
        let mut t = Tape::new();
        let q = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let k = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let v = t.leaf(rand_tensor(&mut rng, vec![6, 4]));
        let bias = vec![-3.0; 18];
        let a = t.attention(q, k, v, 2, 3, None).unwrap();
        let b = t.attention(q, k, v, 2, 3, Some((&bias, 0.0))).unwrap();
        assert_eq!(t.value(a).data, t.value(b).data);
    }

    #[test]
    fn identical_tokens_get_uniform_weights() {
        let mut t = Tape::new();
        let x = Tensor::new(vec![2, 2], vec![0.3, -1.2, 0.3, -1.2]);
        let q = t.leaf(x.clone());
        let k = t.leaf(x.clone());
        let v = t.leaf(x);
        // identical tokens are at distance zero from each other
        let bias = vec![0.0; 4];
        for b in [None, Some((&bias[..], 0.5))] {
            let a = t.attention(q, k, v, 1, 2, b).unwrap();
            let w = t.attention_weights(a).unwrap().weights;
            assert!(w.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn pool_relu_dropout_tiled_gradients() {
        let mut rng = seeded(8);
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
        let leaves = vec![rand_tensor(&mut rng, vec![4, 3]), rand_tensor(&mut rng, vec![2, 3])];
        check_gradients(
            leaves,
            &move |t, v| {
                let x = t.add_tiled(v[0], v[1], 2).unwrap();
                let x = t.relu(x);
                let x = t.dropout(x, mask.clone());
                let p = t.mean_pool(x, 2).unwrap();
                weighted_sum(t, p, 10)
            },
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_values_and_gradient() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::zeros(vec![3, 4]));
        let l = t.cross_entropy(logits, &[0, 1, 3]).unwrap();
        assert!((t.value(l).data[0] - 4f64.ln()).abs() < 1e-15);

        // z·e_y: closed form ln(1 + 3e^{−z}), strictly decreasing in z
        let mut prev = f64::INFINITY;
        for z in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let logits = t.leaf(Tensor::new(vec![1, 4], vec![z, 0.0, 0.0, 0.0]));
            let l = t.cross_entropy(logits, &[0]).unwrap();
            let got = t.value(l).data[0];
            let want = (3.0 * f64::exp(-z)).ln_1p();
            assert!((got - want).abs() <= 1e-12 * want, "z={z}: {got} vs {want}");
            assert!(got < prev);
            prev = got;
        }
        // ±z one-hot scaling at z = 10: ln(1 + 3e^{−2z})
        let logits = t.leaf(Tensor::new(vec![1, 4], vec![10.0, -10.0, -10.0, -10.0]));
        let l = t.cross_entropy(logits, &[0]).unwrap();
        assert!(t.value(l).data[0] < 1e-4);
        let logits = t.leaf(Tensor::new(vec![1, 4], vec![0.0; 4]));

        assert!(matches!(t.cross_entropy(logits, &[4]), Err(Error::LabelOutOfRange { .. })));

        let mut rng = seeded(9);
        check_gradients(
            vec![rand_tensor(&mut rng, vec![3, 4])],
            &|t, v| t.cross_entropy(v[0], &[2, 0, 1]).unwrap(),
            1e-7,
        );
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 1], vec![3.0]));
        let y = t.add(x, x).unwrap();
        let w = t.leaf(Tensor::new(vec![1, 1], vec![1.0]));
        let s = t.matmul(y, w).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0]);
    }
}
