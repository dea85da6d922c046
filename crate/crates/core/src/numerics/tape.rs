//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Leaves are either
//! constants, tracked inputs, or parameters pulled from a [`ParamStore`];
//! a parameter leaf requires a gradient only when the parameter is
//! trainable, so frozen weights never accumulate gradient and the backward
//! pass skips work that only frozen leaves would consume.
//!
//! Rank-2 tensors are `[rows, cols]`; token sequences are rows.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    AddIntoRows {
        base: NodeId,
        delta: NodeId,
        offset: usize,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    Softmax(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MseMean(NodeId, NodeId),
    SpecifyGradient {
        x: NodeId,
        loss: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Tensor>>,
    param_grads: Vec<(ParamId, Tensor)>,
    /// Trainable parameters that received no gradient from the loss.
    pub disconnected: Vec<String>,
}

impl Gradients {
    /// Gradient reaching `node`, if it was on a differentiable path.
    pub fn of(&self, node: NodeId) -> Option<&Tensor> {
        self.node_grads.get(node.0).and_then(Option::as_ref)
    }

    /// Gradient of each trainable parameter; disconnected parameters appear
    /// with an all-zero gradient.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.param_grads
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g)
    }

    /// Accumulates `scale * grad` into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        for (id, g) in &self.param_grads {
            store.accumulate_grad(*id, g, scale)?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// A constant leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked but which is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// The leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let id = store.id(name)?;
        if let Some(&n) = self.param_leaves.get(&id) {
            return Ok(n);
        }
        let node = self.push(
            store.value(id).clone(),
            Op::Param,
            store.is_trainable(id),
        );
        self.param_leaves.insert(id, node);
        Ok(node)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// `x[r, c] + bias[c]` for `x: [rows, cols]`, `bias: [cols]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, cols) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.len() != cols {
            return Err(Error::Shape(format!(
                "bias of {} entries for {} columns",
                b.len(),
                cols
            )));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// `base` with `delta` added into rows `offset..offset + delta.rows`.
    pub fn add_into_rows(&mut self, base: NodeId, delta: NodeId, offset: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(base).dims2()?;
        let (drows, dcols) = self.value(delta).dims2()?;
        if dcols != cols || offset + drows > rows {
            return Err(Error::Shape(format!(
                "cannot add [{drows}, {dcols}] at row {offset} of [{rows}, {cols}]"
            )));
        }
        let mut out = self.value(base).clone();
        let dst = &mut out.data_mut()[offset * cols..(offset + drows) * cols];
        for (o, d) in dst.iter_mut().zip(self.value(delta).data()) {
            *o += d;
        }
        let rg = self.rg(&[base, delta]);
        Ok(self.push(
            out,
            Op::AddIntoRows {
                base,
                delta,
                offset,
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with affine `gain`/`bias` of length `cols`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::Shape("layer norm affine size mismatch".into()));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(&[rows, cols], out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(gelu);
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, cols) = self.value(x).dims2()?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Multi-head scaled dot-product attention without masking.
    /// `q`, `k`, `v` are `[tokens, d]`; heads split the columns evenly.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let (n, d) = self.value(q).dims2()?;
        if self.value(k).shape() != [n, d] || self.value(v).shape() != [n, d] {
            return Err(Error::Shape("attention q/k/v shapes differ".into()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{d} columns not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut qh = vec![0.0; n * dh];
        let mut kh = vec![0.0; n * dh];
        let mut vh = vec![0.0; n * dh];
        let mut oh = vec![0.0; n * dh];
        for h in 0..heads {
            gather_cols(qv, d, h * dh, dh, &mut qh);
            gather_cols(kv, d, h * dh, dh, &mut kh);
            gather_cols(vv, d, h * dh, dh, &mut vh);
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            gemm(n, dh, n, &qh, false, &kh, true, p, 0.0);
            for row in p.chunks_mut(n) {
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(row);
            }
            gemm(n, n, dh, p, false, &vh, false, &mut oh, 0.0);
            scatter_cols(&oh, d, h * dh, dh, &mut out);
        }
        let out = Tensor::new(&[n, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Attention probabilities of head `h` from an attention node, `[n, n]`.
    pub fn attention_probs(&self, node: NodeId, h: usize) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, heads, .. } if h < *heads => {
                let n = self.nodes[node.0].value.shape()[0];
                Some(&probs[h * n * n..(h + 1) * n * n])
            }
            _ => None,
        }
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (_, cols) = self.value(*first).dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if c != cols {
                return Err(Error::Shape("concat column mismatch".into()));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > rows {
            return Err(Error::Shape(format!(
                "rows {start}..{} out of {rows}",
                start + len
            )));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(&[len, cols], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(v, Op::Mean(x), rg)
    }

    /// Mean of squared differences, a scalar.
    pub fn mse_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.value(a).sub(self.value(b))?;
        let v = Tensor::scalar(d.data().iter().map(|x| x * x).sum::<f64>() / d.len().max(1) as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MseMean(a, b), rg))
    }

    /// Scalar node whose forward value is the scalar `loss`, and whose
    /// backward pass delivers `upstream * loss * 1` to `x` while sending
    /// nothing to `loss` or anything `loss` was computed from.
    pub fn specify_gradient(&mut self, x: NodeId, loss: NodeId) -> Result<NodeId> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "injected loss must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let v = Tensor::scalar(self.value(loss).data()[0]);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SpecifyGradient { x, loss }, rg))
    }

    /// Reverse-mode gradients of the scalar `loss`. Every trainable
    /// parameter in `store` gets an entry; those off the loss path get zeros
    /// and are listed in [`Gradients::disconnected`].
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &up, &mut grads)?;
            grads[idx] = Some(up);
        }

        let mut param_grads = Vec::new();
        let mut disconnected = Vec::new();
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = self
                .param_leaves
                .get(&id)
                .and_then(|n| grads[n.0].clone());
            match g {
                Some(g) => param_grads.push((id, g)),
                None => {
                    disconnected.push(store.param(id).name.clone());
                    param_grads.push((id, Tensor::zeros(store.value(id).shape())));
                }
            }
        }
        Ok(Gradients {
            node_grads: grads,
            param_grads,
            disconnected,
        })
    }

    fn backprop_node(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let upd = up.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, upd, false, self.value(*b).data(), true, &mut ga, 0.0);
                    self.acc(grads, *a, Tensor::new(&[m, k], ga)?)?;
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, upd, false, &mut gb, 0.0);
                    self.acc(grads, *b, Tensor::new(&[k, n], gb)?)?;
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, up.clone())?;
                self.acc(grads, *b, up.clone())?;
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, up.clone())?;
                self.acc(grads, *b, up.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, up.mul(self.value(*b))?)?;
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, up.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, up.scale(*s))?,
            Op::AddBias(x, bias) => {
                self.acc(grads, *x, up.clone())?;
                if self.requires_grad(*bias) {
                    let cols = self.value(*bias).len();
                    let mut gb = vec![0.0; cols];
                    for row in upd.chunks(cols) {
                        for (g, u) in gb.iter_mut().zip(row) {
                            *g += u;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.acc(grads, *bias, Tensor::new(&shape, gb)?)?;
                }
            }
            Op::AddIntoRows {
                base,
                delta,
                offset,
            } => {
                self.acc(grads, *base, up.clone())?;
                if self.requires_grad(*delta) {
                    let (drows, cols) = self.value(*delta).dims2()?;
                    let gd = upd[offset * cols..(offset + drows) * cols].to_vec();
                    self.acc(grads, *delta, Tensor::new(&[drows, cols], gd)?)?;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let g = self.value(*gain).data();
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut gg = vec![0.0; cols];
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let u = upd[r * cols + c];
                            gg[c] += u * xhat[r * cols + c];
                            gb[c] += u;
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    if self.requires_grad(*gain) {
                        self.acc(grads, *gain, Tensor::new(&gshape, gg)?)?;
                    }
                    if self.requires_grad(*bias) {
                        self.acc(grads, *bias, Tensor::new(&bshape, gb)?)?;
                    }
                }
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = upd[r * cols + c] * g[c];
                            mean_d += d;
                            mean_dx += d * xhat[r * cols + c];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for c in 0..cols {
                            let d = upd[r * cols + c] * g[c];
                            gx[r * cols + c] =
                                rstd[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                        }
                    }
                    self.acc(grads, *x, Tensor::new(&[rows, cols], gx)?)?;
                }
            }
            Op::Gelu(x) => {
                let gx = self.value(*x).zip_map(up, |xv, u| u * gelu_grad(xv))?;
                self.acc(grads, *x, gx)?;
            }
            Op::Softmax(x) => {
                let (_, cols) = node.value.dims2()?;
                let mut gx = vec![0.0; node.value.len()];
                for ((p, u), g) in node
                    .value
                    .data()
                    .chunks(cols)
                    .zip(upd.chunks(cols))
                    .zip(gx.chunks_mut(cols))
                {
                    softmax_backward_row(p, u, g);
                }
                let shape = node.value.shape().to_vec();
                self.acc(grads, *x, Tensor::new(&shape, gx)?)?;
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (n, d) = self.value(*q).dims2()?;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gv = vec![0.0; n * d];
                let mut qh = vec![0.0; n * dh];
                let mut kh = vec![0.0; n * dh];
                let mut vh = vec![0.0; n * dh];
                let mut doh = vec![0.0; n * dh];
                let mut tmp = vec![0.0; n * dh];
                let mut dp = vec![0.0; n * n];
                for h in 0..*heads {
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    gather_cols(upd, d, h * dh, dh, &mut doh);
                    gather_cols(vv, d, h * dh, dh, &mut vh);
                    if self.requires_grad(*v) {
                        gemm(n, n, dh, p, true, &doh, false, &mut tmp, 0.0);
                        scatter_cols(&tmp, d, h * dh, dh, &mut gv);
                    }
                    if !(self.requires_grad(*q) || self.requires_grad(*k)) {
                        continue;
                    }
                    gather_cols(qv, d, h * dh, dh, &mut qh);
                    gather_cols(kv, d, h * dh, dh, &mut kh);
                    gemm(n, dh, n, &doh, false, &vh, true, &mut dp, 0.0);
                    for (prow, drow) in p.chunks(n).zip(dp.chunks_mut(n)) {
                        let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                        for (ds, &pv) in drow.iter_mut().zip(prow) {
                            *ds = pv * (*ds - dot) * scale;
                        }
                    }
                    if self.requires_grad(*q) {
                        gemm(n, n, dh, &dp, false, &kh, false, &mut tmp, 0.0);
                        scatter_cols(&tmp, d, h * dh, dh, &mut gq);
                    }
                    if self.requires_grad(*k) {
                        gemm(n, n, dh, &dp, true, &qh, false, &mut tmp, 0.0);
                        scatter_cols(&tmp, d, h * dh, dh, &mut gk);
                    }
                }
                if self.requires_grad(*q) {
                    self.acc(grads, *q, Tensor::new(&[n, d], gq)?)?;
                }
                if self.requires_grad(*k) {
                    self.acc(grads, *k, Tensor::new(&[n, d], gk)?)?;
                }
                if self.requires_grad(*v) {
                    self.acc(grads, *v, Tensor::new(&[n, d], gv)?)?;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.requires_grad(*p) {
                        let shape = self.value(*p).shape().to_vec();
                        let g = Tensor::new(&shape, upd[offset..offset + len].to_vec())?;
                        self.acc(grads, *p, g)?;
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let mut g = vec![0.0; rows * cols];
                g[start * cols..start * cols + upd.len()].copy_from_slice(upd);
                self.acc(grads, *x, Tensor::new(&[rows, cols], g)?)?;
            }
            Op::Transpose(x) => self.acc(grads, *x, up.transpose()?)?,
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, up.clone().reshape(&shape)?)?;
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, Tensor::full(&shape, upd[0]))?;
            }
            Op::Mean(x) => {
                let shape = self.value(*x).shape().to_vec();
                let n = self.value(*x).len().max(1) as f64;
                self.acc(grads, *x, Tensor::full(&shape, upd[0] / n))?;
            }
            Op::MseMean(a, b) => {
                let diff = self.value(*a).sub(self.value(*b))?;
                let s = 2.0 * upd[0] / diff.len().max(1) as f64;
                self.acc(grads, *a, diff.scale(s))?;
                self.acc(grads, *b, diff.scale(-s))?;
            }
            Op::SpecifyGradient { x, loss } => {
                let g = upd[0] * self.value(*loss).data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, Tensor::full(&shape, g))?;
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(existing) => existing.axpy(1.0, &g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn softmax_backward_row(p: &[f64], up: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(up).map(|(a, b)| a * b).sum();
    for ((o, &pv), &u) in out.iter_mut().zip(p).zip(up) {
        *o = pv * (u - dot);
    }
}

fn gather_cols(src: &[f64], cols: usize, start: usize, width: usize, dst: &mut [f64]) {
    for (row, out) in src.chunks(cols).zip(dst.chunks_mut(width)) {
        out.copy_from_slice(&row[start..start + width]);
    }
}

fn scatter_cols(src: &[f64], cols: usize, start: usize, width: usize, dst: &mut [f64]) {
    for (row, out) in src.chunks(width).zip(dst.chunks_mut(cols)) {
        out[start..start + width].copy_from_slice(row);
    }
}
