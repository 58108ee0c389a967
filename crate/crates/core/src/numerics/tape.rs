//! Reverse-mode tape over whole-tensor operations.
//!
//! A tape is built fresh for every forward pass. Parameters enter as leaf
//! nodes that remember their [`ParamId`]; [`Tape::backward`] walks the
//! recorded nodes in reverse and accumulates gradients into the store.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::ops::{self, KL_EPS};
use super::{Activation, ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Gather {
        table: NodeId,
        rows: Vec<usize>,
    },
    Conv1d {
        input: NodeId,
        filters: NodeId,
        bias: NodeId,
    },
    Act {
        x: NodeId,
        act: Activation,
    },
    AddRows {
        x: NodeId,
        table: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Transpose(NodeId),
    Softmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    CosineRows {
        a: NodeId,
        b: NodeId,
    },
    Mse {
        a: NodeId,
        b: NodeId,
    },
    KlDiv {
        p: NodeId,
        q: NodeId,
    },
    ClusterLoss {
        p: NodeId,
        row_arg: Vec<usize>,
        dominant: usize,
    },
    StudentT {
        z: NodeId,
        c: NodeId,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    Standardize {
        x: NodeId,
        inv_std: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, NodeId>,
    consumed: bool,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId], name: &'static str) -> Result<NodeId> {
        let value = value.ensure_finite(name)?;
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        let mut value = value.ensure_finite("constant")?;
        value.drop_grad();
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Leaf for a stored parameter; repeated calls return the same node so
    /// weight sharing accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(node) = self.params.get(&id) {
            return *node;
        }
        let p = store.get(id);
        let mut value = p.value.clone();
        value.drop_grad();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad: p.trainable,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.params.insert(id, node);
        node
    }

    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::dim("gather", format!("table {:?}", t.shape())));
        }
        let (n, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::dim("gather", format!("row {r} of {n}")));
            }
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], data)?;
        self.push(
            value,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            &[table],
            "gather",
        )
    }

    /// Convolution without activation; see [`ops::conv1d_linear`].
    pub fn conv1d_linear(&mut self, input: NodeId, filters: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = ops::conv1d_linear(self.value(input), self.value(filters), self.value(bias))?;
        self.push(
            v,
            Op::Conv1d { input, filters, bias },
            &[input, filters, bias],
            "conv1d",
        )
    }

    pub fn conv1d(&mut self, input: NodeId, filters: NodeId, bias: NodeId, act: Activation) -> Result<NodeId> {
        let pre = self.conv1d_linear(input, filters, bias)?;
        self.activation(pre, act)
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        if act == Activation::Identity {
            return Ok(x);
        }
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e = ops::activate(*e, act));
        self.push(v, Op::Act { x, act }, &[x], "activation")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Tanh)
    }

    /// Adds the first `rows(x)` rows of `table` to `x`.
    pub fn add_rows(&mut self, x: NodeId, table: NodeId) -> Result<NodeId> {
        let (xv, tv) = (self.value(x), self.value(table));
        if xv.rank() != 2 || tv.rank() != 2 || xv.cols() != tv.cols() {
            return Err(Error::dim("add_rows", format!("{:?} + {:?}", xv.shape(), tv.shape())));
        }
        if xv.rows() > tv.rows() {
            return Err(Error::Precondition(format!(
                "add_rows: {} rows exceed table of {}",
                xv.rows(),
                tv.rows()
            )));
        }
        let mut v = xv.clone();
        v.data_mut().iter_mut().zip(tv.data()).for_each(|(a, b)| *a = *a + *b);
        self.push(v, Op::AddRows { x, table }, &[x, table], "add_rows")
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::linear(self.value(x), self.value(w), self.value(b))?;
        self.push(v, Op::Linear { x, w, b }, &[x, w, b], "linear")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul { a, b }, &[a, b], "matmul")
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose()?;
        self.push(v, Op::Transpose(x), &[x], "transpose")
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::softmax_rows(self.value(x))?;
        self.push(v, Op::Softmax(x), &[x], "softmax_rows")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|p| self.value(*p).rows())
            .ok_or_else(|| Error::Precondition("concat of nothing".into()))?;
        if parts
            .iter()
            .any(|p| self.value(*p).rank() != 2 || self.value(*p).rows() != rows)
        {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let v = Tensor::new(vec![rows, width], data)?;
        self.push(v, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts
            .first()
            .map(|p| self.value(*p).cols())
            .ok_or_else(|| Error::Precondition("concat of nothing".into()))?;
        if parts
            .iter()
            .any(|p| self.value(*p).rank() != 2 || self.value(*p).cols() != cols)
        {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
            rows += self.value(*p).rows();
        }
        let v = Tensor::new(vec![rows, cols], data)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    pub fn cosine_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::cosine_rows(self.value(a), self.value(b))?;
        self.push(v, Op::CosineRows { a, b }, &[a, b], "cosine_rows")
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mse(self.value(a), self.value(b))?;
        self.push(Tensor::scalar(v), Op::Mse { a, b }, &[a, b], "mse")
    }

    pub fn kl_div(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let v = ops::kl_div(self.value(p), self.value(q))?;
        self.push(Tensor::scalar(v), Op::KlDiv { p, q }, &[p, q], "kl_div")
    }

    pub fn cluster_loss(&mut self, p: NodeId) -> Result<NodeId> {
        let (v, row_arg, dominant) = ops::cluster_loss(self.value(p))?;
        self.push(
            Tensor::scalar(v),
            Op::ClusterLoss { p, row_arg, dominant },
            &[p],
            "cluster_loss",
        )
    }

    pub fn student_t(&mut self, z: NodeId, c: NodeId) -> Result<NodeId> {
        let v = ops::student_t(self.value(z), self.value(c))?;
        self.push(v, Op::StudentT { z, c }, &[z, c], "soft_assign")
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = ops::softmax_cross_entropy(self.value(logits), labels)?;
        self.push(
            Tensor::scalar(v),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
            "cross_entropy",
        )
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e = *e * factor);
        self.push(v, Op::Scale { x, factor }, &[x], "scale")
    }

    /// Column-wise standardisation over the batch, see [`ops::standardize_cols`].
    pub fn standardize_cols(&mut self, x: NodeId, eps: T) -> Result<NodeId> {
        let (v, inv_std) = ops::standardize_cols(self.value(x), eps)?;
        self.push(v, Op::Standardize { x, inv_std }, &[x], "standardize")
    }

    /// Back-propagates from the scalar `loss` and accumulates into `store`.
    ///
    /// A tape can be differentiated once; a second call is a state error,
    /// as is differentiating a node that was never recorded.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward called twice on one tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward without a recorded forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[id.0];
            if !n.needs_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
                store.accumulate_grad(*pid, g);
            }
            Op::Gather { table, rows } => {
                let d = out.cols();
                acc(*table, &mut |gt| {
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..d {
                            gt[r * d + c] = gt[r * d + c] + g[i * d + c];
                        }
                    }
                });
            }
            Op::Conv1d { input, filters, bias } => {
                let x = self.value(*input);
                let w = self.value(*filters);
                let (depth, n, k) = (x.cols(), w.shape()[0], w.shape()[1]);
                let window = k * depth;
                let out_len = out.rows();
                acc(*input, &mut |gx| {
                    for j in 0..out_len {
                        for f in 0..n {
                            let gj = g[j * n + f];
                            let wf = &w.data()[f * window..(f + 1) * window];
                            for (dst, wv) in gx[j * depth..j * depth + window].iter_mut().zip(wf) {
                                *dst = *dst + gj * *wv;
                            }
                        }
                    }
                });
                acc(*filters, &mut |gw| {
                    for j in 0..out_len {
                        let win = &x.data()[j * depth..j * depth + window];
                        for f in 0..n {
                            let gj = g[j * n + f];
                            for (dst, xv) in gw[f * window..(f + 1) * window].iter_mut().zip(win) {
                                *dst = *dst + gj * *xv;
                            }
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for j in 0..out_len {
                        for f in 0..n {
                            gb[f] = gb[f] + g[j * n + f];
                        }
                    }
                });
            }
            Op::Act { x, act } => {
                let act = *act;
                acc(*x, &mut |gx| {
                    for ((dst, gv), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        let local = match act {
                            Activation::Tanh => T::one() - *y * *y,
                            Activation::Identity => T::one(),
                        };
                        *dst = *dst + *gv * local;
                    }
                });
            }
            Op::AddRows { x, table } => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*table, &mut |gt| add_into(&mut gt[..g.len()], g));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                matmul_backward(xv, wv, g, *x, *w, &mut acc);
                let o = out.cols();
                acc(*b, &mut |gb| {
                    for row in g.chunks(o) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                matmul_backward(av, bv, g, *a, *b, &mut acc);
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                acc(*x, &mut |gx| {
                    // out is [r×c], x is [c×r]
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] = gx[j * r + i] + g[i * c + j];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for ((gx_row, g_row), y_row) in gx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let dot = g_row.iter().zip(y_row).fold(T::zero(), |a, (gv, y)| a + *gv * *y);
                        for ((dst, gv), y) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *dst = *dst + *y * (*gv - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let width = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    acc(*p, &mut |gp| {
                        for (i, row) in g.chunks(width).enumerate() {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &row[offset..offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::CosineRows { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for i in 0..av.rows() {
                    let (ar, br) = (av.row(i), bv.row(i));
                    let na = ar.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
                    let nb = br.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
                    if na == T::zero() || nb == T::zero() {
                        continue;
                    }
                    let dot = ar.iter().zip(br).fold(T::zero(), |s, (x, y)| s + *x * *y);
                    let cos = dot / (na * nb);
                    let gi = g[i];
                    for t in 0..k {
                        ga[i * k + t] = gi * (br[t] / (na * nb) - cos * ar[t] / (na * na));
                        gb[i * k + t] = gi * (ar[t] / (na * nb) - cos * br[t] / (nb * nb));
                    }
                }
                acc(*a, &mut |dst| add_into(dst, &ga));
                acc(*b, &mut |dst| add_into(dst, &gb));
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = T::of(2.0) * g[0] / T::of(av.rows() as f64);
                let diff: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| (*x - *y) * scale)
                    .collect();
                acc(*a, &mut |dst| add_into(dst, &diff));
                acc(*b, &mut |dst| {
                    for (d, v) in dst.iter_mut().zip(&diff) {
                        *d = *d - *v;
                    }
                });
            }
            Op::KlDiv { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let eps = T::of(KL_EPS);
                acc(*p, &mut |dst| {
                    for ((d, pi), qi) in dst.iter_mut().zip(pv.data()).zip(qv.data()) {
                        if *pi > T::zero() {
                            *d = *d + g[0] * ((*pi / qi.max(eps)).ln() + T::one());
                        }
                    }
                });
                acc(*q, &mut |dst| {
                    for ((d, pi), qi) in dst.iter_mut().zip(pv.data()).zip(qv.data()) {
                        if *qi > eps {
                            *d = *d - g[0] * *pi / *qi;
                        }
                    }
                });
            }
            Op::ClusterLoss { p, row_arg, dominant } => {
                let pv = self.value(*p);
                let (n, k) = (pv.rows(), pv.cols());
                let inv_n = g[0] / T::of(n as f64);
                acc(*p, &mut |dst| {
                    for (i, &j) in row_arg.iter().enumerate() {
                        dst[i * k + j] = dst[i * k + j] - inv_n;
                        let m = i * k + *dominant;
                        dst[m] = dst[m] + T::of(2.0) * pv.data()[m] * inv_n;
                    }
                });
            }
            Op::StudentT { z, c } => {
                let (zv, cv) = (self.value(*z), self.value(*c));
                let (n, d, k) = (zv.rows(), zv.cols(), cv.rows());
                let mut gz = vec![T::zero(); zv.len()];
                let mut gc = vec![T::zero(); cv.len()];
                for i in 0..n {
                    let q_row = out.row(i);
                    let g_row = &g[i * k..(i + 1) * k];
                    let dot = q_row.iter().zip(g_row).fold(T::zero(), |s, (q, gv)| s + *q * *gv);
                    for j in 0..k {
                        let zi = zv.row(i);
                        let cj = cv.row(j);
                        let dist = zi.iter().zip(cj).fold(T::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b));
                        let w = T::one() / (T::one() + dist);
                        // dL/d(dist²) = −w·q·(g − Σ g q)
                        let dd = -w * q_row[j] * (g_row[j] - dot);
                        for t in 0..d {
                            let diff = T::of(2.0) * (zi[t] - cj[t]) * dd;
                            gz[i * d + t] = gz[i * d + t] + diff;
                            gc[j * d + t] = gc[j * d + t] - diff;
                        }
                    }
                }
                acc(*z, &mut |dst| add_into(dst, &gz));
                acc(*c, &mut |dst| add_into(dst, &gc));
            }
            Op::SoftmaxXent { logits, labels } => {
                let lv = self.value(*logits);
                let probs = ops::softmax_rows(lv)?;
                let k = lv.cols();
                let scale = g[0] / T::of(labels.len() as f64);
                acc(*logits, &mut |dst| {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == y { T::one() } else { T::zero() };
                            dst[i * k + j] = dst[i * k + j] + (probs.at(i, j) - target) * scale;
                        }
                    }
                });
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                acc(*x, &mut |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d = *d + *gv * f;
                    }
                });
            }
            Op::Standardize { x, inv_std } => {
                let (n, k) = (out.rows(), out.cols());
                let nf = T::of(n as f64);
                let mut gx = vec![T::zero(); n * k];
                for (c, inv) in inv_std.iter().enumerate() {
                    let (mut sum_g, mut sum_gy) = (T::zero(), T::zero());
                    for i in 0..n {
                        sum_g = sum_g + g[i * k + c];
                        sum_gy = sum_gy + g[i * k + c] * out.at(i, c);
                    }
                    for i in 0..n {
                        gx[i * k + c] = *inv * (g[i * k + c] - sum_g / nf - out.at(i, c) * sum_gy / nf);
                    }
                }
                acc(*x, &mut |dst| add_into(dst, &gx));
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Gradients of `A·B` given upstream `g` of shape `[m×n]`.
fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    a_id: NodeId,
    b_id: NodeId,
    acc: &mut impl FnMut(NodeId, &mut dyn FnMut(&mut [T])),
) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    acc(a_id, &mut |ga| {
        for i in 0..m {
            let g_row = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let b_row = &b.data()[p * n..(p + 1) * n];
                let s = g_row.iter().zip(b_row).fold(T::zero(), |s, (x, y)| s + *x * *y);
                ga[i * k + p] = ga[i * k + p] + s;
            }
        }
    });
    acc(b_id, &mut |gb| {
        for i in 0..m {
            let g_row = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a.data()[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                    *d = *d + aip * *gv;
                }
            }
        }
    });
}
