//! Forward computations on plain tensors.
//!
//! The tape records these and supplies the matching backward passes.

use crate::error::{Error, Result};

use super::{Activation, Real, Tensor};

/// Clamp applied to `q` inside [`kl_div`] so `log(0)` never occurs.
pub const KL_EPS: f64 = 1e-10;

fn expect_rank2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn activate<T: Real>(x: T, act: Activation) -> T {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Sliding-window convolution without activation.
///
/// `input` is `[T×d]`, `filters` is `[n×k×d]`, `bias` is `[n]`; output is
/// `[(T−k+1)×n]`. Window `j` is the concatenation of input rows `j..j+k`.
pub fn conv1d_linear<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (len, depth) = expect_rank2("conv1d", input)?;
    if filters.rank() != 3 {
        return Err(Error::dim("conv1d", format!("filters {:?}", filters.shape())));
    }
    let (n, k, fd) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if fd != depth {
        return Err(Error::dim(
            "conv1d",
            format!("filter depth {fd} vs input depth {depth}"),
        ));
    }
    if bias.len() != n {
        return Err(Error::dim("conv1d", format!("bias {} vs {n} filters", bias.len())));
    }
    if len < k {
        return Err(Error::Precondition(format!(
            "conv1d: sequence length {len} shorter than filter width {k}"
        )));
    }
    let out_len = len - k + 1;
    let x = input.data();
    let w = filters.data();
    let window = k * depth;
    let mut out = vec![T::zero(); out_len * n];
    for j in 0..out_len {
        // Rows j..j+k are contiguous in row-major storage.
        let win = &x[j * depth..j * depth + window];
        for f in 0..n {
            let wf = &w[f * window..(f + 1) * window];
            let dot = win.iter().zip(wf).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
            out[j * n + f] = dot + bias.data()[f];
        }
    }
    Tensor::new(vec![out_len, n], out)
}

/// Convolution followed by the activation.
pub fn conv1d<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, bias: &Tensor<T>, act: Activation) -> Result<Tensor<T>> {
    let mut out = conv1d_linear(input, filters, bias)?;
    out.data_mut().iter_mut().for_each(|v| *v = activate(*v, act));
    out.ensure_finite("conv1d")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, _) = expect_rank2("softmax_rows", logits)?;
    let mut out = logits.clone();
    out.drop_grad();
    for i in 0..rows {
        softmax_in_place(out.row_mut(i));
    }
    out.ensure_finite("softmax_rows")
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Cosine similarity. Two zero vectors (or one) give 0.
pub fn cosine<T: Real>(u: &[T], v: &[T]) -> T {
    let (dot, nu, nv) = u
        .iter()
        .zip(v)
        .fold((T::zero(), T::zero(), T::zero()), |(d, a, b), (x, y)| {
            (d + *x * *y, a + *x * *x, b + *y * *y)
        });
    let denom = (nu * nv).sqrt();
    if denom == T::zero() {
        T::zero()
    } else {
        (dot / denom).max(-T::one()).min(T::one())
    }
}

pub fn cosine_rows<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("cosine_rows", a, b)?;
    let (rows, _) = expect_rank2("cosine_rows", a)?;
    let data = (0..rows).map(|i| cosine(a.row(i), b.row(i))).collect();
    Tensor::new(vec![rows, 1], data)
}

/// `(1/N)·Σ_i ‖a_i − b_i‖²` with `N` the number of rows.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    same_shape("mse", a, b)?;
    let n = T::of(a.rows() as f64);
    let sum = a
        .data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y));
    Ok(sum / n)
}

/// `Σ_ij p_ij·log(p_ij / q_ij)` with `0·log(0/q) = 0` and `q` clamped at [`KL_EPS`].
pub fn kl_div<T: Real>(p: &Tensor<T>, q: &Tensor<T>) -> Result<T> {
    same_shape("kl_div", p, q)?;
    let eps = T::of(KL_EPS);
    let total = p
        .data()
        .iter()
        .zip(q.data())
        .filter(|(pi, _)| **pi > T::zero())
        .fold(T::zero(), |acc, (pi, qi)| acc + *pi * (*pi / qi.max(eps)).ln());
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("kl_div"))
    }
}

/// Standardises each column of `x: [N×K]` to zero mean and unit
/// (population) variance, with `eps` added to the variance. Returns the
/// result and the per-column `1/σ`.
pub fn standardize_cols<T: Real>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, k) = expect_rank2("standardize", x)?;
    if n == 0 {
        return Err(Error::Precondition("standardize on empty batch".into()));
    }
    let nf = T::of(n as f64);
    let mut out = x.clone();
    out.drop_grad();
    let mut inv_std = Vec::with_capacity(k);
    for c in 0..k {
        let mean = (0..n).fold(T::zero(), |s, i| s + x.at(i, c)) / nf;
        let var = (0..n).fold(T::zero(), |s, i| s + (x.at(i, c) - mean) * (x.at(i, c) - mean)) / nf;
        let inv = T::one() / (var + eps).sqrt();
        for i in 0..n {
            out.data_mut()[i * k + c] = (x.at(i, c) - mean) * inv;
        }
        inv_std.push(inv);
    }
    Ok((out, inv_std))
}

/// `x·W + b` for `x: [N×I]`, `W: [I×O]`, `b: [O]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = matmul(x, w)?;
    let o = out.cols();
    if b.len() != o {
        return Err(Error::dim("linear", format!("bias {} vs {o} outputs", b.len())));
    }
    for i in 0..out.rows() {
        for (v, bj) in out.row_mut(i).iter_mut().zip(b.data()) {
            *v = *v + *bj;
        }
    }
    Ok(out)
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = expect_rank2("matmul", a)?;
    let (k2, n) = expect_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", format!("[{m}×{k}]·[{k2}×{n}]")));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (o, &bpj) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o = *o + aip * bpj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Clustering objective on class probabilities `p: [N×K]`:
/// `−(1/N)·Σ_i max_j p_ij + max_j (1/N)·Σ_i p_ij²`.
///
/// The first term rewards confident rows, the second penalises the
/// cluster that soaks up the most squared mass. Returns the loss together
/// with the per-row argmax and the dominant cluster (first index on ties).
pub fn cluster_loss<T: Real>(p: &Tensor<T>) -> Result<(T, Vec<usize>, usize)> {
    let (n, k) = expect_rank2("cluster_loss", p)?;
    if n == 0 || k == 0 {
        return Err(Error::Precondition("cluster_loss on empty batch".into()));
    }
    let nf = T::of(n as f64);
    let mut confident = T::zero();
    let mut row_arg = Vec::with_capacity(n);
    let mut mass = vec![T::zero(); k];
    for i in 0..n {
        let row = p.row(i);
        let (arg, best) = argmax(row);
        row_arg.push(arg);
        confident = confident + best;
        for (m, v) in mass.iter_mut().zip(row) {
            *m = *m + *v * *v;
        }
    }
    let (dominant, top) = argmax(&mass);
    Ok((-confident / nf + top / nf, row_arg, dominant))
}

/// Index and value of the largest entry; the first index wins ties.
pub fn argmax<T: Real>(row: &[T]) -> (usize, T) {
    let mut best = (0, row[0]);
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > best.1 {
            best = (j, *v);
        }
    }
    best
}

/// Student's t kernel (one degree of freedom) between rows of `z: [N×D]`
/// and centroids `c: [k×D]`, normalised over centroids.
pub fn student_t<T: Real>(z: &Tensor<T>, centroids: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = expect_rank2("soft_assign", z)?;
    let (k, d2) = expect_rank2("soft_assign", centroids)?;
    if d != d2 {
        return Err(Error::dim("soft_assign", format!("z dim {d} vs centroid dim {d2}")));
    }
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let zi = z.row(i);
        let row = &mut out[i * k..(i + 1) * k];
        for (j, slot) in row.iter_mut().enumerate() {
            let dist: T = zi
                .iter()
                .zip(centroids.row(j))
                .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
            *slot = T::one() / (T::one() + dist);
        }
        let sum = row.iter().copied().fold(T::zero(), |a, b| a + b);
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    Tensor::new(vec![n, k], out)?.ensure_finite("soft_assign")
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let probs = softmax_rows(logits)?;
    if labels.len() != probs.rows() {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), probs.rows()),
        ));
    }
    let k = probs.cols();
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!("label {y} out of range for {k} classes")));
        }
        let logits_row = logits.row(i);
        let max = logits_row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = logits_row.iter().fold(T::zero(), |acc, v| acc + (*v - max).exp()).ln() + max;
        total = total + lse - logits_row[y];
    }
    Ok(total / T::of(labels.len() as f64))
}
