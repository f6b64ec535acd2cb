//! Reverse-mode tape over the handful of tensor primitives the attention
//! and pose-encoder kernels use.
//!
//! Every node stores its forward value. Values are produced by [`eval`],
//! the same routine [`Tape::replay`] uses, so a replay reproduces them
//! bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddBias(Var, Var),
    Softmax(Var, f64),
    LayerNorm(Var, f64),
    Relu(Var),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var, Vec<usize>),
    Permute(Var, Vec<usize>),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Sum(Var),
    WeightedSqErr {
        pred: Var,
        target: Tensor,
        weights: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive applications for vector-Jacobian products.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn conv_out(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// Forward rule shared by recording and replay.
fn eval<'a, F: Fn(usize) -> &'a Tensor>(op: &Op, get: F) -> Result<Tensor> {
    let v = |x: &Var| get(x.0);
    Ok(match op {
        Op::Leaf => unreachable!("leaves have no forward rule"),
        Op::MatMul(a, b) => tensor::matmul(v(a), v(b))?,
        Op::Transpose(a) => v(a).transpose2()?,
        Op::Add(a, b) => v(a).add(v(b))?,
        Op::Mul(a, b) => v(a).mul(v(b))?,
        Op::MulConst(a, c) => v(a).mul(c)?,
        Op::Scale(a, s) => v(a).scale(*s),
        Op::AddBias(x, b) => {
            let (x, b) = (v(x), v(b));
            let (_, n) = x.rows_cols();
            if b.len() != n {
                return Err(Error::shape("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        }
        Op::Softmax(x, s) => tensor::softmax_rows(v(x), *s),
        Op::LayerNorm(x, eps) => {
            let x = v(x);
            let (_, n) = x.rows_cols();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                let (mean, inv) = row_stats(row, *eps);
                for o in row.iter_mut() {
                    *o = (*o - mean) * inv;
                }
            }
            out
        }
        Op::Relu(x) => v(x).map(|a| if a > 0.0 { a } else { 0.0 }),
        Op::SliceRows(x, s, e) => {
            let x = v(x);
            let (r, c) = x.rows_cols();
            if s >= e || *e > r {
                return Err(Error::shape("slice_rows", format!("[{s},{e}) of {r} rows")));
            }
            Tensor::from_parts(vec![e - s, c], x.data()[s * c..e * c].to_vec())
        }
        Op::ConcatRows(parts) => {
            let c = get(parts[0].0).rows_cols().1;
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let (r, pc) = v(p).rows_cols();
                if pc != c {
                    return Err(Error::shape("concat_rows", format!("width {pc} vs {c}")));
                }
                rows += r;
                data.extend_from_slice(v(p).data());
            }
            Tensor::from_parts(vec![rows, c], data)
        }
        Op::SliceCols(x, s, e) => {
            let x = v(x);
            let (r, c) = x.rows_cols();
            if s >= e || *e > c {
                return Err(Error::shape("slice_cols", format!("[{s},{e}) of {c} cols")));
            }
            let w = e - s;
            let mut data = Vec::with_capacity(r * w);
            for row in x.data().chunks(c) {
                data.extend_from_slice(&row[*s..*e]);
            }
            Tensor::from_parts(vec![r, w], data)
        }
        Op::ConcatCols(parts) => {
            let r = get(parts[0].0).rows_cols().0;
            let widths: Vec<usize> = parts.iter().map(|p| v(p).rows_cols().1).collect();
            for p in parts {
                if v(p).rows_cols().0 != r {
                    return Err(Error::shape("concat_cols", "row count differs"));
                }
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for (p, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&v(p).data()[i * w..(i + 1) * w]);
                }
            }
            Tensor::from_parts(vec![r, total], data)
        }
        Op::Reshape(x, shape) => v(x).reshape(shape)?,
        Op::Permute(x, perm) => permute(v(x), perm)?,
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => conv2d_forward(v(x), v(w), v(b), *stride, *pad)?,
        Op::Sum(x) => Tensor::scalar(v(x).sum()),
        Op::WeightedSqErr {
            pred,
            target,
            weights,
        } => {
            let p = v(pred);
            if p.shape() != target.shape() || p.shape() != weights.shape() {
                return Err(Error::shape(
                    "weighted_sq_err",
                    format!("{:?} / {:?} / {:?}", p.shape(), target.shape(), weights.shape()),
                ));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for ((&a, &t), &w) in p.data().iter().zip(target.data()).zip(weights.data()) {
                num += w * (a - t) * (a - t);
                den += w;
            }
            Tensor::scalar(num / den)
        }
    })
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, 1.0 / math::sqrt(var + eps))
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("perm {perm:?} for rank {rank}")));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

struct ConvDims {
    t: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || b.len() != ws[0] {
        return Err(Error::shape(
            "conv2d",
            format!("x {xs:?}, w {ws:?}, b {:?}", b.shape()),
        ));
    }
    let k = ws[2];
    if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k || stride == 0 {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    Ok(ConvDims {
        t: xs[0],
        cin: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ws[0],
        k,
        ho: conv_out(xs[2], k, stride, pad),
        wo: conv_out(xs[3], k, stride, pad),
    })
}

fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let d = conv_dims(x, w, b, stride, pad)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; d.t * d.cout * d.ho * d.wo];
    for t in 0..d.t {
        for co in 0..d.cout {
            for i in 0..d.ho {
                for j in 0..d.wo {
                    let mut acc = b.data()[co];
                    for ci in 0..d.cin {
                        for ki in 0..d.k {
                            let y = (i * stride + ki) as isize - pad as isize;
                            if y < 0 || y >= d.h as isize {
                                continue;
                            }
                            for kj in 0..d.k {
                                let xx = (j * stride + kj) as isize - pad as isize;
                                if xx < 0 || xx >= d.w as isize {
                                    continue;
                                }
                                acc += wd[((co * d.cin + ci) * d.k + ki) * d.k + kj]
                                    * xd[((t * d.cin + ci) * d.h + y as usize) * d.w + xx as usize];
                            }
                        }
                    }
                    out[((t * d.cout + co) * d.ho + i) * d.wo + j] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.t, d.cout, d.ho, d.wo], out))
}

/// Plain 2D convolution over a `[T × Cin × H × W]` batch.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_forward(x, w, b, stride, pad)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let nodes = &self.nodes;
        let value = eval(&op, |i| &nodes[i].value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }
    /// Elementwise product with a constant (no gradient flows into `c`).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        self.push(Op::MulConst(a, c))
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.push(Op::AddBias(x, b))
    }
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }
    pub fn softmax_rows(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.push(Op::Softmax(x, scale))
    }
    /// Per-row mean/variance normalization without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.push(Op::LayerNorm(x, eps))
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceRows(x, start, end))
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_rows"));
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols(x, start, end))
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols"));
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(x, shape.to_vec()))
    }
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.push(Op::Permute(x, perm.to_vec()))
    }
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.push(Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        })
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }
    /// `Σ w·(pred − target)² / Σ w` as a scalar node.
    pub fn weighted_sq_err(&mut self, pred: Var, target: Tensor, weights: Tensor) -> Result<Var> {
        self.push(Op::WeightedSqErr {
            pred,
            target,
            weights,
        })
    }

    /// Recomputes every non-leaf node from the recorded ops.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |i| &vals[i])?,
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Vector-Jacobian products of the scalar `out` w.r.t. every node.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.value(out).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(out).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), 1.0));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Tensor| accumulate(grads, v, d);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = tensor::matmul(g, &val(b).transpose2()?)?;
                let db = tensor::matmul(&val(a).transpose2()?, g)?;
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => acc(*a, g.transpose2()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(val(b))?);
                acc(*b, g.mul(val(a))?);
            }
            Op::MulConst(a, c) => acc(*a, g.mul(c)?),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddBias(x, b) => {
                let n = val(b).len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, &gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::from_parts(val(b).shape().to_vec(), db));
            }
            Op::Softmax(x, s) => {
                let y = &node.value;
                let (_, n) = y.rows_cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(n).zip(g.data().chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = s * yv * (gv - dot);
                    }
                }
                acc(*x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::LayerNorm(x, eps) => {
                let xin = val(x);
                let y = &node.value;
                let (_, n) = y.rows_cols();
                let nf = n as f64;
                let mut dx = vec![0.0; y.len()];
                for (((xr, yr), gr), dr) in xin
                    .data()
                    .chunks(n)
                    .zip(y.data().chunks(n))
                    .zip(g.data().chunks(n))
                    .zip(dx.chunks_mut(n))
                {
                    let (_, inv) = row_stats(xr, *eps);
                    let mg = gr.iter().sum::<f64>() / nf;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = inv * (gv - mg - yv * mgy);
                    }
                }
                acc(*x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::Relu(x) => {
                let d = g.zip_map(val(x), "relu_grad", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                acc(*x, d);
            }
            Op::SliceRows(x, s, _) => {
                let src = val(x);
                let (_, c) = src.rows_cols();
                let mut d = vec![0.0; src.len()];
                d[s * c..s * c + g.len()].copy_from_slice(g.data());
                acc(*x, Tensor::from_parts(src.shape().to_vec(), d));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let src = val(p);
                    let n = src.len();
                    acc(*p, Tensor::from_parts(src.shape().to_vec(), g.data()[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::SliceCols(x, s, e) => {
                let src = val(x);
                let (r, c) = src.rows_cols();
                let w = e - s;
                let mut d = vec![0.0; src.len()];
                for i in 0..r {
                    d[i * c + s..i * c + e].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(*x, Tensor::from_parts(src.shape().to_vec(), d));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.rows_cols();
                let mut off = 0;
                for p in parts {
                    let src = val(p);
                    let w = src.rows_cols().1;
                    let mut d = Vec::with_capacity(src.len());
                    for i in 0..r {
                        d.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    acc(*p, Tensor::from_parts(src.shape().to_vec(), d));
                    off += w;
                }
            }
            Op::Reshape(x, _) => acc(*x, g.reshape(val(x).shape())?),
            Op::Permute(x, perm) => acc(*x, permute(g, &inverse_perm(perm))?),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) = conv2d_backward(val(x), val(w), val(b), g, *stride, *pad)?;
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(x).shape(), g.data()[0])),
            Op::WeightedSqErr {
                pred,
                target,
                weights,
            } => {
                let p = val(pred);
                let den: f64 = weights.data().iter().sum();
                let g0 = g.data()[0];
                let d: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weights.data())
                    .map(|((&a, &t), &w)| g0 * 2.0 * w * (a - t) / den)
                    .collect();
                acc(*pred, Tensor::from_parts(p.shape().to_vec(), d));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv_dims(x, w, b, stride, pad)?;
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    for t in 0..d.t {
        for co in 0..d.cout {
            for i in 0..d.ho {
                for j in 0..d.wo {
                    let gv = gd[((t * d.cout + co) * d.ho + i) * d.wo + j];
                    db[co] += gv;
                    for ci in 0..d.cin {
                        for ki in 0..d.k {
                            let y = (i * stride + ki) as isize - pad as isize;
                            if y < 0 || y >= d.h as isize {
                                continue;
                            }
                            for kj in 0..d.k {
                                let xx = (j * stride + kj) as isize - pad as isize;
                                if xx < 0 || xx >= d.w as isize {
                                    continue;
                                }
                                let xi = ((t * d.cin + ci) * d.h + y as usize) * d.w + xx as usize;
                                let wi = ((co * d.cin + ci) * d.k + ki) * d.k + kj;
                                dw[wi] += gv * xd[xi];
                                dx[xi] += gv * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(b.shape().to_vec(), db),
    ))
}

/// Compares the tape gradient of a scalar function against central
/// differences and returns the largest `|g_tape − g_fd| / max(1, |g_fd|)`.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar node built from taped primitives.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    let eval_at = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("grad_check", "function must return a scalar"));
        }
        let s = v.data()[0];
        if !s.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        Ok(s)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::NonFinite("grad_check"));
    }
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_at(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_at(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (plus - minus) / (2.0 * eps);
        let err = math::abs(analytic.data()[i] - central) / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
