//! Dense-tensor op set with forward and reverse-mode analytic gradients.
//!
//! Both predictive models build their forward pass on a [`Tape`]: every op
//! records its inputs and enough cached activations to produce parameter and
//! input gradients on [`Tape::backward`]. The op set is limited to what this
//! pipeline needs; there is no general autograd here. Finite differences
//! ([`grad_check`]) are test-only and never used for training.
//!
//! All arithmetic is f64.

use crate::{Error, Result};

/// Three-axis tensor (channels × sequence × features), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[(c * self.dims[1] + t) * self.dims[2] + f]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, t: usize, f: usize) -> &mut f64 {
        &mut self.data[(c * self.dims[1] + t) * self.dims[2] + f]
    }
}

/// Fully connected layer parameters, weight stored row-major (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_out: usize,
    pub n_in: usize,
}

impl DenseLayer {
    pub fn new(weight: Vec<f64>, bias: Vec<f64>, n_out: usize, n_in: usize) -> Result<Self> {
        if weight.len() != n_out * n_in || bias.len() != n_out {
            return Err(Error::ShapeMismatch(format!(
                "dense layer {n_out}x{n_in}: weight len {}, bias len {}",
                weight.len(),
                bias.len()
            )));
        }
        Ok(DenseLayer { weight, bias, n_out, n_in })
    }
}

// ---------------------------------------------------------------------------
// Scalar kernels shared by the eager surface and the tape ops.
// ---------------------------------------------------------------------------

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)), computed without overflow at either tail.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(1.0 + (-x).exp()).ln()
    } else {
        x - (1.0 + x.exp()).ln()
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact-erf GELU: x · Φ(x).
pub fn gelu(x: f64) -> f64 {
    x * norm_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    norm_cdf(x) + x * pdf
}

fn softmax_inplace(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

// ---------------------------------------------------------------------------
// Eager helpers (thin wrappers, same kernels as the tape ops).
// ---------------------------------------------------------------------------

/// y = W·x + b.
pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.n_in {
        return Err(Error::ShapeMismatch(format!(
            "dense input len {} != {}",
            x.len(),
            layer.n_in
        )));
    }
    let mut y = layer.bias.clone();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &layer.weight[o * layer.n_in..(o + 1) * layer.n_in];
        *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    Ok(y)
}

/// Layer normalization over the whole vector, then affine gain/shift.
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gain.len() != x.len() || shift.len() != x.len() {
        return Err(Error::ShapeMismatch("layer_norm gain/shift length".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(shift))
        .map(|(v, (g, s))| g * (v - mean) * inv + s)
        .collect())
}

/// Max-shifted softmax over a full vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    softmax_inplace(&mut y);
    y
}

/// Scaled dot-product attention over row matrices (rows × d each). With
/// `causal`, row t attends only to positions ≤ t.
pub fn scaled_dot_attention(
    queries: &[f64],
    keys: &[f64],
    values: &[f64],
    rows: usize,
    d: usize,
    d_v: usize,
    causal: bool,
) -> Result<Vec<f64>> {
    if queries.len() != rows * d || keys.len() != rows * d || values.len() != rows * d_v {
        return Err(Error::ShapeMismatch("attention matrix dims".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; rows * d_v];
    let mut scores = vec![0.0; rows];
    for t in 0..rows {
        let limit = if causal { t + 1 } else { rows };
        for (i, s) in scores[..limit].iter_mut().enumerate() {
            *s = queries[t * d..(t + 1) * d]
                .iter()
                .zip(&keys[i * d..(i + 1) * d])
                .map(|(q, k)| q * k)
                .sum::<f64>()
                * scale;
        }
        softmax_inplace(&mut scores[..limit]);
        for (i, &a) in scores[..limit].iter().enumerate() {
            for (j, o) in out[t * d_v..(t + 1) * d_v].iter_mut().enumerate() {
                *o += a * values[i * d_v + j];
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    /// Every row attends to every column.
    Full,
    /// Row t attends to columns ≤ t.
    Causal,
    /// Row t attends to columns < t; row 0 yields an all-zero row.
    StrictCausal,
}

impl Mask {
    fn limit(self, row: usize, cols: usize) -> usize {
        match self {
            Mask::Full => cols,
            Mask::Causal => (row + 1).min(cols),
            Mask::StrictCausal => row.min(cols),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    /// y_i = s·x_i where `s` is a length-1 node.
    MulScalar { x: NodeId, s: NodeId },
    /// Length-1: y = mul·s + add.
    ScalarAffine { s: NodeId, mul: f64 },
    /// Length-1 product of two length-1 nodes.
    MulScalars(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Slice { x: NodeId, start: usize, len: usize },
    /// C = opA(A)·opB(B); A is m×k after optional transpose, B is k×n.
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize, ta: bool, tb: bool },
    Gelu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Ln(NodeId),
    Softmax(NodeId),
    MaskedSoftmaxRows { x: NodeId, rows: usize, cols: usize, mask: Mask },
    /// Normalize each contiguous chunk of `width` entries, shared gain/shift.
    LayerNorm { x: NodeId, gain: NodeId, shift: NodeId, width: usize, eps: f64 },
    /// Dense layer applied along one axis of a 3-axis tensor; the other two
    /// axes act as independent batch dimensions.
    AxisDense { x: NodeId, w: NodeId, b: NodeId, dims: [usize; 3], axis: usize, out: usize },
    Dot(NodeId, NodeId),
    Sum(NodeId),
    /// Row-major rank-1 matrix a ⊗ b (len(a) × len(b)).
    Outer(NodeId, NodeId),
    /// y_c = Σ_r w_r · M[r,c].
    VecMat { w: NodeId, m: NodeId, rows: usize, cols: usize },
    StackRows { rows: Vec<NodeId>, width: usize },
}

struct Node {
    data: Vec<f64>,
    op: Op,
}

/// Recorded computation; forward values are computed eagerly as ops are
/// pushed, gradients on demand in one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].data[0]
    }

    pub fn len(&self, id: NodeId) -> usize {
        self.nodes[id.0].data.len()
    }

    fn push(&mut self, data: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { data, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Vec<f64>) -> NodeId {
        self.push(data, Op::Leaf)
    }

    pub fn constant(&mut self, data: Vec<f64>) -> NodeId {
        self.push(data, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len(a), self.len(b), "add length mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push(data, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.data(x).iter().map(|v| c * v).collect();
        self.push(data, Op::Scale(x, c))
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.len(s), 1);
        let sv = self.scalar(s);
        let data = self.data(x).iter().map(|v| sv * v).collect();
        self.push(data, Op::MulScalar { x, s })
    }

    pub fn scalar_affine(&mut self, s: NodeId, mul: f64, add: f64) -> NodeId {
        assert_eq!(self.len(s), 1);
        let v = mul * self.scalar(s) + add;
        self.push(vec![v], Op::ScalarAffine { s, mul })
    }

    pub fn mul_scalars(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len(a), 1);
        assert_eq!(self.len(b), 1);
        let v = self.scalar(a) * self.scalar(b);
        self.push(vec![v], Op::MulScalars(a, b))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut data = self.data(a).to_vec();
        data.extend_from_slice(self.data(b));
        self.push(data, Op::Concat(a, b))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let data = self.data(x)[start..start + len].to_vec();
        self.push(data, Op::Slice { x, start, len })
    }

    fn mm_get(raw: &[f64], trans: bool, rows: usize, cols: usize, r: usize, c: usize) -> f64 {
        // (rows, cols) describe the logical (post-transpose) shape.
        let _ = rows;
        if trans {
            raw[c * rows + r]
        } else {
            raw[r * cols + c]
        }
    }

    pub fn matmul(
        &mut self,
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    ) -> NodeId {
        assert_eq!(self.len(a), m * k, "matmul a size");
        assert_eq!(self.len(b), k * n, "matmul b size");
        let mut data = vec![0.0; m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..m {
                for p in 0..k {
                    let av = Self::mm_get(ad, ta, m, k, i, p);
                    for (j, out) in data[i * n..(i + 1) * n].iter_mut().enumerate() {
                        *out += av * Self::mm_get(bd, tb, k, n, p, j);
                    }
                }
            }
        }
        self.push(data, Op::MatMul { a, b, m, k, n, ta, tb })
    }

    /// W·x + b with W stored out×in.
    pub fn dense(&mut self, w: NodeId, b: NodeId, x: NodeId, n_out: usize, n_in: usize) -> NodeId {
        let wx = self.matmul(w, x, n_out, n_in, 1, false, false);
        self.add(wx, b)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|&v| gelu(v)).collect();
        self.push(data, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|v| v.tanh()).collect();
        self.push(data, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(data, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|&v| log_sigmoid(v)).collect();
        self.push(data, Op::LogSigmoid(x))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|v| v.ln()).collect();
        self.push(data, Op::Ln(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let mut data = self.data(x).to_vec();
        softmax_inplace(&mut data);
        self.push(data, Op::Softmax(x))
    }

    pub fn masked_softmax_rows(&mut self, x: NodeId, rows: usize, cols: usize, mask: Mask) -> NodeId {
        assert_eq!(self.len(x), rows * cols);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let limit = mask.limit(r, cols);
            if limit == 0 {
                continue;
            }
            data[r * cols..r * cols + limit].copy_from_slice(&self.data(x)[r * cols..r * cols + limit]);
            softmax_inplace(&mut data[r * cols..r * cols + limit]);
        }
        self.push(data, Op::MaskedSoftmaxRows { x, rows, cols, mask })
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId, eps: f64) -> NodeId {
        let width = self.len(gain);
        assert_eq!(self.len(shift), width);
        assert_eq!(self.len(x) % width, 0, "layer_norm width must divide input");
        let mut data = vec![0.0; self.len(x)];
        for (chunk, out) in self.data(x).chunks(width).zip(data.chunks_mut(width)) {
            let n = width as f64;
            let mean = chunk.iter().sum::<f64>() / n;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for ((o, &v), (g, s)) in out
                .iter_mut()
                .zip(chunk)
                .zip(self.data(gain).iter().zip(self.data(shift)))
            {
                *o = g * (v - mean) * inv + s;
            }
        }
        self.push(data, Op::LayerNorm { x, gain, shift, width, eps })
    }

    fn axis_geometry(dims: [usize; 3], axis: usize) -> (usize, [usize; 3]) {
        let strides = [dims[1] * dims[2], dims[2], 1];
        (strides[axis], strides)
    }

    /// Apply W·slice + b to every vector running along `axis`; the axis length
    /// becomes `out` in the result, other axes are untouched batch dims.
    pub fn axis_dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: [usize; 3],
        axis: usize,
        out: usize,
    ) -> NodeId {
        let n_in = dims[axis];
        assert_eq!(self.len(x), dims[0] * dims[1] * dims[2]);
        assert_eq!(self.len(w), out * n_in);
        assert_eq!(self.len(b), out);
        let (stride, _) = Self::axis_geometry(dims, axis);
        let mut out_dims = dims;
        out_dims[axis] = out;
        let (out_stride, _) = Self::axis_geometry(out_dims, axis);
        let mut data = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
        let other: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[other[0]] {
            for j in 0..dims[other[1]] {
                let base_in = Self::slice_base(dims, axis, other[0], i, other[1], j);
                let base_out = Self::slice_base(out_dims, axis, other[0], i, other[1], j);
                for o in 0..out {
                    let mut acc = self.data(b)[o];
                    for p in 0..n_in {
                        acc += self.data(w)[o * n_in + p] * self.data(x)[base_in + p * stride];
                    }
                    data[base_out + o * out_stride] = acc;
                }
            }
        }
        self.push(data, Op::AxisDense { x, w, b, dims, axis, out })
    }

    fn slice_base(dims: [usize; 3], axis: usize, a0: usize, i0: usize, a1: usize, i1: usize) -> usize {
        let strides = [dims[1] * dims[2], dims[2], 1];
        let _ = axis;
        strides[a0] * i0 + strides[a1] * i1
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len(a), self.len(b));
        let v = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.data(x).iter().sum();
        self.push(vec![v], Op::Sum(x))
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (p, q) = (self.len(a), self.len(b));
        let mut data = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                data[i * q + j] = self.data(a)[i] * self.data(b)[j];
            }
        }
        self.push(data, Op::Outer(a, b))
    }

    pub fn vec_mat(&mut self, w: NodeId, m: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.len(w), rows);
        assert_eq!(self.len(m), rows * cols);
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            let wv = self.data(w)[r];
            for (c, out) in data.iter_mut().enumerate() {
                *out += wv * self.data(m)[r * cols + c];
            }
        }
        self.push(data, Op::VecMat { w, m, rows, cols })
    }

    pub fn stack_rows(&mut self, rows: Vec<NodeId>, width: usize) -> NodeId {
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in &rows {
            assert_eq!(self.len(r), width, "stack_rows width mismatch");
            data.extend_from_slice(self.data(r));
        }
        self.push(data, Op::StackRows { rows, width })
    }

    /// Causal/strict attention block: softmax(Q·Kᵀ/√d)·V.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        rows: usize,
        d: usize,
        d_v: usize,
        mask: Mask,
    ) -> NodeId {
        let scores = self.matmul(q, k, rows, d, rows, false, true);
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.masked_softmax_rows(scaled, rows, rows, mask);
        self.matmul(weights, v, rows, rows, d_v, false, false)
    }

    /// Reverse sweep from a scalar output node. Returns one gradient buffer
    /// per node, aligned with creation order; callers read the entries for
    /// their leaves.
    pub fn backward(&mut self, output: NodeId) -> Vec<Vec<f64>> {
        assert_eq!(self.len(output), 1, "backward needs a scalar output");
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        grads[output.0][0] = 1.0;
        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    grads[idx] = g;
                }
                Op::Add(a, b) => {
                    for (ga, gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv;
                    }
                    for (gb, gv) in grads[b.0].iter_mut().zip(&g) {
                        *gb += gv;
                    }
                    grads[idx] = g;
                }
                Op::Scale(x, c) => {
                    for (gx, gv) in grads[x.0].iter_mut().zip(&g) {
                        *gx += c * gv;
                    }
                    grads[idx] = g;
                }
                Op::MulScalar { x, s } => {
                    let sv = self.nodes[s.0].data[0];
                    let mut gs = 0.0;
                    for ((gx, gv), xv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[x.0].data) {
                        *gx += sv * gv;
                        gs += xv * gv;
                    }
                    grads[s.0][0] += gs;
                    grads[idx] = g;
                }
                Op::ScalarAffine { s, mul } => {
                    grads[s.0][0] += mul * g[0];
                    grads[idx] = g;
                }
                Op::MulScalars(a, b) => {
                    grads[a.0][0] += self.nodes[b.0].data[0] * g[0];
                    grads[b.0][0] += self.nodes[a.0].data[0] * g[0];
                    grads[idx] = g;
                }
                Op::Concat(a, b) => {
                    let la = self.nodes[a.0].data.len();
                    for (ga, gv) in grads[a.0].iter_mut().zip(&g[..la]) {
                        *ga += gv;
                    }
                    for (gb, gv) in grads[b.0].iter_mut().zip(&g[la..]) {
                        *gb += gv;
                    }
                    grads[idx] = g;
                }
                Op::Slice { x, start, len } => {
                    for (gx, gv) in grads[x.0][start..start + len].iter_mut().zip(&g) {
                        *gx += gv;
                    }
                    grads[idx] = g;
                }
                Op::MatMul { a, b, m, k, n, ta, tb } => {
                    let ad = &self.nodes[a.0].data;
                    let bd = &self.nodes[b.0].data;
                    let mut ga = vec![0.0; ad.len()];
                    let mut gb = vec![0.0; bd.len()];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                let av = Self::mm_get(ad, ta, m, k, i, p);
                                let bv = Self::mm_get(bd, tb, k, n, p, j);
                                let ai = if ta { p * m + i } else { i * k + p };
                                let bi = if tb { j * k + p } else { p * n + j };
                                ga[ai] += gv * bv;
                                gb[bi] += gv * av;
                            }
                        }
                    }
                    for (s, v) in grads[a.0].iter_mut().zip(ga) {
                        *s += v;
                    }
                    for (s, v) in grads[b.0].iter_mut().zip(gb) {
                        *s += v;
                    }
                    grads[idx] = g;
                }
                Op::Gelu(x) => {
                    for ((gx, gv), &xv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[x.0].data) {
                        *gx += gelu_grad(xv) * gv;
                    }
                    grads[idx] = g;
                }
                Op::Tanh(x) => {
                    for ((gx, gv), &yv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[idx].data) {
                        *gx += (1.0 - yv * yv) * gv;
                    }
                    grads[idx] = g;
                }
                Op::Sigmoid(x) => {
                    for ((gx, gv), &yv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[idx].data) {
                        *gx += yv * (1.0 - yv) * gv;
                    }
                    grads[idx] = g;
                }
                Op::LogSigmoid(x) => {
                    for ((gx, gv), &xv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[x.0].data) {
                        *gx += sigmoid(-xv) * gv;
                    }
                    grads[idx] = g;
                }
                Op::Ln(x) => {
                    for ((gx, gv), &xv) in grads[x.0].iter_mut().zip(&g).zip(&self.nodes[x.0].data) {
                        *gx += gv / xv;
                    }
                    grads[idx] = g;
                }
                Op::Softmax(x) => {
                    let y = &self.nodes[idx].data;
                    let inner: f64 = y.iter().zip(&g).map(|(yv, gv)| yv * gv).sum();
                    for ((gx, gv), yv) in grads[x.0].iter_mut().zip(&g).zip(y) {
                        *gx += yv * (gv - inner);
                    }
                    grads[idx] = g;
                }
                Op::MaskedSoftmaxRows { x, rows, cols, mask } => {
                    let y = &self.nodes[idx].data;
                    for r in 0..rows {
                        let limit = mask.limit(r, cols);
                        if limit == 0 {
                            continue;
                        }
                        let ys = &y[r * cols..r * cols + limit];
                        let gs = &g[r * cols..r * cols + limit];
                        let inner: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                        for ((gx, gv), yv) in grads[x.0][r * cols..r * cols + limit]
                            .iter_mut()
                            .zip(gs)
                            .zip(ys)
                        {
                            *gx += yv * (gv - inner);
                        }
                    }
                    grads[idx] = g;
                }
                Op::LayerNorm { x, gain, shift, width, eps } => {
                    let xd = &self.nodes[x.0].data;
                    let gaind = &self.nodes[gain.0].data;
                    let n = width as f64;
                    for (chunk_idx, chunk) in xd.chunks(width).enumerate() {
                        let off = chunk_idx * width;
                        let mean = chunk.iter().sum::<f64>() / n;
                        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = chunk.iter().map(|v| (v - mean) * inv).collect();
                        let gy = &g[off..off + width];
                        let mut sum_gg = 0.0;
                        let mut sum_ggx = 0.0;
                        for i in 0..width {
                            let t = gaind[i] * gy[i];
                            sum_gg += t;
                            sum_ggx += t * xhat[i];
                            grads[gain.0][i] += gy[i] * xhat[i];
                            grads[shift.0][i] += gy[i];
                        }
                        for i in 0..width {
                            let t = gaind[i] * gy[i];
                            grads[x.0][off + i] += inv * (t - sum_gg / n - xhat[i] * sum_ggx / n);
                        }
                    }
                    grads[idx] = g;
                }
                Op::AxisDense { x, w, b, dims, axis, out } => {
                    let n_in = dims[axis];
                    let (stride, _) = Self::axis_geometry(dims, axis);
                    let mut out_dims = dims;
                    out_dims[axis] = out;
                    let (out_stride, _) = Self::axis_geometry(out_dims, axis);
                    let other: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
                    let wd = &self.nodes[w.0].data;
                    let xd = &self.nodes[x.0].data;
                    let mut gw = vec![0.0; wd.len()];
                    let mut gb = vec![0.0; out];
                    let mut gx = vec![0.0; xd.len()];
                    for i in 0..dims[other[0]] {
                        for j in 0..dims[other[1]] {
                            let base_in = Self::slice_base(dims, axis, other[0], i, other[1], j);
                            let base_out = Self::slice_base(out_dims, axis, other[0], i, other[1], j);
                            for o in 0..out {
                                let gv = g[base_out + o * out_stride];
                                if gv == 0.0 {
                                    continue;
                                }
                                gb[o] += gv;
                                for p in 0..n_in {
                                    gw[o * n_in + p] += gv * xd[base_in + p * stride];
                                    gx[base_in + p * stride] += gv * wd[o * n_in + p];
                                }
                            }
                        }
                    }
                    for (s, v) in grads[w.0].iter_mut().zip(gw) {
                        *s += v;
                    }
                    for (s, v) in grads[b.0].iter_mut().zip(gb) {
                        *s += v;
                    }
                    for (s, v) in grads[x.0].iter_mut().zip(gx) {
                        *s += v;
                    }
                    grads[idx] = g;
                }
                Op::Dot(a, b) => {
                    let gv = g[0];
                    for (ga, bv) in grads[a.0].iter_mut().zip(&self.nodes[b.0].data) {
                        *ga += gv * bv;
                    }
                    for (gb, av) in grads[b.0].iter_mut().zip(&self.nodes[a.0].data) {
                        *gb += gv * av;
                    }
                    grads[idx] = g;
                }
                Op::Sum(x) => {
                    let gv = g[0];
                    for gx in grads[x.0].iter_mut() {
                        *gx += gv;
                    }
                    grads[idx] = g;
                }
                Op::Outer(a, b) => {
                    let (p, q) = (self.nodes[a.0].data.len(), self.nodes[b.0].data.len());
                    for i in 0..p {
                        for j in 0..q {
                            let gv = g[i * q + j];
                            grads[a.0][i] += gv * self.nodes[b.0].data[j];
                            grads[b.0][j] += gv * self.nodes[a.0].data[i];
                        }
                    }
                    grads[idx] = g;
                }
                Op::VecMat { w, m, rows, cols } => {
                    for r in 0..rows {
                        let wv = self.nodes[w.0].data[r];
                        let mut gw = 0.0;
                        for c in 0..cols {
                            let gv = g[c];
                            gw += gv * self.nodes[m.0].data[r * cols + c];
                            grads[m.0][r * cols + c] += gv * wv;
                        }
                        grads[w.0][r] += gw;
                    }
                    grads[idx] = g;
                }
                Op::StackRows { rows, width } => {
                    for (i, r) in rows.iter().enumerate() {
                        for (gr, gv) in grads[r.0].iter_mut().zip(&g[i * width..(i + 1) * width]) {
                            *gr += gv;
                        }
                    }
                    grads[idx] = g;
                }
            }
        }
        grads
    }
}

/// Gradient-check outcome for one model fragment.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_params: usize,
    pub pass: bool,
}

/// Compare an analytic gradient against central finite differences on a flat
/// parameter vector. `loss` re-evaluates the scalar loss from scratch; it must
/// not share state with the analytic path being checked.
pub fn grad_check<F>(
    theta: &mut Vec<f64>,
    analytic: &[f64],
    mut loss: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if theta.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "grad_check: {} params vs {} gradient entries",
            theta.len(),
            analytic.len()
        )));
    }
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = loss(theta);
        theta[i] = orig - h;
        let down = loss(theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::NonFiniteGradient(format!("param {i}")));
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_rel_err: max_rel, n_params: theta.len(), pass: max_rel < tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passes_through() {
        let layer = DenseLayer::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2).unwrap();
        assert_eq!(dense_forward(&layer, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn dense_zero_weights_yield_bias() {
        let layer = DenseLayer::new(vec![0.0; 4], vec![3.0, 3.0], 2, 2).unwrap();
        assert_eq!(dense_forward(&layer, &[5.0, -7.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn dense_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n_out, n_in) = (4, 3);
        let weight: Vec<f64> = (0..n_out * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = DenseLayer::new(weight.clone(), bias.clone(), n_out, n_in).unwrap();
        let y = dense_forward(&layer, &x).unwrap();
        // Naive scalar-loop reference.
        for o in 0..n_out {
            let mut expect = bias[o];
            for i in 0..n_in {
                expect += weight[o * n_in + i] * x[i];
            }
            assert!((y[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_shape_mismatch_is_an_error() {
        let layer = DenseLayer::new(vec![0.0; 4], vec![0.0, 0.0], 2, 2).unwrap();
        assert!(dense_forward(&layer, &[1.0]).is_err());
    }

    #[test]
    fn layer_norm_constant_input_collapses_to_zero() {
        let y = layer_norm(&[4.0; 8], &[1.0; 8], &[0.0; 8], 1e-5).unwrap();
        for v in y {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardized_input_is_fixed() {
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-12).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-5);
        assert!((y[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_output_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = layer_norm(&x, &[1.0; 16], &[0.0; 16], 1e-5).unwrap();
        let mean = y.iter().sum::<f64>() / 16.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-7);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_uniform_on_zeros() {
        let y = softmax(&[0.0; 4]);
        for v in y {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant_and_normalized() {
        let x = [0.3, -1.2, 4.0, 0.0, 2.2];
        let a = softmax(&x);
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.5).collect();
        let b = softmax(&shifted);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let x = [1.0, 2.0, 3.0];
        let y = softmax(&x);
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        for (yv, xv) in y.iter().zip(&x) {
            assert!((yv - xv.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_values_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(0.0f64.tanh(), 0.0);
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for &x in &[0.1, -3.0, 7.5, 20.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_matches_gaussian_cdf_form() {
        // Φ(1) frozen from an independent normal-CDF evaluation.
        let phi_1 = 0.8413447460685429;
        assert!((gelu(1.0) - phi_1).abs() < 1e-6);
    }

    #[test]
    fn attention_single_pair_returns_the_value() {
        let out = scaled_dot_attention(&[0.7, -2.0], &[1.0, 1.0], &[5.0, -3.0, 2.0], 1, 2, 3, false)
            .unwrap();
        assert_eq!(out, vec![5.0, -3.0, 2.0]);
    }

    #[test]
    fn attention_identical_keys_average_the_values() {
        let keys = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let values = [0.0, 3.0, 6.0];
        let q = [0.4, -0.4];
        let mut queries = Vec::new();
        for _ in 0..3 {
            queries.extend_from_slice(&q);
        }
        let out = scaled_dot_attention(&queries, &keys, &values, 3, 2, 1, false).unwrap();
        for t in 0..3 {
            assert!((out[t] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_attention_matches_per_row_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (rows, d, dv) = (3, 4, 2);
        let q: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..rows * dv).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = scaled_dot_attention(&q, &k, &v, rows, d, dv, true).unwrap();
        for t in 0..rows {
            // Explicit masked softmax, per row.
            let mut scores = Vec::new();
            for i in 0..=t {
                let s: f64 = (0..d).map(|j| q[t * d + j] * k[i * d + j]).sum();
                scores.push(s / (d as f64).sqrt());
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for c in 0..dv {
                let mut expect = 0.0;
                for i in 0..=t {
                    expect += (scores[i] - m).exp() / z * v[i * dv + c];
                }
                assert!((out[t * dv + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_stay_in_value_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, d, dv) = (6, 3, 4);
        let q: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..rows * dv).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = scaled_dot_attention(&q, &k, &v, rows, d, dv, false).unwrap();
        for c in 0..dv {
            let lo = (0..rows).map(|r| v[r * dv + c]).fold(f64::INFINITY, f64::min);
            let hi = (0..rows).map(|r| v[r * dv + c]).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..rows {
                assert!(out[r * dv + c] >= lo - 1e-12 && out[r * dv + c] <= hi + 1e-12);
            }
        }
    }

    fn run_dense_loss(theta: &[f64], x: &[f64], n_out: usize, n_in: usize) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let w = tape.leaf(theta[..n_out * n_in].to_vec());
        let b = tape.leaf(theta[n_out * n_in..].to_vec());
        let xn = tape.constant(x.to_vec());
        let y = tape.dense(w, b, xn, n_out, n_in);
        let sq = tape.dot(y, y);
        let grads = tape.backward(sq);
        let mut analytic = grads[0].clone();
        analytic.extend_from_slice(&grads[1]);
        (tape.scalar(sq), analytic)
    }

    #[test]
    fn grad_check_dense_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n_out, n_in) = (3, 4);
        let mut theta: Vec<f64> =
            (0..n_out * n_in + n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, analytic) = run_dense_loss(&theta, &x, n_out, n_in);
        let report = grad_check(
            &mut theta,
            &analytic,
            |t| run_dense_loss(t, &x, n_out, n_in).0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    fn run_ln_dense_loss(theta: &[f64], x: &[f64], n: usize) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let gain = tape.leaf(theta[..n].to_vec());
        let shift = tape.leaf(theta[n..2 * n].to_vec());
        let w = tape.leaf(theta[2 * n..2 * n + n * n].to_vec());
        let b = tape.leaf(theta[2 * n + n * n..].to_vec());
        let xn = tape.constant(x.to_vec());
        let normed = tape.layer_norm(xn, gain, shift, 1e-5);
        let act = tape.gelu(normed);
        let y = tape.dense(w, b, act, n, n);
        let loss = tape.dot(y, y);
        let grads = tape.backward(loss);
        let mut analytic = grads[0].clone();
        analytic.extend_from_slice(&grads[1]);
        analytic.extend_from_slice(&grads[2]);
        analytic.extend_from_slice(&grads[3]);
        (tape.scalar(loss), analytic)
    }

    #[test]
    fn grad_check_layer_norm_dense_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 4;
        let mut theta: Vec<f64> = (0..2 * n + n * n + n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, analytic) = run_ln_dense_loss(&theta, &x, n);
        let report =
            grad_check(&mut theta, &analytic, |t| run_ln_dense_loss(t, &x, n).0, 1e-5, 1e-4).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn grad_check_zero_parameter_model_is_vacuous() {
        let mut theta = Vec::new();
        let report = grad_check(&mut theta, &[], |_| 0.0, 1e-5, 1e-4).unwrap();
        assert!(report.pass);
        assert_eq!(report.n_params, 0);
    }

    #[test]
    fn forward_is_deterministic() {
        let x = [0.4, -1.1, 2.0];
        let a = softmax(&x);
        let b = softmax(&x);
        assert_eq!(a, b);
    }
}
