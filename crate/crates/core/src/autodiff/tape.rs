//! Operation tape and reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its output value and the
//! recipe needed to push gradients back to its inputs. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for backpropagation.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::params::{ParamId, ParamStore};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    batched: bool,
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { a: Var, s: f64 },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Relu { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    CausalSoftmax { a: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    Reshape { a: Var },
    Slice2d { a: Var, row0: usize, col0: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    GatherRows { a: Var, index: Vec<usize> },
    Sum { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    BceCausal { a: Var, target: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::Scale { .. } => "scale",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Relu { .. } => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::CausalSoftmax { .. } => "causal_softmax_rows",
            Op::Conv2d { .. } => "conv2d",
            Op::Reshape { .. } => "reshape",
            Op::Slice2d { .. } => "slice2d",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sum { .. } => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceCausal { .. } => "bce_causal",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent gradient of a leaf; accumulates across backward calls.
    grad: Option<Tensor>,
    param: Option<ParamId>,
}

/// Clamp applied to log arguments in [`Tape::bce_causal`].
pub const BCE_LOG_FLOOR: f64 = 1e-12;

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Copies a parameter onto the tape; [`Tape::accumulate_param_grads`]
    /// routes its gradient back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), true, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None, param });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op, left: sa.to_vec(), right: sb.to_vec() });
        }
        Ok(())
    }

    // ----------------------------------------------------------------------
    // Linear algebra
    // ----------------------------------------------------------------------

    /// `a · b` for rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, true)
    }

    fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let (ar, ac) = self.dims2(a)?;
        let (br, bc) = self.dims2(b)?;
        let av = view(self.value(a).data(), ar, ac, ta);
        let bv = view(self.value(b).data(), br, bc, tb);
        if av.cols != bv.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let (m, n) = (av.rows, bv.cols);
        let mut out = vec![0.0; m * n];
        gemm(av, bv, 0.0, &mut out);
        let value = Tensor::new(&[m, n], out)?;
        self.push(value, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Mul { a, b }, &[a, b])
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.value(x).shape();
        let bs = self.value(bias).shape();
        let c = *xs.last().unwrap();
        if bs.len() != 1 || bs[0] != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xs.to_vec(),
                right: bs.to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        let value = Tensor::new(self.value(x).shape(), data)?;
        self.push(value, Op::AddBias { x, bias }, &[x, bias])
    }

    /// `x·Wᵀ + b` with `W` stored `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let y = self.matmul_nt(x, weight)?;
        self.add_bias(y, bias)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Scale { a, s }, &[a])
    }

    // ----------------------------------------------------------------------
    // Elementwise nonlinearities
    // ----------------------------------------------------------------------

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Sigmoid { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|&x| libm::tanh(x)).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Tanh { a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Relu { a }, &[a])
    }

    /// Normalizes the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let xs = self.value(x).shape().to_vec();
        let d = *xs.last().unwrap();
        for p in [gamma, beta] {
            let ps = self.value(p).shape();
            if ps.len() != 1 || ps[0] != d {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: xs.clone(),
                    right: ps.to_vec(),
                });
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(&xs, out)?;
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Inverted dropout. Evaluation mode and `p = 0` return `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let value = Tensor::new(self.value(x).shape(), data)?;
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// Row softmax of a square matrix restricted to columns `≤ row`;
    /// entries above the diagonal are exactly zero.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(a)?;
        if r != c {
            return Err(TensorError::NotSquare { shape: vec![r, c] });
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..i * c + i + 1];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..i * c + i + 1];
            let mut z = 0.0;
            for (o, &x) in dst.iter_mut().zip(row) {
                *o = libm::exp(x - m);
                z += *o;
            }
            dst.iter_mut().for_each(|o| *o /= z);
        }
        let value = Tensor::new(&[r, c], out)?;
        self.push(value, Op::CausalSoftmax { a }, &[a])
    }

    // ----------------------------------------------------------------------
    // Convolution
    // ----------------------------------------------------------------------

    /// Cross-correlation of `x` (`[C,H,W]` or `[N,C,H,W]`) with `w`
    /// (`[C_out,C_in,KH,KW]`), plus per-channel bias `b`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (batched, n, c_in, h, wd) = match xs.as_slice() {
            &[c, h, w] => (false, 1, c, h, w),
            &[n, c, h, w] => (true, n, c, h, w),
            _ => return Err(TensorError::Rank { expected: 4, shape: xs }),
        };
        let &[c_out, wc, kh, kw] = ws.as_slice() else {
            return Err(TensorError::Rank { expected: 4, shape: ws });
        };
        if wc != c_in || self.value(b).shape() != [c_out] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", left: xs, right: ws });
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(TensorError::NonPositiveExtent { op: "conv2d" });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom { batched, n, c_in, h, w: wd, c_out, kh, kw, stride, pad, ho, wo };
        let cols = im2col(self.value(x).data(), &geom);
        let ckk = c_in * kh * kw;
        let npix = n * ho * wo;
        let mut out2 = vec![0.0; c_out * npix];
        gemm(
            MatRef::row_major(self.value(w).data(), c_out, ckk),
            MatRef::row_major(&cols, ckk, npix),
            0.0,
            &mut out2,
        );
        let bias = self.value(b).data();
        let hw = ho * wo;
        let mut out = vec![0.0; c_out * npix];
        for co in 0..c_out {
            for img in 0..n {
                let src = &out2[co * npix + img * hw..co * npix + (img + 1) * hw];
                let dst = &mut out[(img * c_out + co) * hw..(img * c_out + co + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + bias[co]);
            }
        }
        let shape: Vec<usize> =
            if batched { vec![n, c_out, ho, wo] } else { vec![c_out, ho, wo] };
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b])
    }

    // ----------------------------------------------------------------------
    // Shape manipulation
    // ----------------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.push(value, Op::Reshape { a }, &[a])
    }

    /// Rectangular block `[row0..row0+rows, col0..col0+cols]` of a matrix.
    pub fn slice2d(
        &mut self,
        a: Var,
        row0: usize,
        rows: usize,
        col0: usize,
        cols: usize,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(a)?;
        if rows == 0 || cols == 0 || row0 + rows > r || col0 + cols > c {
            return Err(TensorError::OutOfRange { op: "slice2d" });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            out.extend_from_slice(&src[i * c + col0..i * c + col0 + cols]);
        }
        let value = Tensor::new(&[rows, cols], out)?;
        self.push(value, Op::Slice2d { a, row0, col0 }, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let (_, c) = self.dims2(parts[0])?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims2(p)?;
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let value = Tensor::new(&[rows, c], out)?;
        self.push(value, Op::ConcatRows { parts: parts.to_vec() }, parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let (r, _) = self.dims2(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(&[r, total], out)?;
        self.push(value, Op::ConcatCols { parts: parts.to_vec() }, parts)
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(a)?;
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return Err(TensorError::OutOfRange { op: "gather_rows" });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[index.len(), c], out)?;
        self.push(value, Op::GatherRows { a, index: index.to_vec() }, &[a])
    }

    // ----------------------------------------------------------------------
    // Reductions and losses
    // ----------------------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// `Σ_r weights[r] · (−log softmax(logits[r])[targets[r]])`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, TensorError> {
        let (r, k) = self.dims2(logits)?;
        if targets.len() != r || weights.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![r, k],
                right: vec![targets.len(), weights.len()],
            });
        }
        if targets.iter().any(|&t| t >= k) {
            return Err(TensorError::OutOfRange { op: "cross_entropy" });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; r * k];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &src[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| libm::exp(x - m)).sum();
            let log_z = m + libm::log(z);
            for j in 0..k {
                probs[i * k + j] = libm::exp(row[j] - log_z);
            }
            loss += weights[i] * (log_z - row[targets[i]]);
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits])
    }

    /// Mean binary cross-entropy between probabilities `a` and binary
    /// `target` over the lower triangle (diagonal included) of a square
    /// matrix. Log arguments are floored at [`BCE_LOG_FLOOR`].
    pub fn bce_causal(&mut self, a: Var, target: &Tensor) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(a)?;
        if r != c {
            return Err(TensorError::NotSquare { shape: vec![r, c] });
        }
        if target.shape() != [r, c] {
            return Err(TensorError::ShapeMismatch {
                op: "bce_causal",
                left: vec![r, c],
                right: target.shape().to_vec(),
            });
        }
        let src = self.value(a).data();
        let e = target.data();
        let mut total = 0.0;
        for i in 0..r {
            for j in 0..=i {
                let p = src[i * c + j];
                let t = e[i * c + j];
                total -= t * libm::log(p.max(BCE_LOG_FLOOR))
                    + (1.0 - t) * libm::log((1.0 - p).max(BCE_LOG_FLOOR));
            }
        }
        let count = (r * (r + 1) / 2) as f64;
        let op = Op::BceCausal { a, target: e.to_vec() };
        self.push(Tensor::scalar(total / count), op, &[a])
    }

    // ----------------------------------------------------------------------
    // Backward
    // ----------------------------------------------------------------------

    /// Propagates gradients from a scalar `loss` to every differentiable
    /// leaf. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar { shape: self.value(loss).shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.value(a).dims2().unwrap();
                let (br, bc) = self.value(b).dims2().unwrap();
                let av = view(self.value(a).data(), ar, ac, ta);
                let bv = view(self.value(b).data(), br, bc, tb);
                let gv = MatRef::row_major(g, av.rows, bv.cols);
                acc(a, &mut |da| {
                    if ta {
                        gemm(bv, gv.t(), 1.0, da);
                    } else {
                        gemm(gv, bv.t(), 1.0, da);
                    }
                });
                acc(b, &mut |db| {
                    if tb {
                        gemm(gv.t(), av, 1.0, db);
                    } else {
                        gemm(av.t(), gv, 1.0, db);
                    }
                });
            }
            &Op::Add { a, b } => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| add_into(db, g));
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                acc(a, &mut |da| da.iter_mut().zip(g).zip(vb).for_each(|((d, g), y)| *d += g * y));
                acc(b, &mut |db| db.iter_mut().zip(g).zip(va).for_each(|((d, g), x)| *d += g * x));
            }
            &Op::AddBias { x, bias } => {
                acc(x, &mut |dx| add_into(dx, g));
                let c = self.value(bias).len();
                acc(bias, &mut |db| {
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Scale { a, s } => {
                acc(a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
            }
            &Op::Sigmoid { a } => {
                acc(a, &mut |da| {
                    da.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += g * y * (1.0 - y))
                });
            }
            &Op::Tanh { a } => {
                acc(a, &mut |da| {
                    da.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += g * (1.0 - y * y))
                });
            }
            &Op::Relu { a } => {
                let src = self.value(a).data();
                acc(a, &mut |da| {
                    for ((d, g), x) in da.iter_mut().zip(g).zip(src) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma).data();
                let d = gam.len();
                acc(*gamma, &mut |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        dg.iter_mut().zip(grow).zip(hrow).for_each(|((a, g), h)| *a += g * h);
                    }
                });
                acc(*beta, &mut |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
                acc(*x, &mut |dx| {
                    let mut dh = vec![0.0; d];
                    for (r, ((dxrow, grow), hrow)) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        for j in 0..d {
                            dh[j] = grow[j] * gam[j];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hrow).map(|(a, h)| a * h).sum();
                        let k = rstd[r] / d as f64;
                        for j in 0..d {
                            dxrow[j] += k * (d as f64 * dh[j] - s1 - hrow[j] * s2);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |dx| {
                    dx.iter_mut().zip(g).zip(mask).for_each(|((d, g), m)| *d += g * m)
                });
            }
            &Op::CausalSoftmax { a } => {
                let n = self.value(a).dims2().unwrap().0;
                acc(a, &mut |da| {
                    for i in 0..n {
                        let y = &out[i * n..i * n + i + 1];
                        let gy = &g[i * n..i * n + i + 1];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        let drow = &mut da[i * n..i * n + i + 1];
                        for j in 0..=i {
                            drow[j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let ckk = geom.c_in * geom.kh * geom.kw;
                let hw = geom.ho * geom.wo;
                let npix = geom.n * hw;
                // [N, C_out, HW] -> [C_out, N·HW]
                let mut g2 = vec![0.0; geom.c_out * npix];
                for img in 0..geom.n {
                    for co in 0..geom.c_out {
                        let src = &g[(img * geom.c_out + co) * hw..(img * geom.c_out + co + 1) * hw];
                        g2[co * npix + img * hw..co * npix + (img + 1) * hw].copy_from_slice(src);
                    }
                }
                let gv = MatRef::row_major(&g2, geom.c_out, npix);
                acc(*w, &mut |dw| gemm(gv, MatRef::row_major(cols, ckk, npix).t(), 1.0, dw));
                acc(*b, &mut |db| {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += g2[co * npix..(co + 1) * npix].iter().sum::<f64>();
                    }
                });
                let wv = MatRef::row_major(self.value(*w).data(), geom.c_out, ckk);
                acc(*x, &mut |dx| {
                    let mut dcols = vec![0.0; ckk * npix];
                    gemm(wv.t(), gv, 0.0, &mut dcols);
                    col2im_add(&dcols, geom, dx);
                });
            }
            &Op::Reshape { a } => acc(a, &mut |da| add_into(da, g)),
            &Op::Slice2d { a, row0, col0 } => {
                let (_, c) = self.value(a).dims2().unwrap();
                let (rows, cols) = node.value.dims2().unwrap();
                acc(a, &mut |da| {
                    for i in 0..rows {
                        let dst = &mut da[(row0 + i) * c + col0..(row0 + i) * c + col0 + cols];
                        add_into(dst, &g[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |dp| add_into(dp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::ConcatCols { parts } => {
                let (r, total) = node.value.dims2().unwrap();
                let mut col0 = 0;
                for &p in parts {
                    let w = self.value(p).dims2().unwrap().1;
                    acc(p, &mut |dp| {
                        for i in 0..r {
                            add_into(&mut dp[i * w..(i + 1) * w], &g[i * total + col0..i * total + col0 + w]);
                        }
                    });
                    col0 += w;
                }
            }
            Op::GatherRows { a, index } => {
                let c = self.value(*a).dims2().unwrap().1;
                acc(*a, &mut |da| {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut da[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            &Op::Sum { a } => {
                let s = g[0];
                acc(a, &mut |da| da.iter_mut().for_each(|d| *d += s));
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let k = self.value(*logits).dims2().unwrap().1;
                let s = g[0];
                acc(*logits, &mut |dl| {
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        for j in 0..k {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            dl[r * k + j] += s * w * (probs[r * k + j] - ind);
                        }
                    }
                });
            }
            Op::BceCausal { a, target } => {
                let n = self.value(*a).dims2().unwrap().0;
                let src = self.value(*a).data();
                let s = g[0] / (n * (n + 1) / 2) as f64;
                acc(*a, &mut |da| {
                    for i in 0..n {
                        for j in 0..=i {
                            let idx = i * n + j;
                            let (p, t) = (src[idx], target[idx]);
                            let mut d = 0.0;
                            if p > BCE_LOG_FLOOR {
                                d -= t / p;
                            }
                            if 1.0 - p > BCE_LOG_FLOOR {
                                d += (1.0 - t) / (1.0 - p);
                            }
                            da[idx] += s * d;
                        }
                    }
                });
            }
        }
    }

    /// Adds every parameter leaf's gradient into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                add_into(store.grad_mut(id).data_mut(), g.data());
            }
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize, transpose: bool) -> MatRef<'_> {
    let v = MatRef::row_major(data, rows, cols);
    if transpose {
        v.t()
    } else {
        v
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Unfolds input patches into a `[C·KH·KW, N·Ho·Wo]` matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.ho * g.wo;
    let npix = g.n * hw;
    let mut cols = vec![0.0; g.c_in * g.kh * g.kw * npix];
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for img in 0..g.n {
                    let plane = &x[(img * g.c_in + c) * g.h * g.w..(img * g.c_in + c + 1) * g.h * g.w];
                    for oi in 0..g.ho {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        let ii = ii as usize;
                        for oj in 0..g.wo {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj < 0 || jj >= g.w as isize {
                                continue;
                            }
                            dst[img * hw + oi * g.wo + oj] = plane[ii * g.w + jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let hw = g.ho * g.wo;
    let npix = g.n * hw;
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for img in 0..g.n {
                    let base = (img * g.c_in + c) * g.h * g.w;
                    for oi in 0..g.ho {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        let ii = ii as usize;
                        for oj in 0..g.wo {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj < 0 || jj >= g.w as isize {
                                continue;
                            }
                            dx[base + ii * g.w + jj as usize] += src[img * hw + oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}
