//! Dense n-dimensional arrays with reverse-mode automatic differentiation.
//!
//! The graph is define-by-run: every operation executes eagerly and records
//! itself on a tape owned by [`Graph`]. `backward` walks the tape in reverse,
//! which is a valid topological order by construction. Graphs are rebuilt per
//! forward pass; parameters live outside the graph and are bound as leaves.

pub mod conv;
pub mod gradcheck;
mod shape;

#[cfg(test)]
mod tests;

pub use shape::broadcast_shape;

use shape::for_each_broadcast_pair;

/// Floating-point element type for graphs. f64 is used by the gradient-check
/// suite, f32 by training and inference.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a tensor inside a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Neg(TensorId),
    Relu(TensorId),
    LeakyRelu(TensorId, f64),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Softplus(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    Abs(TensorId),
    Softmax { x: TensorId, axis: usize },
    Sum(TensorId),
    Mean(TensorId),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Concat0(TensorId, TensorId),
    Slice0 { x: TensorId, start: usize },
    Conv2d { input: TensorId, kernel: TensorId, stride: usize, pad: usize },
    ConvT2d { input: TensorId, kernel: TensorId, stride: usize, pad: usize },
    MaxPool2d { input: TensorId, argmax: Vec<usize> },
    AvgPool2d { input: TensorId, window: usize, stride: usize },
    BlurPool2d(TensorId),
    UpsampleNearest2x(TensorId),
}

struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op,
}

/// Tape of executed operations plus the tensors they produced.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { data, shape, requires_grad, grad: None, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a leaf tensor. Gradients are collected for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        assert!(shape.iter().all(|&e| e > 0), "shape extents must be positive: {shape:?}");
        self.push(data, shape, requires_grad, Op::Leaf)
    }

    /// Non-differentiable constant leaf.
    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> TensorId {
        self.leaf(data, shape, false)
    }

    /// Scalar constant of shape `[1]`.
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![T::from_f64(v)], vec![1], false)
    }

    pub fn data(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient populated by the last `backward`, if any.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a single-element tensor.
    pub fn value(&self, id: TensorId) -> T {
        assert_eq!(self.numel(id), 1, "value() requires a scalar tensor");
        self.nodes[id.0].data[0]
    }

    // ---- elementwise binary ops -------------------------------------------

    fn binary(&mut self, a: TensorId, b: TensorId, op: fn(T, T) -> T, rec: Op) -> TensorId {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b)).unwrap_or_else(|| {
            panic!(
                "shapes {:?} and {:?} are not broadcast-compatible",
                self.shape(a),
                self.shape(b)
            )
        });
        let numel: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        {
            let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
            if self.nodes[a.0].shape == self.nodes[b.0].shape {
                out.extend(da.iter().zip(db.iter()).map(|(&x, &y)| op(x, y)));
            } else {
                for_each_broadcast_pair(
                    &self.nodes[a.0].shape,
                    &self.nodes[b.0].shape,
                    &out_shape,
                    |ia, ib| out.push(op(da[ia], db[ib])),
                );
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, out_shape, rg, rec)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ---- unary ops --------------------------------------------------------

    fn unary(&mut self, a: TensorId, f: impl Fn(T) -> T, rec: Op) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires_grad(a);
        self.push(data, shape, rg, rec)
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: TensorId, alpha: f64) -> TensorId {
        let al = T::from_f64(alpha);
        self.unary(a, |x| if x > T::zero() { x } else { al * x }, Op::LeakyRelu(a, alpha))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, softplus_scalar, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        assert!(axis < shape.len(), "softmax axis {axis} out of range for {shape:?}");
        let data = softmax_forward(&self.nodes[a.0].data, &shape, axis);
        let rg = self.requires_grad(a);
        self.push(data, shape, rg, Op::Softmax { x: a, axis })
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s = self.nodes[a.0].data.iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = self.requires_grad(a);
        self.push(vec![s], vec![1], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = T::from_f64(self.numel(a) as f64);
        let s = self.nodes[a.0].data.iter().fold(T::zero(), |acc, &x| acc + x) / n;
        let rg = self.requires_grad(a);
        self.push(vec![s], vec![1], rg, Op::Mean(a))
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul expects 2-D operands, got {sa:?} x {sb:?}");
        assert_eq!(sa[1], sb[0], "matmul inner extents differ: {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, vec![m, n], rg, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "transpose expects a 2-D tensor, got {s:?}");
        let (m, n) = (s[0], s[1]);
        let src = &self.nodes[a.0].data;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.requires_grad(a);
        self.push(out, vec![n, m], rg, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        assert_eq!(
            self.numel(a),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(a),
            shape
        );
        let data = self.nodes[a.0].data.clone();
        let rg = self.requires_grad(a);
        self.push(data, shape, rg, Op::Reshape(a))
    }

    /// Concatenate along axis 0; trailing extents must match.
    pub fn concat0(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa.len(), sb.len(), "concat0 rank mismatch: {sa:?} vs {sb:?}");
        assert_eq!(sa[1..], sb[1..], "concat0 trailing extents differ: {sa:?} vs {sb:?}");
        let mut data = self.nodes[a.0].data.clone();
        data.extend_from_slice(&self.nodes[b.0].data);
        let mut shape = sa.clone();
        shape[0] = sa[0] + sb[0];
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(data, shape, rg, Op::Concat0(a, b))
    }

    /// Slice `len` entries along axis 0 starting at `start`.
    pub fn slice0(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let s = self.shape(a).to_vec();
        assert!(start + len <= s[0], "slice0 [{start}, {start}+{len}) out of range for {s:?}");
        let inner: usize = s[1..].iter().product();
        let data = self.nodes[a.0].data[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let rg = self.requires_grad(a);
        self.push(data, shape, rg, Op::Slice0 { x: a, start })
    }

    // ---- spatial ops ------------------------------------------------------

    /// Cross-correlation of `input [c_in, h, w]` with `kernel
    /// [c_out, c_in, kh, kw]` (no kernel flip).
    pub fn conv2d(&mut self, input: TensorId, kernel: TensorId, stride: usize, pad: usize) -> TensorId {
        let in_sh = as3(self.shape(input));
        let k_sh = as4(self.shape(kernel));
        assert_eq!(in_sh[0], k_sh[1], "conv2d channel mismatch: input {in_sh:?} kernel {k_sh:?}");
        let (out, out_sh) =
            conv::conv_fwd(&self.nodes[input.0].data, in_sh, &self.nodes[kernel.0].data, k_sh, stride, pad);
        let rg = self.requires_grad(input) || self.requires_grad(kernel);
        self.push(out, out_sh.to_vec(), rg, Op::Conv2d { input, kernel, stride, pad })
    }

    /// Adjoint of [`Graph::conv2d`] with the same geometry: maps
    /// `[c_out, h, w]` back to `[c_in, (h-1)*stride + kh - 2*pad, ...]`.
    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        pad: usize,
    ) -> TensorId {
        self.conv_transpose_impl(input, kernel, stride, pad, None)
    }

    /// Like [`Graph::conv_transpose2d`] but with explicit output extents,
    /// disambiguating the extents a strided convolution floors away. This is
    /// the exact adjoint of `conv2d` on an `out_hw` input.
    pub fn conv_transpose2d_to(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> TensorId {
        self.conv_transpose_impl(input, kernel, stride, pad, Some(out_hw))
    }

    fn conv_transpose_impl(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        pad: usize,
        out_hw: Option<(usize, usize)>,
    ) -> TensorId {
        let in_sh = as3(self.shape(input));
        let k_sh = as4(self.shape(kernel));
        assert_eq!(in_sh[0], k_sh[0], "conv_transpose2d channel mismatch: input {in_sh:?} kernel {k_sh:?}");
        assert!(stride >= 1, "conv_transpose2d stride must be >= 1");
        let (out, out_sh) = conv::conv_transpose_fwd(
            &self.nodes[input.0].data,
            in_sh,
            &self.nodes[kernel.0].data,
            k_sh,
            stride,
            pad,
            out_hw,
        );
        let rg = self.requires_grad(input) || self.requires_grad(kernel);
        self.push(out, out_sh.to_vec(), rg, Op::ConvT2d { input, kernel, stride, pad })
    }

    pub fn max_pool2d(&mut self, input: TensorId, window: usize, stride: usize) -> TensorId {
        let in_sh = as3(self.shape(input));
        let (out, argmax, out_sh) = conv::max_pool_fwd(&self.nodes[input.0].data, in_sh, window, stride);
        let rg = self.requires_grad(input);
        self.push(out, out_sh.to_vec(), rg, Op::MaxPool2d { input, argmax })
    }

    pub fn avg_pool2d(&mut self, input: TensorId, window: usize, stride: usize) -> TensorId {
        let in_sh = as3(self.shape(input));
        let (out, out_sh) = conv::avg_pool_fwd(&self.nodes[input.0].data, in_sh, window, stride);
        let rg = self.requires_grad(input);
        self.push(out, out_sh.to_vec(), rg, Op::AvgPool2d { input, window, stride })
    }

    /// Anti-aliased stride-2 downsampling: depthwise normalized binomial-5
    /// filter over reflect padding, then 2x subsampling.
    pub fn blurpool2d(&mut self, input: TensorId) -> TensorId {
        let in_sh = as3(self.shape(input));
        let (out, out_sh) = conv::blurpool_fwd(&self.nodes[input.0].data, in_sh);
        let rg = self.requires_grad(input);
        self.push(out, out_sh.to_vec(), rg, Op::BlurPool2d(input))
    }

    pub fn upsample_nearest2x(&mut self, input: TensorId) -> TensorId {
        let [c, h, w] = as3(self.shape(input));
        let src = &self.nodes[input.0].data;
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = src[(ci * h + y) * w + x];
                    let base = ci * 4 * h * w;
                    let (oy, ox) = (2 * y, 2 * x);
                    out[base + oy * 2 * w + ox] = v;
                    out[base + oy * 2 * w + ox + 1] = v;
                    out[base + (oy + 1) * 2 * w + ox] = v;
                    out[base + (oy + 1) * 2 * w + ox + 1] = v;
                }
            }
        }
        let rg = self.requires_grad(input);
        self.push(out, vec![c, 2 * h, 2 * w], rg, Op::UpsampleNearest2x(input))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable tensor with `requires_grad`; gradients accumulate additively
    /// across fan-out.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(self.numel(loss), 1, "backward requires a scalar loss, got shape {:?}", self.shape(loss));
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let gout = grads[i].take().expect("grad present");
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        for (i, g) in grads.into_iter().enumerate() {
            if self.nodes[i].requires_grad {
                if let Some(g) = g {
                    match &mut self.nodes[i].grad {
                        Some(existing) => {
                            for (d, s) in existing.iter_mut().zip(&g) {
                                *d += *s;
                            }
                        }
                        slot => *slot = Some(g),
                    }
                }
            }
        }
    }

    fn propagate(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.binary_bwd(*a, *b, &node.shape, gout, grads, |g, _, _| (g, g));
            }
            Op::Sub(a, b) => {
                self.binary_bwd(*a, *b, &node.shape, gout, grads, |g, _, _| (g, -g));
            }
            Op::Mul(a, b) => {
                self.binary_bwd(*a, *b, &node.shape, gout, grads, |g, x, y| (g * y, g * x));
            }
            Op::Div(a, b) => {
                self.binary_bwd(*a, *b, &node.shape, gout, grads, |g, x, y| (g / y, -g * x / (y * y)));
            }
            Op::Neg(a) => self.unary_bwd(*a, None, gout, grads, |_, _, g| -g),
            Op::Relu(a) => {
                self.unary_bwd(*a, None, gout, grads, |x, _, g| if x > T::zero() { g } else { T::zero() })
            }
            Op::LeakyRelu(a, al) => {
                let al = T::from_f64(*al);
                self.unary_bwd(*a, None, gout, grads, move |x, _, g| if x > T::zero() { g } else { al * g })
            }
            Op::Sigmoid(a) => {
                self.unary_bwd(*a, Some(&node.data), gout, grads, |_, y, g| g * y * (T::one() - y))
            }
            Op::Tanh(a) => {
                self.unary_bwd(*a, Some(&node.data), gout, grads, |_, y, g| g * (T::one() - y * y))
            }
            Op::Softplus(a) => self.unary_bwd(*a, None, gout, grads, |x, _, g| g * sigmoid_scalar(x)),
            Op::Exp(a) => self.unary_bwd(*a, Some(&node.data), gout, grads, |_, y, g| g * y),
            Op::Ln(a) => self.unary_bwd(*a, None, gout, grads, |x, _, g| g / x),
            Op::Sqrt(a) => {
                let two = T::from_f64(2.0);
                self.unary_bwd(*a, Some(&node.data), gout, grads, move |_, y, g| g / (two * y))
            }
            Op::Abs(a) => self.unary_bwd(*a, None, gout, grads, |x, _, g| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
            Op::Softmax { x, axis } => {
                if self.nodes[x.0].requires_grad {
                    let gin = softmax_backward(&node.data, &node.shape, *axis, gout);
                    accumulate(grads, x.0, self.nodes[x.0].data.len(), &gin);
                }
            }
            Op::Sum(a) => {
                if self.nodes[a.0].requires_grad {
                    let g = gout[0];
                    let n = self.nodes[a.0].data.len();
                    with_grad(grads, a.0, n, |gx| {
                        for d in gx.iter_mut() {
                            *d += g;
                        }
                    });
                }
            }
            Op::Mean(a) => {
                if self.nodes[a.0].requires_grad {
                    let n = self.nodes[a.0].data.len();
                    let g = gout[0] / T::from_f64(n as f64);
                    with_grad(grads, a.0, n, |gx| {
                        for d in gx.iter_mut() {
                            *d += g;
                        }
                    });
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.nodes[a.0].requires_grad {
                    // dA = dC . B^T
                    let bt = transpose_raw(&self.nodes[b.0].data, k, n);
                    let da = matmul_raw(gout, &bt, m, n, k);
                    accumulate(grads, a.0, m * k, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . dC
                    let at = transpose_raw(&self.nodes[a.0].data, m, k);
                    let db = matmul_raw(&at, gout, k, m, n);
                    accumulate(grads, b.0, k * n, &db);
                }
            }
            Op::Transpose(a) => {
                if self.nodes[a.0].requires_grad {
                    let (n, m) = (node.shape[0], node.shape[1]);
                    let g = transpose_raw(gout, n, m);
                    accumulate(grads, a.0, m * n, &g);
                }
            }
            Op::Reshape(a) => {
                if self.nodes[a.0].requires_grad {
                    accumulate(grads, a.0, self.nodes[a.0].data.len(), gout);
                }
            }
            Op::Concat0(a, b) => {
                let na = self.nodes[a.0].data.len();
                if self.nodes[a.0].requires_grad {
                    accumulate(grads, a.0, na, &gout[..na]);
                }
                if self.nodes[b.0].requires_grad {
                    let nb = self.nodes[b.0].data.len();
                    accumulate(grads, b.0, nb, &gout[na..na + nb]);
                }
            }
            Op::Slice0 { x, start } => {
                if self.nodes[x.0].requires_grad {
                    let inner: usize = self.nodes[x.0].shape[1..].iter().product();
                    let nx = self.nodes[x.0].data.len();
                    with_grad(grads, x.0, nx, |gx| {
                        let off = start * inner;
                        for (d, s) in gx[off..off + gout.len()].iter_mut().zip(gout) {
                            *d += *s;
                        }
                    });
                }
            }
            Op::Conv2d { input, kernel, stride, pad } => {
                let in_sh = as3(&self.nodes[input.0].shape);
                let k_sh = as4(&self.nodes[kernel.0].shape);
                let out_sh = as3(&node.shape);
                if self.nodes[input.0].requires_grad {
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        conv::conv_bwd_input_into(gout, out_sh, &self.nodes[kernel.0].data, k_sh, *stride, *pad, in_sh, gx);
                    });
                }
                if self.nodes[kernel.0].requires_grad {
                    let nk = self.nodes[kernel.0].data.len();
                    with_grad(grads, kernel.0, nk, |gk| {
                        conv::conv_bwd_kernel_into(gout, out_sh, &self.nodes[input.0].data, in_sh, *stride, *pad, k_sh, gk);
                    });
                }
            }
            Op::ConvT2d { input, kernel, stride, pad } => {
                let in_sh = as3(&self.nodes[input.0].shape);
                let k_sh = as4(&self.nodes[kernel.0].shape);
                let out_sh = as3(&node.shape);
                if self.nodes[input.0].requires_grad {
                    // adjoint of the adjoint: a plain convolution of gout
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        conv::conv_fwd_into(gout, out_sh, &self.nodes[kernel.0].data, k_sh, *stride, *pad, in_sh, gx);
                    });
                }
                if self.nodes[kernel.0].requires_grad {
                    let nk = self.nodes[kernel.0].data.len();
                    with_grad(grads, kernel.0, nk, |gk| {
                        conv::conv_bwd_kernel_into(&self.nodes[input.0].data, in_sh, gout, out_sh, *stride, *pad, k_sh, gk);
                    });
                }
            }
            Op::MaxPool2d { input, argmax, .. } => {
                if self.nodes[input.0].requires_grad {
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        for (o, &src) in argmax.iter().enumerate() {
                            gx[src] += gout[o];
                        }
                    });
                }
            }
            Op::AvgPool2d { input, window, stride } => {
                if self.nodes[input.0].requires_grad {
                    let in_sh = as3(&self.nodes[input.0].shape);
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        conv::avg_pool_bwd_into(gout, as3(&node.shape), in_sh, *window, *stride, gx);
                    });
                }
            }
            Op::BlurPool2d(input) => {
                if self.nodes[input.0].requires_grad {
                    let in_sh = as3(&self.nodes[input.0].shape);
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        conv::blurpool_bwd_into(gout, as3(&node.shape), in_sh, gx);
                    });
                }
            }
            Op::UpsampleNearest2x(input) => {
                if self.nodes[input.0].requires_grad {
                    let [c, h2, w2] = as3(&node.shape);
                    let (h, w) = (h2 / 2, w2 / 2);
                    let nx = self.nodes[input.0].data.len();
                    with_grad(grads, input.0, nx, |gx| {
                        for ci in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    let base = ci * h2 * w2;
                                    let g = gout[base + 2 * y * w2 + 2 * x]
                                        + gout[base + 2 * y * w2 + 2 * x + 1]
                                        + gout[base + (2 * y + 1) * w2 + 2 * x]
                                        + gout[base + (2 * y + 1) * w2 + 2 * x + 1];
                                    gx[(ci * h + y) * w + x] += g;
                                }
                            }
                        }
                    });
                }
            }
        }
    }

    /// f(input_value, output_value, grad_out) -> grad_in; `out` carries the
    /// forward result for derivatives expressed in terms of the output.
    fn unary_bwd(
        &self,
        a: TensorId,
        out: Option<&[T]>,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        f: impl Fn(T, T, T) -> T,
    ) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let xs = &self.nodes[a.0].data;
        let n = xs.len();
        with_grad(grads, a.0, n, |gx| match out {
            Some(ys) => {
                for idx in 0..n {
                    gx[idx] += f(xs[idx], ys[idx], gout[idx]);
                }
            }
            None => {
                for idx in 0..n {
                    gx[idx] += f(xs[idx], T::zero(), gout[idx]);
                }
            }
        });
    }

    fn binary_bwd(
        &self,
        a: TensorId,
        b: TensorId,
        out_shape: &[usize],
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        f: impl Fn(T, T, T) -> (T, T),
    ) {
        let need_a = self.nodes[a.0].requires_grad;
        let need_b = self.nodes[b.0].requires_grad;
        if !need_a && !need_b {
            return;
        }
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut ga = vec![T::zero(); if need_a { da.len() } else { 0 }];
        let mut gb = vec![T::zero(); if need_b { db.len() } else { 0 }];
        if self.nodes[a.0].shape == self.nodes[b.0].shape {
            for i in 0..gout.len() {
                let (xa, xb) = f(gout[i], da[i], db[i]);
                if need_a {
                    ga[i] += xa;
                }
                if need_b {
                    gb[i] += xb;
                }
            }
        } else {
            let mut o = 0usize;
            for_each_broadcast_pair(&self.nodes[a.0].shape, &self.nodes[b.0].shape, out_shape, |ia, ib| {
                let (xa, xb) = f(gout[o], da[ia], db[ib]);
                if need_a {
                    ga[ia] += xa;
                }
                if need_b {
                    gb[ib] += xb;
                }
                o += 1;
            });
        }
        if need_a {
            accumulate(grads, a.0, da.len(), &ga);
        }
        if need_b {
            accumulate(grads, b.0, db.len(), &gb);
        }
    }
}

fn with_grad<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, numel: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[idx].get_or_insert_with(|| vec![T::zero(); numel]);
    f(slot);
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, numel: usize, add: &[T]) {
    with_grad(grads, idx, numel, |g| {
        for (d, s) in g.iter_mut().zip(add) {
            *d += *s;
        }
    });
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_forward<T: Scalar>(data: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for k in 0..inner {
            let at = |j: usize| (o * len + j) * inner + k;
            let mut mx = data[at(0)];
            for j in 1..len {
                if data[at(j)] > mx {
                    mx = data[at(j)];
                }
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (data[at(j)] - mx).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    out
}

fn softmax_backward<T: Scalar>(y: &[T], shape: &[usize], axis: usize, gout: &[T]) -> Vec<T> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut gin = vec![T::zero(); y.len()];
    for o in 0..outer {
        for k in 0..inner {
            let at = |j: usize| (o * len + j) * inner + k;
            let mut dot = T::zero();
            for j in 0..len {
                dot += gout[at(j)] * y[at(j)];
            }
            for j in 0..len {
                gin[at(j)] = y[at(j)] * (gout[at(j)] - dot);
            }
        }
    }
    gin
}

fn as3(s: &[usize]) -> [usize; 3] {
    assert_eq!(s.len(), 3, "expected a [c, h, w] tensor, got {s:?}");
    [s[0], s[1], s[2]]
}

fn as4(s: &[usize]) -> [usize; 4] {
    assert_eq!(s.len(), 4, "expected a [c_out, c_in, kh, kw] tensor, got {s:?}");
    [s[0], s[1], s[2], s[3]]
}
