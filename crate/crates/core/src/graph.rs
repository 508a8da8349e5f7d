//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A [`Graph`] records every operation as a node holding its output value;
//! node ids are topologically ordered by construction, so the backward pass
//! is a single reverse sweep. Parameters live outside the graph in a
//! [`ParamStore`] and are leased in as leaves each step; after `backward`,
//! [`Graph::accumulate_param_grads`] copies leaf gradients back into the
//! store.
//!
//! Shape algebra is strict: binary operations demand exactly matching shapes
//! (no broadcasting beyond the documented row/channel bias forms), and every
//! violation is a [`Error::Shape`] rather than a silent coercion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat store of trainable parameters shared by all model pieces.
#[derive(Debug, Clone)]
pub struct ParamStore<F: Scalar> {
    params: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Register a tensor as a trainable parameter; the grad slot is attached.
    pub fn register(&mut self, tensor: Tensor<F>) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(tensor.with_grad());
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    /// `[R,C] + [C]`, the bias form used by fully connected layers.
    AddRow(NodeId, NodeId),
    /// `[R,C] ⊙ [C]`, the diagonal (peephole) weight form.
    MulRow(NodeId, NodeId),
    /// `[N,C,H,W] + [C]` per-channel bias.
    AddChannelBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        dilation: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Dropout {
        input: NodeId,
        mask: Vec<F>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    /// `[R,C] -> [R,1]` row-wise sum.
    RowSum(NodeId),
    SelectRows {
        input: NodeId,
        indices: Vec<usize>,
    },
    /// Stack `[R_i,C]` tensors into `[ΣR_i, C]`.
    ConcatRows(Vec<NodeId>),
    /// x / sqrt(mean(x^2)); `norm` is the saved normalizer (0 when degenerate).
    PowerNormalize {
        input: NodeId,
        norm: F,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    op: Op<F>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Operation tape for one forward/backward pass.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<F: Scalar>(ctx: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(ctx, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn dims4<F: Scalar>(ctx: &'static str, t: &Tensor<F>) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(Error::shape(ctx, format!("expected 4-d tensor, got {:?}", other))),
    }
}

fn dims2<F: Scalar>(ctx: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(ctx, format!("expected 2-d tensor, got {:?}", other))),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, grad: None, op, requires_grad, param: None });
        id
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of `id`, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor that does not participate in differentiation
    /// (inputs, labels, channel noise).
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a leaf that gradients flow into (used by tests probing inputs).
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Lease a parameter into the graph; its gradient is harvested back by
    /// [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let node = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[node.0].param = Some(id);
        node
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: F) -> NodeId {
        let data = self.value(a).iter().map(|&x| x * factor).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .iter()
            .map(|&x| F::one() / (F::one() + (-x).exp()))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).iter().map(|&x| x.tanh()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = dims2("matmul lhs", self.value(a))?;
        let (kb, n) = dims2("matmul rhs", self.value(b))?;
        if ka != kb {
            return Err(Error::shape("matmul", format!("inner dims {} vs {}", ka, kb)));
        }
        let mut out = vec![F::zero(); m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for i in 0..m {
                for l in 0..ka {
                    let x = av[i * ka + l];
                    if x == F::zero() {
                        continue;
                    }
                    let brow = &bv[l * n..(l + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bz) in orow.iter_mut().zip(brow) {
                        *o += x * bz;
                    }
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `[R,C] + [C]` (bias broadcast across rows).
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = dims2("add_row input", self.value(a))?;
        if self.value(bias).shape() != [c] {
            return Err(Error::shape(
                "add_row bias",
                format!("expected [{}], got {:?}", c, self.value(bias).shape()),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] + bv[j]);
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// `[R,C] ⊙ [C]` (diagonal weight broadcast across rows).
    pub fn mul_row(&mut self, a: NodeId, weight: NodeId) -> Result<NodeId> {
        let (r, c) = dims2("mul_row input", self.value(a))?;
        if self.value(weight).shape() != [c] {
            return Err(Error::shape(
                "mul_row weight",
                format!("expected [{}], got {:?}", c, self.value(weight).shape()),
            ));
        }
        let av = self.value(a).data();
        let wv = self.value(weight).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] * wv[j]);
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.requires(a) || self.requires(weight);
        Ok(self.push(value, Op::MulRow(a, weight), rg))
    }

    /// `[N,C,H,W] + [C]` per-channel bias.
    pub fn add_channel_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = dims4("add_channel_bias input", self.value(a))?;
        if self.value(bias).shape() != [c] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("expected [{}], got {:?}", c, self.value(bias).shape()),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(bias).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(av.len());
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let b = bv[ci];
                for k in 0..hw {
                    out.push(av[base + k] + b);
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(value, Op::AddChannelBias(a, bias), rg))
    }

    /// `fully_connected(x[N,D], w[D,E], b[E]) -> [N,E]`: affine map.
    pub fn fully_connected(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    /// 2-d convolution with zero padding and dilation (atrous) support.
    ///
    /// input `[N,C,H,W]`, kernel `[F,C,kh,kw]`; output
    /// `H' = (H + 2·padding − dilation·(kh−1) − 1)/stride + 1`, same for `W'`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 || dilation == 0 {
            return Err(Error::domain("conv2d", "stride and dilation must be >= 1"));
        }
        let (n, c, h, w) = dims4("conv2d input", self.value(input))?;
        let (f, kc, kh, kw) = dims4("conv2d kernel", self.value(kernel))?;
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", kc, c),
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::domain("conv2d", "kernel extent must be >= 1"));
        }
        let ext_h = dilation * (kh - 1) + 1;
        let ext_w = dilation * (kw - 1) + 1;
        if h + 2 * padding < ext_h || w + 2 * padding < ext_w {
            return Err(Error::domain(
                "conv2d",
                format!(
                    "effective kernel {}x{} exceeds padded input {}x{}",
                    ext_h,
                    ext_w,
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        let oh = (h + 2 * padding - ext_h) / stride + 1;
        let ow = (w + 2 * padding - ext_w) / stride + 1;

        let xv = self.value(input).data();
        let kv = self.value(kernel).data();
        let mut out = vec![F::zero(); n * f * oh * ow];
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = F::zero();
                        for ci in 0..c {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix =
                                        (ox * stride + kx * dilation) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                    let ki = ((fi * c + ci) * kh + ky) * kw + kx;
                                    acc += xv[xi] * kv[ki];
                                }
                            }
                        }
                        out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, f, oh, ow], out)?;
        let rg = self.requires(input) || self.requires(kernel);
        Ok(self.push(value, Op::Conv2d { input, kernel, stride, dilation, padding }, rg))
    }

    /// Transposed (fractionally strided) convolution.
    ///
    /// input `[N,C,H,W]`, kernel `[C,F,kh,kw]`; output spatial size
    /// `(H−1)·stride − 2·padding + kh`.
    pub fn transposed_conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::domain("transposed_conv2d", "stride must be >= 1"));
        }
        let (n, c, h, w) = dims4("transposed_conv2d input", self.value(input))?;
        let (kc, f, kh, kw) = dims4("transposed_conv2d kernel", self.value(kernel))?;
        if kc != c {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("kernel expects {} input channels, input has {}", kc, c),
            ));
        }
        let oh_full = (h - 1) * stride + kh;
        let ow_full = (w - 1) * stride + kw;
        if oh_full < 2 * padding + 1 || ow_full < 2 * padding + 1 {
            return Err(Error::domain("transposed_conv2d", "padding swallows entire output"));
        }
        let oh = oh_full - 2 * padding;
        let ow = ow_full - 2 * padding;

        let xv = self.value(input).data();
        let kv = self.value(kernel).data();
        let mut out = vec![F::zero(); n * f * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let x = xv[((ni * c + ci) * h + iy) * w + ix];
                        if x == F::zero() {
                            continue;
                        }
                        for fi in 0..f {
                            for ky in 0..kh {
                                let oy = (iy * stride + ky) as isize - padding as isize;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ox = (ix * stride + kx) as isize - padding as isize;
                                    if ox < 0 || ox >= ow as isize {
                                        continue;
                                    }
                                    let ki = ((ci * f + fi) * kh + ky) * kw + kx;
                                    out[((ni * f + fi) * oh + oy as usize) * ow + ox as usize] +=
                                        x * kv[ki];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, f, oh, ow], out)?;
        let rg = self.requires(input) || self.requires(kernel);
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, stride, padding }, rg))
    }

    /// Max pooling; gradient routes to the first-scanned maximum of each window.
    pub fn max_pool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        if window == 0 || stride == 0 {
            return Err(Error::domain("max_pool2d", "window and stride must be >= 1"));
        }
        let (n, c, h, w) = dims4("max_pool2d input", self.value(input))?;
        if window > h || window > w {
            return Err(Error::domain(
                "max_pool2d",
                format!("window {} exceeds input {}x{}", window, h, w),
            ));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let xv = self.value(input).data();
        let mut out = vec![F::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for ni in 0..n {
            for ci in 0..c {
                let plane = (ni * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for ky in 0..window {
                            for kx in 0..window {
                                let idx = plane + (oy * stride + ky) * w + (ox * stride + kx);
                                // strict > keeps the first-scanned max on ties
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((ni * c + ci) * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, rg))
    }

    /// Inverted dropout: in training, zero each element with probability
    /// `rate` and scale survivors by `1/(1−rate)`; identity otherwise.
    pub fn dropout(
        &mut self,
        input: NodeId,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain("dropout", format!("rate {} outside [0,1)", rate)));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = real::<F>(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(input).numel())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let data = self.value(input).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(self.value(input).shape().to_vec(), data)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(input).clone().reshaped(shape)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).sum();
        let rg = self.requires(input);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    /// `[R,C] -> [R,1]` row sums.
    pub fn row_sum(&mut self, input: NodeId) -> Result<NodeId> {
        let (r, c) = dims2("row_sum", self.value(input))?;
        let xv = self.value(input).data();
        let out = (0..r)
            .map(|i| xv[i * c..(i + 1) * c].iter().copied().fold(F::zero(), |a, b| a + b))
            .collect();
        let value = Tensor::new(vec![r, 1], out)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::RowSum(input), rg))
    }

    /// Gather rows of a `[R,C]` tensor.
    pub fn select_rows(&mut self, input: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (r, c) = dims2("select_rows", self.value(input))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::domain(
                "select_rows",
                format!("row index {} out of range for {} rows", bad, r),
            ));
        }
        let xv = self.value(input).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![indices.len(), c], out)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::SelectRows { input, indices: indices.to_vec() }, rg))
    }

    /// Stack 2-d tensors with equal column counts into one `[ΣR_i, C]`.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no tensors given"));
        }
        let (_, c) = dims2("concat_rows", self.value(parts[0]))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = dims2("concat_rows", self.value(p))?;
            if pc != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts differ: {} vs {}", c, pc),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, c], out)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Normalize to unit average symbol power: `x / sqrt(mean(x²))`.
    ///
    /// An all-zero input is passed through unchanged (the divide is skipped)
    /// and contributes no gradient.
    pub fn power_normalize(&mut self, input: NodeId) -> NodeId {
        let xv = self.value(input).data();
        let n = xv.len();
        let ss = xv.iter().map(|&x| x * x).fold(F::zero(), |a, b| a + b);
        let norm = if ss == F::zero() {
            F::zero()
        } else {
            (ss / real::<F>(n as f64)).sqrt()
        };
        let data: Vec<F> = if norm == F::zero() {
            xv.to_vec()
        } else {
            xv.iter().map(|&x| x / norm).collect()
        };
        let value = Tensor::new(self.value(input).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(value, Op::PowerNormalize { input, norm }, rg)
    }

    /// Reverse sweep from a scalar loss; fresh contributions are added into
    /// each node's gradient accumulator, so repeated calls accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut work: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        work[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = work[id].take() else { continue };
            self.propagate(id, &g, &mut work);
            match &mut self.nodes[id].grad {
                Some(acc) => {
                    for (a, &d) in acc.iter_mut().zip(&g) {
                        *a += d;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[F], work: &mut [Option<Vec<F>>]) {
        macro_rules! sink {
            ($node:expr) => {{
                let nid: NodeId = $node;
                if self.nodes[nid.0].requires_grad {
                    Some(
                        work[nid.0]
                            .get_or_insert_with(|| vec![F::zero(); self.nodes[nid.0].value.numel()]),
                    )
                } else {
                    None
                }
            }};
        }

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if let Some(gb) = sink!(b) {
                    for (x, &d) in gb.iter_mut().zip(g) {
                        *x += d;
                    }
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if let Some(gb) = sink!(b) {
                    for (x, &d) in gb.iter_mut().zip(g) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                if let Some(ga) = sink!(a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = sink!(b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, factor) => {
                let (a, factor) = (*a, *factor);
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d * factor;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let out = self.nodes[id].value.data();
                if let Some(ga) = sink!(a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (F::one() - out[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                let a = *a;
                let out = self.nodes[id].value.data();
                if let Some(ga) = sink!(a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (F::one() - out[i] * out[i]);
                    }
                }
            }
            Op::Relu(a) => {
                let a = *a;
                let xv = self.nodes[a.0].value.data();
                if let Some(ga) = sink!(a) {
                    for i in 0..g.len() {
                        if xv[i] > F::zero() {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                if let Some(ga) = sink!(a) {
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = F::zero();
                            for j in 0..n {
                                acc += g[i * n + j] * bv[l * n + j];
                            }
                            ga[i * k + l] += acc;
                        }
                    }
                }
                if let Some(gb) = sink!(b) {
                    for l in 0..k {
                        for i in 0..m {
                            let x = av[i * k + l];
                            if x == F::zero() {
                                continue;
                            }
                            for j in 0..n {
                                gb[l * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                let (a, bias) = (*a, *bias);
                let c = self.nodes[bias.0].value.numel();
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if let Some(gb) = sink!(bias) {
                    for (i, &d) in g.iter().enumerate() {
                        gb[i % c] += d;
                    }
                }
            }
            Op::MulRow(a, weight) => {
                let (a, weight) = (*a, *weight);
                let c = self.nodes[weight.0].value.numel();
                let av = self.nodes[a.0].value.data();
                let wv = self.nodes[weight.0].value.data();
                if let Some(ga) = sink!(a) {
                    for (i, &d) in g.iter().enumerate() {
                        ga[i] += d * wv[i % c];
                    }
                }
                if let Some(gw) = sink!(weight) {
                    for (i, &d) in g.iter().enumerate() {
                        gw[i % c] += d * av[i];
                    }
                }
            }
            Op::AddChannelBias(a, bias) => {
                let (a, bias) = (*a, *bias);
                let shape = self.nodes[a.0].value.shape().to_vec();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if let Some(gb) = sink!(bias) {
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let mut acc = F::zero();
                            for k in 0..hw {
                                acc += g[base + k];
                            }
                            gb[ci] += acc;
                        }
                    }
                }
            }
            Op::Conv2d { input, kernel, stride, dilation, padding } => {
                let (input, kernel) = (*input, *kernel);
                let (stride, dilation, padding) = (*stride, *dilation, *padding);
                let ishape = self.nodes[input.0].value.shape().to_vec();
                let kshape = self.nodes[kernel.0].value.shape().to_vec();
                let oshape = self.nodes[id].value.shape().to_vec();
                let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
                let (f, kh, kw) = (kshape[0], kshape[2], kshape[3]);
                let (oh, ow) = (oshape[2], oshape[3]);
                let xv = self.nodes[input.0].value.data();
                let kv = self.nodes[kernel.0].value.data();
                let want_input = self.nodes[input.0].requires_grad;
                let want_kernel = self.nodes[kernel.0].requires_grad;
                let mut gx = if want_input { vec![F::zero(); xv.len()] } else { Vec::new() };
                let mut gk = if want_kernel { vec![F::zero(); kv.len()] } else { Vec::new() };
                for ni in 0..n {
                    for fi in 0..f {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[((ni * f + fi) * oh + oy) * ow + ox];
                                if go == F::zero() {
                                    continue;
                                }
                                for ci in 0..c {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky * dilation) as isize
                                            - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx * dilation) as isize
                                                - padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let xi = ((ni * c + ci) * h + iy as usize) * w
                                                + ix as usize;
                                            let ki = ((fi * c + ci) * kh + ky) * kw + kx;
                                            if want_input {
                                                gx[xi] += go * kv[ki];
                                            }
                                            if want_kernel {
                                                gk[ki] += go * xv[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(ga) = sink!(input) {
                    for (x, d) in ga.iter_mut().zip(gx) {
                        *x += d;
                    }
                }
                if let Some(gw) = sink!(kernel) {
                    for (x, d) in gw.iter_mut().zip(gk) {
                        *x += d;
                    }
                }
            }
            Op::ConvTranspose2d { input, kernel, stride, padding } => {
                let (input, kernel) = (*input, *kernel);
                let (stride, padding) = (*stride, *padding);
                let ishape = self.nodes[input.0].value.shape().to_vec();
                let kshape = self.nodes[kernel.0].value.shape().to_vec();
                let oshape = self.nodes[id].value.shape().to_vec();
                let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
                let (f, kh, kw) = (kshape[1], kshape[2], kshape[3]);
                let (oh, ow) = (oshape[2], oshape[3]);
                let xv = self.nodes[input.0].value.data();
                let kv = self.nodes[kernel.0].value.data();
                let want_input = self.nodes[input.0].requires_grad;
                let want_kernel = self.nodes[kernel.0].requires_grad;
                let mut gx = if want_input { vec![F::zero(); xv.len()] } else { Vec::new() };
                let mut gk = if want_kernel { vec![F::zero(); kv.len()] } else { Vec::new() };
                for ni in 0..n {
                    for ci in 0..c {
                        for iy in 0..h {
                            for ix in 0..w {
                                let xi = ((ni * c + ci) * h + iy) * w + ix;
                                for fi in 0..f {
                                    for ky in 0..kh {
                                        let oy = (iy * stride + ky) as isize - padding as isize;
                                        if oy < 0 || oy >= oh as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ox = (ix * stride + kx) as isize - padding as isize;
                                            if ox < 0 || ox >= ow as isize {
                                                continue;
                                            }
                                            let go = g[((ni * f + fi) * oh + oy as usize) * ow
                                                + ox as usize];
                                            let ki = ((ci * f + fi) * kh + ky) * kw + kx;
                                            if want_input {
                                                gx[xi] += go * kv[ki];
                                            }
                                            if want_kernel {
                                                gk[ki] += go * xv[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(ga) = sink!(input) {
                    for (x, d) in ga.iter_mut().zip(gx) {
                        *x += d;
                    }
                }
                if let Some(gw) = sink!(kernel) {
                    for (x, d) in gw.iter_mut().zip(gk) {
                        *x += d;
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let input = *input;
                if let Some(ga) = sink!(input) {
                    for (o, &src) in argmax.iter().enumerate() {
                        ga[src] += g[o];
                    }
                }
            }
            Op::Dropout { input, mask } => {
                let input = *input;
                if let Some(ga) = sink!(input) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Reshape(a) => {
                let a = *a;
                if let Some(ga) = sink!(a) {
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
            }
            Op::Sum(a) => {
                let a = *a;
                let d = g[0];
                if let Some(ga) = sink!(a) {
                    for x in ga.iter_mut() {
                        *x += d;
                    }
                }
            }
            Op::RowSum(a) => {
                let a = *a;
                let c = self.nodes[a.0].value.shape()[1];
                if let Some(ga) = sink!(a) {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i / c];
                    }
                }
            }
            Op::SelectRows { input, indices } => {
                let input = *input;
                let c = self.nodes[input.0].value.shape()[1];
                if let Some(ga) = sink!(input) {
                    for (row, &src) in indices.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g[row * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    if let Some(gp) = sink!(p) {
                        for i in 0..n {
                            gp[i] += g[offset + i];
                        }
                    }
                    offset += n;
                }
            }
            Op::PowerNormalize { input, norm } => {
                let (input, s) = (*input, *norm);
                if s == F::zero() {
                    return; // degenerate all-zero batch: no gradient
                }
                let xv = self.nodes[input.0].value.data();
                let n = real::<F>(xv.len() as f64);
                let dot = g.iter().zip(xv).map(|(&gi, &xi)| gi * xi).fold(F::zero(), |a, b| a + b);
                let s3 = s * s * s;
                if let Some(ga) = sink!(input) {
                    for i in 0..g.len() {
                        ga[i] += g[i] / s - xv[i] * dot / (n * s3);
                    }
                }
            }
        }
    }

    /// Copy gradients of parameter leaves back into the store, accumulating.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<F>) {
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) {
                store.value_mut(pid).accumulate_grad(grad);
            }
        }
    }
}
