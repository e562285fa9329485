//! Reverse-mode automatic differentiation over an eagerly evaluated tape.
//!
//! Every operation computes its value immediately and appends a node that
//! remembers its inputs and whatever forward state its backward rule needs.
//! Node order is the recording order, so inputs always precede their
//! consumers and a single reverse sweep visits each node once.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, NormSaved};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, dims: ConvDims },
    InstanceNorm { x: Var, gamma: Var, beta: Var, saved: NormSaved<T>, batch: usize, channels: usize, plane: usize },
    Relu { x: Var },
    AvgPool { x: Var, planes: usize, h: usize, w: usize },
    Linear { x: Var, w: Var, b: Var, n: usize, d: usize, k: usize },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize>, k: usize },
    Sum { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AttentionPool { x: Var, batch: usize, channels: usize, spatial: usize, p: T },
    NormalizeRows { x: Var, norms: Vec<T>, eps: T, cols: usize },
    MeanRows { x: Var, rows: usize, cols: usize },
    Mse { a: Var, b: Var },
    SliceRows { x: Var, start: usize },
    Gather { x: Var, index: Vec<Option<usize>> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Single-owner: build and differentiate on one thread.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, value)
            .expect("kernel output matches shape")
            .with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `tensor` as a leaf, honouring its `requires_grad` flag.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.clear_grad();
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] root with respect to `v`,
    /// or `None` if `v` does not influence the root.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        self.grad(v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); self.value(v).numel()])
    }

    // ── operations ──────────────────────────────────────────────────────

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("expected 4-d input/weight and 1-d bias, got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight expects {}", xs[1], ws[1]),
            ));
        }
        if ws[2] != ws[3] || bs[0] != ws[0] {
            return Err(Error::shape("conv2d", format!("weight {ws:?} with bias {bs:?}")));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(Error::shape("conv2d", format!("kernel {ws:?} larger than padded input {xs:?}")));
        }
        let dims = ConvDims {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ws[0],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            pad,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
        );
        let shape = vec![dims.batch, dims.out_channels, dims.out_height(), dims.out_width()];
        Ok(self.push(out, shape, Op::Conv2d { x, w, b, dims }, &[x, w, b]))
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::shape("instance_norm", format!("input {xs:?} has no spatial axes")));
        }
        let (batch, channels) = (xs[0], xs[1]);
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels {
            return Err(Error::shape(
                "instance_norm",
                format!("affine parameters must have {channels} entries"),
            ));
        }
        let plane: usize = xs[2..].iter().product();
        let (out, saved) = kernels::instance_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            batch,
            channels,
            plane,
            eps,
        );
        Ok(self.push(
            out,
            xs,
            Op::InstanceNorm { x, gamma, beta, saved, batch, channels, plane },
            &[x, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Relu { x }, &[x])
    }

    /// 3x3 average pooling, stride 2, zero padding 1, divisor 9.
    pub fn avgpool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::shape("avgpool", format!("need [N,C,H,W] with H,W >= 2, got {xs:?}")));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let out = kernels::avgpool_forward(self.value(x).data(), planes, h, w);
        let shape = vec![xs[0], xs[1], kernels::pooled_extent(h), kernels::pooled_extent(w)];
        Ok(self.push(out, shape, Op::AvgPool { x, planes, h, w }, &[x]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        let out = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            d,
            k,
        );
        Ok(self.push(out, vec![n, k], Op::Linear { x, w, b, n, d, k }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push(data, shape, Op::Reshape { x }, &[x]))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let rows = xs[0];
        let cols = xs[1..].iter().product::<usize>();
        self.reshape(x, [rows, cols]).expect("flatten preserves size")
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {ls:?} with {} labels", labels.len()),
            ));
        }
        let (n, k) = (ls[0], ls[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &z[i * k..][..k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - m).exp()).sum();
            let log_sum = sum.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / sum;
            }
            loss = loss + (log_sum + m - row[labels[i]]);
        }
        loss = loss / T::of(n as f64);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec(), k },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum { x }, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale { x, c }, &[x])
    }

    /// `[B,C,H,W] -> [B,H,W]`, summing `|x|^p` over channels.
    pub fn attention_pool(&mut self, x: Var, p: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::shape("attention_pool", format!("need [B,C,...], got {xs:?}")));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        let out = kernels::attention_pool_forward(self.value(x).data(), batch, channels, spatial, p);
        let mut shape = vec![batch];
        shape.extend_from_slice(&xs[2..]);
        Ok(self.push(
            out,
            shape,
            Op::AttentionPool { x, batch, channels, spatial, p },
            &[x],
        ))
    }

    /// Scales each row of a `[B,D]` tensor to unit L2 norm: `x / (‖x‖ + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("normalize_rows", format!("need [B,D], got {xs:?}")));
        }
        let cols = xs[1];
        let data = self.value(x).data();
        let mut norms = Vec::with_capacity(xs[0]);
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks(cols) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            out.extend(row.iter().map(|&v| v / (n + eps)));
        }
        Ok(self.push(out, xs, Op::NormalizeRows { x, norms, eps, cols }, &[x]))
    }

    /// `[B,D] -> [D]`, the empirical mean over rows.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("mean_rows", format!("need [B,D], got {xs:?}")));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let mut out = vec![T::zero(); cols];
        for row in self.value(x).data().chunks(cols) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
        }
        let inv = T::one() / T::of(rows as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        Ok(self.push(out, vec![cols], Op::MeanRows { x, rows, cols }, &[x]))
    }

    /// Mean over components of `(a - b)^2`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let n = self.value(a).numel();
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = s / T::of(n as f64);
        Ok(self.push(vec![out], vec![1], Op::Mse { a, b }, &[a, b]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).slice_rows(start, len)?;
        let shape = t.shape().to_vec();
        Ok(self.push(t.into_data(), shape, Op::SliceRows { x, start }, &[x]))
    }

    /// `out[i] = x[index[i]]`, or zero where the index is `None`.
    pub fn gather(&mut self, x: Var, index: Vec<Option<usize>>, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let n = self.value(x).numel();
        if shape.iter().product::<usize>() != index.len() || index.iter().flatten().any(|&i| i >= n) {
            return Err(Error::shape("gather", format!("index map does not fit {shape:?}")));
        }
        let src = self.value(x).data();
        let out = index.iter().map(|i| i.map_or(T::zero(), |i| src[i])).collect();
        Ok(self.push(out, shape, Op::Gather { x, index }, &[x]))
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Computes `∂root/∂v` for every node `v` that requires grad and
    /// influences `root`. Contributions from multiple consumers add up.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut self.grads,
            };
            sink.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> GradSink<'_, T> {
    fn add(&mut self, v: Var, contribution: impl FnOnce() -> Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(c),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = self.nodes;
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        let needs = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(*x), val(*w), g, *dims, needs(*x), needs(*w));
                if let Some(dx) = dx {
                    self.add(*x, || dx);
                }
                if let Some(dw) = dw {
                    self.add(*w, || dw);
                }
                self.add(*b, || db);
            }
            Op::InstanceNorm { x, gamma, beta, saved, batch, channels, plane } => {
                let (dx, dg, db) =
                    kernels::instance_norm_backward(g, val(*gamma), saved, *batch, *channels, *plane);
                self.add(*x, || dx);
                self.add(*gamma, || dg);
                self.add(*beta, || db);
            }
            Op::Relu { x } => {
                let xv = val(*x);
                self.add(*x, || {
                    xv.iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect()
                });
            }
            Op::AvgPool { x, planes, h, w } => {
                self.add(*x, || kernels::avgpool_backward(g, *planes, *h, *w));
            }
            Op::Linear { x, w, b, n, d, k } => {
                let (dx, dw, db) = kernels::linear_backward(val(*x), val(*w), g, *n, *d, *k);
                self.add(*x, || dx);
                self.add(*w, || dw);
                self.add(*b, || db);
            }
            Op::Reshape { x } => self.add(*x, || g.to_vec()),
            Op::SoftmaxCrossEntropy { logits, probs, labels, k } => {
                let scale = g[0] / T::of(labels.len() as f64);
                self.add(*logits, || {
                    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * k + l] = d[i * k + l] - scale;
                    }
                    d
                });
            }
            Op::Sum { x } => {
                let n = nodes[x.0].value.numel();
                self.add(*x, || vec![g[0]; n]);
            }
            Op::Add { a, b } => {
                self.add(*a, || g.to_vec());
                self.add(*b, || g.to_vec());
            }
            Op::Sub { a, b } => {
                self.add(*a, || g.to_vec());
                self.add(*b, || g.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                self.add(*a, || g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect());
                self.add(*b, || g.iter().zip(av).map(|(&gv, &x)| gv * x).collect());
            }
            Op::Scale { x, c } => self.add(*x, || g.iter().map(|&v| v * *c).collect()),
            Op::AttentionPool { x, batch, channels, spatial, p } => {
                self.add(*x, || {
                    kernels::attention_pool_backward(val(*x), g, *batch, *channels, *spatial, *p)
                });
            }
            Op::NormalizeRows { x, norms, eps, cols } => {
                let xv = val(*x);
                self.add(*x, || {
                    let mut dx = Vec::with_capacity(xv.len());
                    for ((row, grow), &n) in xv.chunks(*cols).zip(g.chunks(*cols)).zip(norms) {
                        let denom = n + *eps;
                        let dot: T = row.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        let coef = if n > T::zero() { dot / (n * denom * denom) } else { T::zero() };
                        dx.extend(row.iter().zip(grow).map(|(&xv, &gv)| gv / denom - xv * coef));
                    }
                    dx
                });
            }
            Op::MeanRows { x, rows, cols } => {
                let inv = T::one() / T::of(*rows as f64);
                self.add(*x, || {
                    let mut dx = Vec::with_capacity(rows * cols);
                    for _ in 0..*rows {
                        dx.extend(g.iter().map(|&v| v * inv));
                    }
                    dx
                });
            }
            Op::Mse { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let coef = T::of(2.0) * g[0] / T::of(av.len() as f64);
                let diff: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| (x - y) * coef).collect();
                if needs(*b) {
                    let neg: Vec<T> = diff.iter().map(|&v| -v).collect();
                    self.add(*b, || neg);
                }
                self.add(*a, || diff);
            }
            Op::SliceRows { x, start } => {
                let src = &nodes[x.0].value;
                let stride = src.numel() / src.shape()[0];
                self.add(*x, || {
                    let mut dx = vec![T::zero(); src.numel()];
                    dx[start * stride..start * stride + g.len()].copy_from_slice(g);
                    dx
                });
            }
            Op::Gather { x, index } => {
                let n = nodes[x.0].value.numel();
                self.add(*x, || {
                    let mut dx = vec![T::zero(); n];
                    for (&gv, i) in g.iter().zip(index) {
                        if let Some(i) = *i {
                            dx[i] = dx[i] + gv;
                        }
                    }
                    dx
                });
            }
        }
    }
}
