use std::sync::Arc;

use crate::error::{Error, Result};

use super::element::gemm;
use super::{Element, Tensor};

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
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Dot(Var, Var),
    DotConst(Var, Arc<[T]>),
    MulConst(Var, Arc<[T]>),
    L2Norm(Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it once in reverse.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` when the leaf does
    /// not require gradients or is unreachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Adds a bias along axis 1: `[N, F] + [F]` or `[B, C, H, W] + [C]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b[i % channels];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// 2-D cross-correlation, `[B, C, H, W] ⋆ [F, C, k, k] → [B, F, H', W']`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] || sk[2] != sk[3] || stride == 0 {
            return Err(Error::dim("conv2d", si, sk));
        }
        let geo = ConvGeometry::new(si, sk, stride, padding)?;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let mut out = vec![T::zero(); geo.batch * geo.filters * geo.out_hw()];
        let mut col = vec![T::zero(); geo.col_rows() * geo.out_hw()];
        for b in 0..geo.batch {
            geo.im2col(&x[b * geo.in_image()..(b + 1) * geo.in_image()], &mut col);
            let o = &mut out[b * geo.out_image()..(b + 1) * geo.out_image()];
            gemm(geo.filters, geo.col_rows(), geo.out_hw(), w, false, &col, false, o, false);
        }
        let shape = vec![geo.batch, geo.filters, geo.out_h, geo.out_w];
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Max pooling over square windows; gradient goes to the first maximal
    /// element of each window in row-major order.
    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 4 || window == 0 || stride == 0 || window > s[2] || window > s[3] {
            return Err(Error::dim("maxpool2d", s, &[window, window]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride * w + j * stride;
                    for di in 0..window {
                        for dj in 0..window {
                            let idx = base + (i * stride + di) * w + j * stride + dj;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::from_parts(vec![b, c, oh, ow], out),
            Op::MaxPool { input, argmax },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(Error::dim("reshape", v.shape(), shape));
        }
        let out = Tensor::from_parts(shape.to_vec(), v.data().to_vec());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `[B, ...] → [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", s, &[labels.len()]));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                index: bad,
                bound: c,
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for (row, &label) in labels.iter().enumerate() {
            let r = &x[row * c..(row + 1) * c];
            let max = r.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[row * c..(row + 1) * c];
            let mut z = T::zero();
            for (pi, &xi) in p.iter_mut().zip(r) {
                *pi = (xi - max).exp();
                z = z + *pi;
            }
            p.iter_mut().for_each(|pi| *pi = *pi / z);
            total = total + (z.ln() + max - r[label]);
        }
        let loss = total / T::from_usize(b).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.elementwise(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        Ok(self.elementwise(a, b, Op::Div(a, b), |x, y| x / y))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| a * c).collect());
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::dim("dot", va.shape(), vb.shape()));
        }
        let s = dot_slices(va.data(), vb.data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Inner product with a constant vector that receives no gradient.
    pub fn dot_const(&mut self, a: Var, c: Arc<[T]>) -> Result<Var> {
        let va = self.value(a);
        if va.len() != c.len() {
            return Err(Error::dim("dot_const", va.shape(), &[c.len()]));
        }
        let s = dot_slices(va.data(), &c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(a, c), rg))
    }

    /// Elementwise product with a constant of equal length.
    pub fn mul_const(&mut self, a: Var, c: Arc<[T]>) -> Result<Var> {
        let va = self.value(a);
        if va.len() != c.len() {
            return Err(Error::dim("mul_const", va.shape(), &[c.len()]));
        }
        let data = va.data().iter().zip(c.iter()).map(|(&x, &m)| x * m).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    pub fn l2_norm(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let n = dot_slices(v, v).sqrt();
        let rg = self.rg(x);
        self.push(Tensor::scalar(n), Op::L2Norm(x), rg)
    }

    /// Concatenates the flattened values of `parts` into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut data = Vec::with_capacity(total);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg)
    }

    /// Accumulates d(loss)/d(leaf) for every reachable leaf that requires
    /// gradients. A second call without [`Graph::zero_grad`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without zero_grad".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        // keep leaf gradients only
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *grad = None;
            }
        }
        Ok(())
    }

    /// Clears gradients so [`Graph::backward`] may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let rg = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, val(*b), true, ga, true);
                }
                if rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, val(*a), true, g, false, gb, true);
                }
            }
            Op::AddBias(x, b) => {
                if rg(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if rg(*b) {
                    let channels = nodes[b.0].value.len();
                    let sx = nodes[x.0].value.shape();
                    let inner: usize = sx[2..].iter().product();
                    let gb = slot(grads, *b, channels);
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        let s: T = chunk.iter().copied().sum();
                        gb[j % channels] = gb[j % channels] + s;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let geo = ConvGeometry::new(
                    nodes[input.0].value.shape(),
                    nodes[kernel.0].value.shape(),
                    *stride,
                    *padding,
                )
                .expect("validated at construction");
                let x = val(*input);
                let w = val(*kernel);
                let mut col = vec![T::zero(); geo.col_rows() * geo.out_hw()];
                if rg(*kernel) {
                    let gw = slot(grads, *kernel, w.len());
                    for b in 0..geo.batch {
                        geo.im2col(&x[b * geo.in_image()..(b + 1) * geo.in_image()], &mut col);
                        let gb = &g[b * geo.out_image()..(b + 1) * geo.out_image()];
                        gemm(geo.filters, geo.out_hw(), geo.col_rows(), gb, false, &col, true, gw, true);
                    }
                }
                if rg(*input) {
                    let gx = slot(grads, *input, x.len());
                    for b in 0..geo.batch {
                        let gb = &g[b * geo.out_image()..(b + 1) * geo.out_image()];
                        gemm(geo.col_rows(), geo.filters, geo.out_hw(), w, true, gb, false, &mut col, false);
                        geo.col2im(&col, &mut gx[b * geo.in_image()..(b + 1) * geo.in_image()]);
                    }
                }
            }
            Op::Relu(x) => {
                let out = nodes[i].value.data();
                let gx = slot(grads, *x, g.len());
                for ((d, &gi), &o) in gx.iter_mut().zip(g).zip(out) {
                    if o > T::zero() {
                        *d = *d + gi;
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                let n = nodes[input.0].value.len();
                let gx = slot(grads, *input, n);
                for (&src, &gi) in argmax.iter().zip(g) {
                    gx[src] = gx[src] + gi;
                }
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / T::from_usize(b).unwrap();
                let gl = slot(grads, *logits, probs.len());
                for (row, &label) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == label { T::one() } else { T::zero() };
                        let idx = row * c + j;
                        gl[idx] = gl[idx] + (probs[idx] - onehot) * scale;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if rg(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let vb = val(*b);
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d = *d + gi * y;
                    }
                }
                if rg(*b) {
                    let va = val(*a);
                    let gb = slot(grads, *b, g.len());
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d = *d + gi * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d = *d + gi / y;
                    }
                }
                if rg(*b) {
                    let gb = slot(grads, *b, g.len());
                    for (((d, &gi), &x), &y) in gb.iter_mut().zip(g).zip(va).zip(vb) {
                        *d = *d - gi * x / (y * y);
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                for (d, &gi) in gx.iter_mut().zip(g) {
                    *d = *d + gi * *c;
                }
            }
            Op::Sum(x) => {
                let n = nodes[x.0].value.len();
                slot(grads, *x, n).iter_mut().for_each(|d| *d = *d + g[0]);
            }
            Op::Dot(a, b) => {
                if rg(*a) {
                    let vb = val(*b);
                    axpy(slot(grads, *a, vb.len()), g[0], vb);
                }
                if rg(*b) {
                    let va = val(*a);
                    axpy(slot(grads, *b, va.len()), g[0], va);
                }
            }
            Op::DotConst(a, c) => axpy(slot(grads, *a, c.len()), g[0], c),
            Op::MulConst(a, c) => {
                let ga = slot(grads, *a, c.len());
                for ((d, &gi), &m) in ga.iter_mut().zip(g).zip(c.iter()) {
                    *d = *d + gi * m;
                }
            }
            Op::L2Norm(x) => {
                let norm = nodes[i].value.data()[0];
                if norm > T::zero() {
                    let vx = val(*x);
                    axpy(slot(grads, *x, vx.len()), g[0] / norm, vx);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if rg(*p) {
                        add_into(slot(grads, *p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
        }
    }
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn axpy<T: Element>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &xi) in dst.iter_mut().zip(x) {
        *d = *d + a * xi;
    }
}

pub(crate) fn dot_slices<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Shape bookkeeping for one conv2d call.
#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    filters: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (h, w, k) = (input[2], input[3], kernel[2]);
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::dim("conv2d", input, kernel));
        }
        Ok(ConvGeometry {
            batch: input[0],
            channels: input[1],
            h,
            w,
            filters: kernel[0],
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn in_image(&self) -> usize {
        self.channels * self.h * self.w
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    fn out_image(&self) -> usize {
        self.filters * self.out_hw()
    }

    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    /// Source pixel for column row `(ki, kj)` at output `(oh, ow)`, if inside.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oh: usize, ow: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride + ki).checked_sub(self.pad)?;
        let x = (ow * self.stride + kj).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col<T: Element>(&self, image: &[T], col: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            dst[oh * self.out_w + ow] = match self.source(ki, kj, oh, ow) {
                                Some((y, x)) => plane[y * self.w + x],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, col: &[T], image: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &col[row * hw..(row + 1) * hw];
                    for oh in 0..self.out_h {
                        for ow in 0..self.out_w {
                            if let Some((y, x)) = self.source(ki, kj, oh, ow) {
                                let d = &mut plane[y * self.w + x];
                                *d = *d + src[oh * self.out_w + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}
