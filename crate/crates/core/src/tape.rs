//! Define-by-run reverse-mode differentiation over rank-4 tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends
//! a node holding its output value and the handles of its inputs, so nodes
//! are always in topological order and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    ScaleBy {
        x: Var,
        w: Var,
    },
    SliceChannel {
        x: Var,
        channel: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Sum {
        x: Var,
    },
    WeightedSqError {
        pred: Var,
        target: Tensor<T>,
        weights: Vec<T>,
        scale: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    kink_signature: u64,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            kink_signature: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fingerprint of the sign pattern seen by every leaky ReLU so far.
    ///
    /// Two evaluations with equal signatures traversed the same linear piece
    /// of every piecewise-linear activation.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
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

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Same-padded, stride-1 2-D convolution over the (joint, coordinate)
    /// plane. `weight` has dims (out, in, k, k), `bias` has dims (1, out, 1, 1).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xd = self.dims(input);
        let wd = self.dims(weight);
        let bd = self.dims(bias);
        let [co, ci, kh, kw] = wd.0;
        if ci != xd.channel() {
            return Err(Error::shape("conv2d", xd, wd));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Contract(format!(
                "conv2d kernel must be square with odd size, got {wd}"
            )));
        }
        if bd != Dims::new(1, co, 1, 1) {
            return Err(Error::shape("conv2d bias", bd, Dims::new(1, co, 1, 1)));
        }
        let out = conv_forward(self.value(input), self.value(weight), self.value(bias));
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let src = self.value(x);
        let mut h = self.kink_signature;
        let mut out = src.clone();
        for v in out.data_mut() {
            let pos = *v > T::zero();
            h = (h ^ pos as u64).wrapping_mul(FNV_PRIME);
            if !pos {
                *v = *v * slope;
            }
        }
        self.kink_signature = h;
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(Error::shape(name, ta.dims(), tb.dims()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(ta.dims(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Left-to-right sum of several equally shaped tensors.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    /// Multiplies each batch item of `x` by the matching entry of `w`,
    /// which has dims (batch, 1, 1, 1).
    pub fn scale_by(&mut self, x: Var, w: Var) -> Result<Var> {
        let xd = self.dims(x);
        let wd = self.dims(w);
        if wd != Dims::new(xd.batch(), 1, 1, 1) {
            return Err(Error::shape("scale_by", xd, wd));
        }
        let n = xd.item_len();
        let mut out = self.value(x).clone();
        let ws = self.value(w).data().to_vec();
        for (chunk, &s) in out.data_mut().chunks_mut(n).zip(&ws) {
            chunk.iter_mut().for_each(|v| *v = *v * s);
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::ScaleBy { x, w }, rg))
    }

    /// Selects one channel, keeping it as a channel axis of extent 1.
    pub fn slice_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let xd = self.dims(x);
        if channel >= xd.channel() {
            return Err(Error::Contract(format!(
                "channel {channel} out of range for {xd}"
            )));
        }
        let plane = xd.plane();
        let src = self.value(x);
        let mut data = Vec::with_capacity(xd.batch() * plane);
        for b in 0..xd.batch() {
            let start = src.offset([b, channel, 0, 0]);
            data.extend_from_slice(&src.data()[start..start + plane]);
        }
        let out = Tensor::from_vec(xd.with_channel(1), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceChannel { x, channel }, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let d0 = self.dims(first);
        let mut channels = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.with_channel(0) != d0.with_channel(0) {
                return Err(Error::shape("concat_channels", d0, d));
            }
            channels += d.channel();
        }
        let dims = d0.with_channel(channels);
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch() {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(b));
            }
        }
        let out = Tensor::from_vec(dims, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Fully connected layer on each flattened batch item. `weight` has
    /// dims (out, in, 1, 1), `bias` (1, out, 1, 1); output is (batch, out, 1, 1).
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xd = self.dims(x);
        let wd = self.dims(weight);
        let (n_out, n_in) = (wd.0[0], wd.0[1]);
        if wd.plane() != 1 || n_in != xd.item_len() {
            return Err(Error::shape("linear", xd, wd));
        }
        if self.dims(bias) != Dims::new(1, n_out, 1, 1) {
            return Err(Error::shape("linear bias", self.dims(bias), wd));
        }
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let mut out = Tensor::zeros(Dims::new(xd.batch(), n_out, 1, 1));
        for b in 0..xd.batch() {
            let xi = tx.item(b);
            for o in 0..n_out {
                let row = &tw.data()[o * n_in..(o + 1) * n_in];
                out.data_mut()[b * n_out + o] = tb.data()[o] + dot(row, xi);
            }
        }
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Linear { x, weight, bias }, rg))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// `scale * Σ_b Σ_c weights[c] Σ_{j} ‖pred[b,c,j,:] − target[b,c,j,:]‖²`.
    ///
    /// The channel axis indexes prediction steps; `weights` has one entry
    /// per channel.
    pub fn weighted_sq_error(
        &mut self,
        pred: Var,
        target: Tensor<T>,
        weights: Vec<T>,
        scale: T,
    ) -> Result<Var> {
        let pd = self.dims(pred);
        if pd != target.dims() {
            return Err(Error::shape("weighted_sq_error", pd, target.dims()));
        }
        if weights.len() != pd.channel() {
            return Err(Error::Contract(format!(
                "{} step weights for {} prediction steps",
                weights.len(),
                pd.channel()
            )));
        }
        let p = self.value(pred);
        let plane = pd.plane();
        let mut total = T::zero();
        for (i, (ps, ts)) in p
            .data()
            .chunks(plane)
            .zip(target.data().chunks(plane))
            .enumerate()
        {
            let w = weights[i % pd.channel()];
            let s: T = ps.iter().zip(ts).map(|(&a, &b)| (a - b) * (a - b)).sum();
            total = total + w * s;
        }
        let out = Tensor::scalar(total * scale);
        let rg = self.rg(pred);
        Ok(self.push(
            out,
            Op::WeightedSqError {
                pred,
                target,
                weights,
                scale,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ld = self.dims(loss);
        if !ld.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {ld}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let (gi, gw, gb) =
                    conv_backward(self.value(*input), self.value(*weight), g, self.rg(*input));
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, gi);
                }
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::LeakyRelu { x, slope } => {
                let src = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(src.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * *slope })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.dims(), data).unwrap());
            }
            Op::Sigmoid { x } => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.dims(), data).unwrap());
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, tb, |x, y| x * y);
                let gb = zip_map(g, ta, |x, y| x * y);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, g.map(|v| v * *factor));
            }
            Op::ScaleBy { x, w } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let n = tx.dims().item_len();
                let mut gx = g.clone();
                let mut gw = Tensor::zeros(tw.dims());
                for b in 0..tx.dims().batch() {
                    let s = tw.data()[b];
                    let gs = &mut gx.data_mut()[b * n..(b + 1) * n];
                    gw.data_mut()[b] = dot(gs, tx.item(b));
                    gs.iter_mut().for_each(|v| *v = *v * s);
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
            }
            Op::SliceChannel { x, channel } => {
                let xd = self.dims(*x);
                let plane = xd.plane();
                let mut gx = Tensor::zeros(xd);
                for b in 0..xd.batch() {
                    let start = gx.offset([b, *channel, 0, 0]);
                    gx.data_mut()[start..start + plane]
                        .copy_from_slice(&g.data()[b * plane..(b + 1) * plane]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { parts } => {
                let total = g.dims().item_len();
                let mut start = 0;
                for &p in parts {
                    let pd = self.dims(p);
                    let n = pd.item_len();
                    let mut data = Vec::with_capacity(pd.len());
                    for b in 0..pd.batch() {
                        let base = b * total + start;
                        data.extend_from_slice(&g.data()[base..base + n]);
                    }
                    self.accumulate(grads, p, Tensor::from_vec(pd, data).unwrap());
                    start += n;
                }
            }
            Op::Linear { x, weight, bias } => {
                let (tx, tw) = (self.value(*x), self.value(*weight));
                let wd = tw.dims();
                let (n_out, n_in) = (wd.0[0], wd.0[1]);
                let batch = tx.dims().batch();
                let mut gw = Tensor::zeros(wd);
                let mut gb = Tensor::zeros(Dims::new(1, n_out, 1, 1));
                let mut gx = Tensor::zeros(tx.dims());
                for b in 0..batch {
                    let xi = tx.item(b);
                    for o in 0..n_out {
                        let go = g.data()[b * n_out + o];
                        gb.data_mut()[o] = gb.data()[o] + go;
                        axpy(&mut gw.data_mut()[o * n_in..(o + 1) * n_in], go, xi);
                        axpy(
                            &mut gx.data_mut()[b * n_in..(b + 1) * n_in],
                            go,
                            &tw.data()[o * n_in..(o + 1) * n_in],
                        );
                    }
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.dims(*x), gv));
            }
            Op::WeightedSqError {
                pred,
                target,
                weights,
                scale,
            } => {
                let p = self.value(*pred);
                let pd = p.dims();
                let plane = pd.plane();
                let two = T::lit(2.0) * *scale * g.data()[0];
                let mut gp = Tensor::zeros(pd);
                for (i, ((gs, ps), ts)) in gp
                    .data_mut()
                    .chunks_mut(plane)
                    .zip(p.data().chunks(plane))
                    .zip(target.data().chunks(plane))
                    .enumerate()
                {
                    let w = weights[i % pd.channel()] * two;
                    for ((gv, &a), &b) in gs.iter_mut().zip(ps).zip(ts) {
                        *gv = w * (a - b);
                    }
                }
                self.accumulate(grads, *pred, gp);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.dims(), data).unwrap()
}

/// Dot product with eight independent partial sums so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    s + tail
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Unfolds the input into a (in·k·k) × (batch·plane) patch matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let [batch, ci, h, w] = x.dims().0;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let n = batch * plane;
    let mut cols = vec![T::zero(); ci * k * k * n];
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let src = x.item(b);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dst[b * plane + y * w + xx] =
                                src[(c * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn conv_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let [batch, _, h, w] = x.dims().0;
    let [co, ci, k, _] = weight.dims().0;
    let plane = h * w;
    let n = batch * plane;
    let r = ci * k * k;
    let cols = im2col(x, k);
    let mut out = Tensor::zeros(Dims::new(batch, co, h, w));
    let mut row = vec![T::zero(); n];
    for o in 0..co {
        row.iter_mut().for_each(|v| *v = bias.data()[o]);
        let wrow = &weight.data()[o * r..(o + 1) * r];
        for (ri, &wv) in wrow.iter().enumerate() {
            axpy(&mut row, wv, &cols[ri * n..(ri + 1) * n]);
        }
        for b in 0..batch {
            let start = (b * co + o) * plane;
            out.data_mut()[start..start + plane].copy_from_slice(&row[b * plane..(b + 1) * plane]);
        }
    }
    out
}

type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let [batch, _, h, w] = x.dims().0;
    let [co, ci, k, _] = weight.dims().0;
    let plane = h * w;
    let n = batch * plane;
    let r = ci * k * k;
    let cols = im2col(x, k);

    // Output gradient regrouped as (out, batch·plane).
    let mut gm = vec![T::zero(); co * n];
    for b in 0..batch {
        for o in 0..co {
            let src = (b * co + o) * plane;
            gm[o * n + b * plane..o * n + (b + 1) * plane]
                .copy_from_slice(&g.data()[src..src + plane]);
        }
    }

    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros(Dims::new(1, co, 1, 1));
    for o in 0..co {
        let grow = &gm[o * n..(o + 1) * n];
        gb.data_mut()[o] = grow.iter().copied().sum();
        for ri in 0..r {
            gw.data_mut()[o * r + ri] = dot(grow, &cols[ri * n..(ri + 1) * n]);
        }
    }

    let gi = need_input.then(|| {
        let mut gcols = vec![T::zero(); r * n];
        for o in 0..co {
            let grow = &gm[o * n..(o + 1) * n];
            let wrow = &weight.data()[o * r..(o + 1) * r];
            for (ri, &wv) in wrow.iter().enumerate() {
                axpy(&mut gcols[ri * n..(ri + 1) * n], wv, grow);
            }
        }
        col2im(&gcols, x.dims(), k)
    });
    (gi, gw, gb)
}

fn col2im<T: Scalar>(gcols: &[T], dims: Dims, k: usize) -> Tensor<T> {
    let [batch, ci, h, w] = dims.0;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let n = batch * plane;
    let mut gx = Tensor::zeros(dims);
    let item = dims.item_len();
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &gcols[row * n..(row + 1) * n];
                for b in 0..batch {
                    let dst = &mut gx.data_mut()[b * item..(b + 1) * item];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let d = &mut dst[(c * h + sy as usize) * w + sx as usize];
                            *d = *d + src[b * plane + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    gx
}
