//! Reverse-mode differentiation over a recorded list of operations.
//!
//! Every op appends a node holding its output value; `backward` walks the
//! nodes in reverse order and accumulates gradients into the inputs that
//! require them. Only the op set the codec networks need is supported.

use crate::error::{Error, Result};
use crate::nn::conv::{self, Geometry};
use crate::nn::scalar::{matmul, MatRef};
use crate::nn::{ParamStore, Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Geometry,
        out_c: usize,
        cols: Option<Vec<T>>,
    },
    Deconv2d {
        input: Var,
        weight: Var,
        bias: Var,
        // Geometry of the adjoint convolution: output image -> input map.
        geom: Geometry,
        in_c: usize,
        input_cm: Option<Vec<T>>,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    Sigmoid {
        x: Var,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    Offset {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    EntropyFriendly {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// The leaves a [`ParamStore`] was bound to, in parameter order.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: crate::nn::ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records every parameter of `store` as a leaf. Frozen parameters become
    /// constants, so no gradient is ever computed for them.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Bindings {
        let vars = store
            .iter()
            .map(|p| {
                let mut value = p.value.clone();
                value.grad = None;
                self.leaf(value, p.trainable)
            })
            .collect();
        Bindings { vars }
    }

    /// Records every parameter as a constant, regardless of its trainable flag.
    pub fn bind_frozen(&mut self, store: &ParamStore<T>) -> Bindings {
        let vars = store
            .iter()
            .map(|p| {
                let mut value = p.value.clone();
                value.grad = None;
                self.leaf(value, false)
            })
            .collect();
        Bindings { vars }
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("conv2d")?;
        let (out_c, in_c, kh, kw) = self.value(weight).dims4("conv2d weight")?;
        if in_c != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, weight expects {in_c}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if self.value(bias).shape() != [out_c] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{out_c}]", self.value(bias).shape()),
            ));
        }
        let (Some(out_h), Some(out_w)) = (
            conv::conv_out_extent(h, kh, stride, padding),
            conv::conv_out_extent(w, kw, stride, padding),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("{h}x{w} input too small for kernel {kh} with padding {padding} / stride {stride}"),
            ));
        };
        let geom = Geometry {
            batch: n,
            channels: c,
            img_h: h,
            img_w: w,
            kernel: kh,
            stride,
            pad: padding,
            out_h,
            out_w,
        };
        let cols = conv::im2col(self.value(input).data(), &geom);
        let ohw = out_h * out_w;
        let mut out_cm = vec![T::zero(); out_c * n * ohw];
        matmul(
            MatRef::new(self.value(weight).data(), out_c, geom.col_rows()),
            MatRef::new(&cols, geom.col_rows(), geom.col_cols()),
            &mut out_cm,
            false,
        );
        let mut out = conv::cm_to_nchw(&out_cm, n, out_c, ohw);
        add_channel_bias(&mut out, self.value(bias).data(), n, out_c, ohw);
        let requires_grad = self.rg(input) || self.rg(weight) || self.rg(bias);
        let cols = self.rg(weight).then_some(cols);
        let value = Tensor::new(vec![n, out_c, out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                out_c,
                cols,
            },
            requires_grad,
        ))
    }

    /// Transposed convolution; `weight` is laid out `InC x OutC x K x K`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("deconv2d")?;
        let (in_c, out_c, kh, kw) = self.value(weight).dims4("deconv2d weight")?;
        if in_c != c {
            return Err(Error::shape(
                "deconv2d",
                format!("input has {c} channels, weight expects {in_c}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("deconv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if self.value(bias).shape() != [out_c] {
            return Err(Error::shape(
                "deconv2d",
                format!("bias shape {:?}, expected [{out_c}]", self.value(bias).shape()),
            ));
        }
        if output_padding >= stride {
            return Err(Error::shape(
                "deconv2d",
                format!("output_padding {output_padding} must be smaller than stride {stride}"),
            ));
        }
        let (Some(out_h), Some(out_w)) = (
            conv::deconv_out_extent(h, kh, stride, padding, output_padding),
            conv::deconv_out_extent(w, kw, stride, padding, output_padding),
        ) else {
            return Err(Error::shape("deconv2d", "padding exceeds kernel extent"));
        };
        let geom = Geometry {
            batch: n,
            channels: out_c,
            img_h: out_h,
            img_w: out_w,
            kernel: kh,
            stride,
            pad: padding,
            out_h: h,
            out_w: w,
        };
        let input_cm = conv::nchw_to_cm(self.value(input).data(), n, c, h * w);
        let mut cols = vec![T::zero(); geom.col_rows() * geom.col_cols()];
        matmul(
            MatRef::new(self.value(weight).data(), in_c, geom.col_rows()).t(),
            MatRef::new(&input_cm, in_c, n * h * w),
            &mut cols,
            false,
        );
        let mut out = vec![T::zero(); n * out_c * out_h * out_w];
        conv::col2im(&cols, &geom, &mut out);
        add_channel_bias(&mut out, self.value(bias).data(), n, out_c, out_h * out_w);
        let requires_grad = self.rg(input) || self.rg(weight) || self.rg(bias);
        let input_cm = self.rg(weight).then_some(input_cm);
        let value = Tensor::new(vec![n, out_c, out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::Deconv2d {
                input,
                weight,
                bias,
                geom,
                in_c,
                input_cm,
            },
            requires_grad,
        ))
    }

    /// Per-channel parametric ReLU over an `N x C x ...` tensor.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let xs = self.value(x);
        let (n, c, inner) = channel_layout(xs.shape(), "prelu")?;
        let a = self.value(alpha);
        if a.shape() != [c] {
            return Err(Error::shape(
                "prelu",
                format!("alpha shape {:?}, expected [{c}]", a.shape()),
            ));
        }
        let mut out = xs.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let slope = a.data()[ch];
                for v in &mut out[(b * c + ch) * inner..][..inner] {
                    if *v < T::zero() {
                        *v *= slope;
                    }
                }
            }
        }
        let value = Tensor::new(xs.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(alpha);
        Ok(self.push(value, Op::Prelu { x, alpha }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let out = xs.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xs.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// Scales every sample (leading axis) to unit L2 norm: `x / max(|x|, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let xs = self.value(x);
        let Some((&n, _)) = xs.shape().split_first() else {
            return Err(Error::shape("l2_normalize", "rank-0 tensor"));
        };
        let inner = xs.len().checked_div(n).unwrap_or(0);
        let mut out = xs.data().to_vec();
        let mut norms = Vec::with_capacity(n);
        for sample in out.chunks_mut(inner.max(1)).take(n) {
            let norm = sample.iter().map(|&v| v * v).sum::<T>().sqrt();
            let denom = if norm > eps { norm } else { eps };
            sample.iter_mut().for_each(|v| *v = *v / denom);
            norms.push(norm);
        }
        let value = Tensor::new(xs.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::L2Normalize { x, norms, eps }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let xs = self.value(x);
        let out = xs.data().iter().map(|&v| v * k).collect();
        let value = Tensor::new(xs.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, k }, rg)
    }

    /// `x + offset` where `offset` is a constant: the gradient passes through unchanged.
    pub fn offset(&mut self, x: Var, offset: &[T]) -> Result<Var> {
        let xs = self.value(x);
        if xs.len() != offset.len() {
            return Err(Error::shape(
                "offset",
                format!("{} elements vs offset of {}", xs.len(), offset.len()),
            ));
        }
        let out = xs.data().iter().zip(offset).map(|(&v, &o)| v + o).collect();
        let value = Tensor::new(xs.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Offset { x }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let hw = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&da[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&db[s * cb * hw..(s + 1) * cb * hw]);
        }
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatChannels { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        if ta.is_empty() {
            return Err(Error::shape("mse", "empty tensors"));
        }
        let ss: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(ss / T::from_f64(ta.len() as f64));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mse { a, b }, rg))
    }

    /// Mean over the batch of the zero-padded adjacent-difference penalty of
    /// each sample's code (all non-batch elements in order).
    pub fn entropy_friendly(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let Some((&n, _)) = xs.shape().split_first() else {
            return Err(Error::shape("entropy_friendly", "rank-0 tensor"));
        };
        if n == 0 || xs.is_empty() {
            return Err(Error::InvalidArgument("entropy-friendly loss of an empty code".into()));
        }
        let len = xs.len() / n;
        let total: T = xs
            .data()
            .chunks(len)
            .map(crate::models::losses::padded_adjacent_penalty)
            .sum();
        let value = Tensor::scalar(total / T::from_f64(n as f64));
        let rg = self.rg(x);
        Ok(self.push(value, Op::EntropyFriendly { x }, rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), out)
    }

    /// Backpropagates from a scalar `loss`. Gradients are kept for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.numel_is_one() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    #[allow(clippy::needless_range_loop)]
    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                out_c,
                cols,
            } => {
                let (n, out_c) = (geom.batch, *out_c);
                let ohw = geom.out_h * geom.out_w;
                let g_cm = conv::nchw_to_cm(g, n, out_c, ohw);
                self.accumulate(grads, *bias, |gb| channel_sums(g, n, out_c, ohw, gb));
                if let Some(cols) = cols {
                    self.accumulate(grads, *weight, |gw| {
                        matmul(
                            MatRef::new(&g_cm, out_c, geom.col_cols()),
                            MatRef::new(cols, geom.col_rows(), geom.col_cols()).t(),
                            gw,
                            true,
                        )
                    });
                }
                if self.rg(*input) {
                    let mut dcols = vec![T::zero(); geom.col_rows() * geom.col_cols()];
                    matmul(
                        MatRef::new(self.value(*weight).data(), out_c, geom.col_rows()).t(),
                        MatRef::new(&g_cm, out_c, geom.col_cols()),
                        &mut dcols,
                        false,
                    );
                    self.accumulate(grads, *input, |gx| conv::col2im(&dcols, geom, gx));
                }
            }
            Op::Deconv2d {
                input,
                weight,
                bias,
                geom,
                in_c,
                input_cm,
            } => {
                let (n, out_c, in_c) = (geom.batch, geom.channels, *in_c);
                let in_hw = geom.out_h * geom.out_w;
                self.accumulate(grads, *bias, |gb| {
                    channel_sums(g, n, out_c, geom.img_h * geom.img_w, gb)
                });
                let dcols = conv::im2col(g, geom);
                if let Some(x_cm) = input_cm {
                    self.accumulate(grads, *weight, |gw| {
                        matmul(
                            MatRef::new(x_cm, in_c, n * in_hw),
                            MatRef::new(&dcols, geom.col_rows(), geom.col_cols()).t(),
                            gw,
                            true,
                        )
                    });
                }
                if self.rg(*input) {
                    let mut dx_cm = vec![T::zero(); in_c * n * in_hw];
                    matmul(
                        MatRef::new(self.value(*weight).data(), in_c, geom.col_rows()),
                        MatRef::new(&dcols, geom.col_rows(), geom.col_cols()),
                        &mut dx_cm,
                        false,
                    );
                    let dx = conv::cm_to_nchw(&dx_cm, n, in_c, in_hw);
                    self.accumulate(grads, *input, |gx| add_into(gx, &dx));
                }
            }
            Op::Prelu { x, alpha } => {
                let xs = self.value(*x);
                let (n, c, inner) = channel_layout(xs.shape(), "prelu").expect("checked in forward");
                let slopes = self.value(*alpha).data();
                self.accumulate(grads, *x, |gx| {
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * inner;
                            for i in off..off + inner {
                                gx[i] += if xs.data()[i] < T::zero() {
                                    slopes[ch] * g[i]
                                } else {
                                    g[i]
                                };
                            }
                        }
                    }
                });
                self.accumulate(grads, *alpha, |ga| {
                    for b in 0..n {
                        for (ch, slot) in ga.iter_mut().enumerate() {
                            let off = (b * c + ch) * inner;
                            for i in off..off + inner {
                                if xs.data()[i] < T::zero() {
                                    *slot += g[i] * xs.data()[i];
                                }
                            }
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((d, &gy), &yy) in gx.iter_mut().zip(g).zip(y) {
                        *d += gy * yy * (T::one() - yy);
                    }
                });
            }
            Op::L2Normalize { x, norms, eps } => {
                let y = node.value.data();
                let n = norms.len();
                let inner = y.len().checked_div(n).unwrap_or(0);
                self.accumulate(grads, *x, |gx| {
                    for (s, &norm) in norms.iter().enumerate() {
                        let r = s * inner..(s + 1) * inner;
                        let (ys, gs, dx) = (&y[r.clone()], &g[r.clone()], &mut gx[r]);
                        if norm > *eps {
                            let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                            for ((d, &yy), &gg) in dx.iter_mut().zip(ys).zip(gs) {
                                *d += (gg - yy * dot) / norm;
                            }
                        } else {
                            for (d, &gg) in dx.iter_mut().zip(gs) {
                                *d += gg / *eps;
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gg), &o) in ga.iter_mut().zip(g).zip(vb) {
                        *d += gg * o;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, &gg), &o) in gb.iter_mut().zip(g).zip(va) {
                        *d += gg * o;
                    }
                });
            }
            Op::Scale { x, k } => {
                self.accumulate(grads, *x, |gx| {
                    for (d, &gg) in gx.iter_mut().zip(g) {
                        *d += gg * *k;
                    }
                });
            }
            Op::Offset { x } => self.accumulate(grads, *x, |gx| add_into(gx, g)),
            Op::ConcatChannels { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4("concat").expect("checked");
                let cb = self.value(*b).shape()[1];
                let hw = h * w;
                self.accumulate(grads, *a, |ga| {
                    for s in 0..n {
                        add_into(
                            &mut ga[s * ca * hw..(s + 1) * ca * hw],
                            &g[s * (ca + cb) * hw..][..ca * hw],
                        );
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for s in 0..n {
                        add_into(
                            &mut gb[s * cb * hw..(s + 1) * cb * hw],
                            &g[(s * (ca + cb) + ca) * hw..][..cb * hw],
                        );
                    }
                });
            }
            Op::Sum { x } => {
                let gg = g[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|d| *d += gg));
            }
            Op::Mse { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] * T::from_f64(2.0 / va.len() as f64);
                self.accumulate(grads, *a, |ga| {
                    for ((d, &x), &y) in ga.iter_mut().zip(va).zip(vb) {
                        *d += k * (x - y);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, &x), &y) in gb.iter_mut().zip(va).zip(vb) {
                        *d -= k * (x - y);
                    }
                });
            }
            Op::EntropyFriendly { x } => {
                let xs = self.value(*x);
                let n = xs.shape()[0];
                let len = xs.len() / n;
                // d/dx_j of sum (xp[i]-xp[i-1])^2 / (len+1) with zero padding.
                let k = g[0] * T::from_f64(2.0 / ((len + 1) as f64 * n as f64));
                self.accumulate(grads, *x, |gx| {
                    for (code, d) in xs.data().chunks(len).zip(gx.chunks_mut(len)) {
                        for j in 0..len {
                            let prev = if j == 0 { T::zero() } else { code[j - 1] };
                            let next = if j + 1 == len { T::zero() } else { code[j + 1] };
                            d[j] += k * (code[j] + code[j] - prev - next);
                        }
                    }
                });
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn channel_layout(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("expected at least N x C, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, c: usize, hw: usize) {
    for s in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(c) {
            out[(s * c + ch) * hw..][..hw].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, hw: usize, out: &mut [T]) {
    for s in 0..n {
        for (ch, slot) in out.iter_mut().enumerate().take(c) {
            *slot += g[(s * c + ch) * hw..][..hw].iter().copied().sum();
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
