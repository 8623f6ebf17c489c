//! Layers with explicit forward caches and backward passes.
//!
//! Activations are `[batch × channels × length]` for temporal layers and
//! `[batch × features]` for dense layers. Every forward returns the cache its
//! backward needs, so one layer can run several forwards (e.g. anchor,
//! positive and negative) before the gradients are accumulated.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::real::Real;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// LeCun-normal initialization, `N(0, 1/fan_in)`, the pairing SELU expects.
fn lecun_normal<R: Real, G: Rng + ?Sized>(fan_in: usize, rng: &mut G) -> R {
    let z: f64 = StandardNormal.sample(rng);
    R::c(z / (fan_in as f64).sqrt())
}

/// One trainable tensor handed to optimizers and serializers.
pub struct ParamSlot<'a, R> {
    pub name: String,
    pub value: &'a mut [R],
    pub grad: &'a mut [R],
    pub shape: Vec<usize>,
    /// Weights take the L2 penalty; biases do not.
    pub is_weight: bool,
}

#[derive(Debug, Clone)]
pub struct Conv1d<R: Real> {
    /// `[out × in × kernel]`
    pub weight: Array3<R>,
    pub bias: Array1<R>,
    pub grad_weight: Array3<R>,
    pub grad_bias: Array1<R>,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache<R: Real> {
    cols: Array2<R>,
    batch: usize,
    len: usize,
}

impl<R: Real> Conv1d<R> {
    pub fn new<G: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut G) -> Self {
        let fan_in = in_ch * kernel;
        let weight = Array3::from_shape_simple_fn((out_ch, in_ch, kernel), || {
            lecun_normal(fan_in, rng)
        });
        Self {
            grad_weight: Array3::zeros(weight.raw_dim()),
            weight,
            bias: Array1::zeros(out_ch),
            grad_bias: Array1::zeros(out_ch),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn pad_left(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    fn weight_matrix(&self) -> ArrayView2<'_, R> {
        let (o, i, k) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * k))
            .expect("contiguous conv weight")
    }

    /// Same-padded, stride-1 convolution.
    pub fn forward(&self, x: ArrayView3<R>) -> (Array3<R>, Conv1dCache<R>) {
        let (batch, in_ch, len) = x.dim();
        assert_eq!(in_ch, self.in_channels(), "conv input channels");
        let k = self.kernel();
        let pad = self.pad_left();
        let mut cols = Array2::<R>::zeros((in_ch * k, batch * len));
        for b in 0..batch {
            for c in 0..in_ch {
                let xrow = x.slice(s![b, c, ..]);
                for j in 0..k {
                    // output t reads input t + j - pad
                    let t_lo = pad.saturating_sub(j);
                    let t_hi = (len + pad).saturating_sub(j).min(len);
                    if t_lo >= t_hi {
                        continue;
                    }
                    let src = xrow.slice(s![t_lo + j - pad..t_hi + j - pad]);
                    cols.slice_mut(s![c * k + j, b * len + t_lo..b * len + t_hi])
                        .assign(&src);
                }
            }
        }
        let y2 = self.weight_matrix().dot(&cols);
        let out_ch = self.out_channels();
        let mut y = Array3::<R>::zeros((batch, out_ch, len));
        for b in 0..batch {
            let mut yb = y.index_axis_mut(Axis(0), b);
            yb.assign(&y2.slice(s![.., b * len..(b + 1) * len]));
            for (mut row, &bias) in yb.rows_mut().into_iter().zip(self.bias.iter()) {
                row.mapv_inplace(|v| v + bias);
            }
        }
        (y, Conv1dCache { cols, batch, len })
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        cache: &Conv1dCache<R>,
        dy: ArrayView3<R>,
        need_input_grad: bool,
        accumulate_params: bool,
    ) -> Option<Array3<R>> {
        let (batch, len) = (cache.batch, cache.len);
        let out_ch = self.out_channels();
        let mut dy2 = Array2::<R>::zeros((out_ch, batch * len));
        for b in 0..batch {
            dy2.slice_mut(s![.., b * len..(b + 1) * len])
                .assign(&dy.index_axis(Axis(0), b));
        }
        if accumulate_params {
            let gw = dy2.dot(&cache.cols.t());
            let (o, i, k) = self.weight.dim();
            let mut gw_view = self
                .grad_weight
                .view_mut()
                .into_shape_with_order((o, i * k))
                .expect("contiguous conv grad");
            gw_view += &gw;
            self.grad_bias += &dy2.sum_axis(Axis(1));
        }
        if !need_input_grad {
            return None;
        }
        let dcols = self.weight_matrix().t().dot(&dy2);
        let in_ch = self.in_channels();
        let k = self.kernel();
        let pad = self.pad_left();
        let mut dx = Array3::<R>::zeros((batch, in_ch, len));
        for b in 0..batch {
            for c in 0..in_ch {
                let mut dxrow = dx.slice_mut(s![b, c, ..]);
                for j in 0..k {
                    let t_lo = pad.saturating_sub(j);
                    let t_hi = (len + pad).saturating_sub(j).min(len);
                    if t_lo >= t_hi {
                        continue;
                    }
                    let src = dcols.slice(s![c * k + j, b * len + t_lo..b * len + t_hi]);
                    let mut dst = dxrow.slice_mut(s![t_lo + j - pad..t_hi + j - pad]);
                    dst += &src;
                }
            }
        }
        Some(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(R::zero());
        self.grad_bias.fill(R::zero());
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'a, R>)) {
        f(ParamSlot {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().expect("contiguous"),
            grad: self.grad_weight.as_slice_mut().expect("contiguous"),
            is_weight: true,
        });
        f(ParamSlot {
            name: format!("{prefix}.bias"),
            shape: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().expect("contiguous"),
            grad: self.grad_bias.as_slice_mut().expect("contiguous"),
            is_weight: false,
        });
    }
}

#[derive(Debug, Clone)]
pub struct Dense<R: Real> {
    /// `[in × out]`
    pub weight: Array2<R>,
    pub bias: Array1<R>,
    pub grad_weight: Array2<R>,
    pub grad_bias: Array1<R>,
}

impl<R: Real> Dense<R> {
    pub fn new<G: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut G) -> Self {
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || lecun_normal(inputs, rng));
        Self {
            grad_weight: Array2::zeros(weight.raw_dim()),
            weight,
            bias: Array1::zeros(outputs),
            grad_bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<R>) -> Array2<R> {
        x.dot(&self.weight) + &self.bias
    }

    /// `x` is the forward input.
    pub fn backward(
        &mut self,
        x: ArrayView2<R>,
        dy: ArrayView2<R>,
        need_input_grad: bool,
        accumulate_params: bool,
    ) -> Option<Array2<R>> {
        if accumulate_params {
            self.grad_weight += &x.t().dot(&dy);
            self.grad_bias += &dy.sum_axis(Axis(0));
        }
        need_input_grad.then(|| dy.dot(&self.weight.t()))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(R::zero());
        self.grad_bias.fill(R::zero());
    }

    pub fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'a, R>)) {
        f(ParamSlot {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().expect("contiguous"),
            grad: self.grad_weight.as_slice_mut().expect("contiguous"),
            is_weight: true,
        });
        f(ParamSlot {
            name: format!("{prefix}.bias"),
            shape: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().expect("contiguous"),
            grad: self.grad_bias.as_slice_mut().expect("contiguous"),
            is_weight: false,
        });
    }
}

/// SELU; returns the activation, which is also what the backward pass needs.
pub fn selu<R: Real, D: ndarray::Dimension>(x: ndarray::Array<R, D>) -> ndarray::Array<R, D> {
    let lambda = R::c(SELU_LAMBDA);
    let la = R::c(SELU_LAMBDA * SELU_ALPHA);
    x.mapv_into(|v| if v > R::zero() { lambda * v } else { la * (v.exp() - R::one()) })
}

/// Gradient through SELU given its output `y`.
pub fn selu_backward<R: Real, D: ndarray::Dimension>(
    y: &ndarray::Array<R, D>,
    mut dy: ndarray::Array<R, D>,
) -> ndarray::Array<R, D> {
    let lambda = R::c(SELU_LAMBDA);
    let la = R::c(SELU_LAMBDA * SELU_ALPHA);
    Zip::from(&mut dy).and(y).for_each(|d, &out| {
        *d *= if out > R::zero() { lambda } else { out + la };
    });
    dy
}

/// Max pooling over time with "same" padding, output length `ceil(L / stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Array3<usize>,
    in_len: usize,
}

impl MaxPool1d {
    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn pad_left(&self, len: usize) -> usize {
        let out = self.out_len(len);
        let total = ((out - 1) * self.stride + self.size).saturating_sub(len);
        total / 2
    }

    pub fn forward<R: Real>(&self, x: ArrayView3<R>) -> (Array3<R>, MaxPoolCache) {
        let (b, c, len) = x.dim();
        let out_len = self.out_len(len);
        let pad = self.pad_left(len);
        let mut y = Array3::<R>::zeros((b, c, out_len));
        let mut argmax = Array3::<usize>::zeros((b, c, out_len));
        for bi in 0..b {
            for ci in 0..c {
                let row = x.slice(s![bi, ci, ..]);
                for t in 0..out_len {
                    let start = (t * self.stride).saturating_sub(pad);
                    let end = (t * self.stride + self.size).saturating_sub(pad).min(len);
                    let mut best = start;
                    for i in start + 1..end {
                        if row[i] > row[best] {
                            best = i;
                        }
                    }
                    y[[bi, ci, t]] = row[best];
                    argmax[[bi, ci, t]] = best;
                }
            }
        }
        (y, MaxPoolCache { argmax, in_len: len })
    }

    pub fn backward<R: Real>(&self, cache: &MaxPoolCache, dy: ArrayView3<R>) -> Array3<R> {
        let (b, c, _) = dy.dim();
        let mut dx = Array3::<R>::zeros((b, c, cache.in_len));
        Zip::indexed(&cache.argmax).for_each(|(bi, ci, t), &i| {
            dx[[bi, ci, i]] += dy[[bi, ci, t]];
        });
        dx
    }
}

/// Global max pooling over time: `[B × C × L] → [B × C]`.
pub fn global_max_pool<R: Real>(x: ArrayView3<R>) -> (Array2<R>, Array2<usize>) {
    let (b, c, _) = x.dim();
    let mut y = Array2::<R>::zeros((b, c));
    let mut arg = Array2::<usize>::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let row = x.slice(s![bi, ci, ..]);
            let mut best = 0;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y[[bi, ci]] = row[best];
            arg[[bi, ci]] = best;
        }
    }
    (y, arg)
}

pub fn global_max_pool_backward<R: Real>(
    argmax: &Array2<usize>,
    dy: ArrayView2<R>,
    len: usize,
) -> Array3<R> {
    let (b, c) = argmax.dim();
    let mut dx = Array3::<R>::zeros((b, c, len));
    Zip::indexed(argmax).for_each(|(bi, ci), &i| {
        dx[[bi, ci, i]] = dy[[bi, ci]];
    });
    dx
}

/// Inverted dropout mask with keep-probability `1 − rate`.
pub fn dropout_mask<R: Real, G: Rng + ?Sized>(
    shape: (usize, usize, usize),
    rate: f64,
    rng: &mut G,
) -> Array3<R> {
    let keep = 1.0 - rate;
    let scale = R::c(1.0 / keep);
    Array3::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            R::zero()
        }
    })
}

/// Nearest-neighbour upsampling by `factor`, cropped to `out_len`.
pub fn upsample<R: Real>(x: ArrayView3<R>, factor: usize, out_len: usize) -> Array3<R> {
    let (b, c, len) = x.dim();
    let mut y = Array3::<R>::zeros((b, c, out_len));
    for t in 0..out_len {
        let src = (t / factor).min(len - 1);
        y.slice_mut(s![.., .., t]).assign(&x.slice(s![.., .., src]));
    }
    y
}

pub fn upsample_backward<R: Real>(dy: ArrayView3<R>, factor: usize, in_len: usize) -> Array3<R> {
    let (b, c, out_len) = dy.dim();
    let mut dx = Array3::<R>::zeros((b, c, in_len));
    for t in 0..out_len {
        let src = (t / factor).min(in_len - 1);
        let mut dst = dx.slice_mut(s![.., .., src]);
        dst += &dy.slice(s![.., .., t]);
    }
    dx
}
