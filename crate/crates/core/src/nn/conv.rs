use rand::Rng;

use super::{join, Mode, Module, Param, ParamKind, Visitor};
use crate::tensor::{
    col2im, from_channel_major, im2col, matmul, matmul_nt, matmul_tn, to_channel_major, to_channel_major_into, Scalar,
    Tensor,
};

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    cache: Option<ConvCache<F>>,
    /// Reused column buffer, so large layers do not fault in fresh pages every step.
    scratch: Vec<F>,
    out_scratch: Vec<F>,
}

#[derive(Clone, Debug)]
struct ConvCache<F> {
    /// Column matrix `(in * k * k) x (n * h * w)`; for 1x1 kernels this is the input itself.
    cols: Vec<F>,
    shape: [usize; 4],
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "same-padding convolution needs an odd kernel");
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::uniform(vec![out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Param::uniform(vec![out_channels], fan_in, rng),
            in_channels,
            out_channels,
            kernel,
            cache: None,
            scratch: Vec::new(),
            out_scratch: Vec::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn columns(&mut self, x: &Tensor<F>) -> Vec<F> {
        let [n, c, h, w] = x.shape();
        let mut cols = std::mem::take(&mut self.scratch);
        if self.kernel == 1 {
            to_channel_major_into(x, &mut cols);
            return cols;
        }
        let plane = h * w;
        let ld = n * plane;
        let k = self.kernel;
        cols.resize(c * k * k * ld, F::zero());
        for item in 0..n {
            im2col(x.item(item), c, h, w, k, 1, k / 2, &mut cols[item * plane..], ld);
        }
        cols
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let cols = self.columns(x);
        let ld = n * h * w;
        let rows = c * self.kernel * self.kernel;
        let mut out = std::mem::take(&mut self.out_scratch);
        out.resize(self.out_channels * ld, F::zero());
        for (o, bias) in self.bias.value.iter().enumerate() {
            out[o * ld..(o + 1) * ld].fill(*bias);
        }
        matmul(self.out_channels, rows, ld, &self.weight.value, &cols, &mut out, true);
        if mode == Mode::Train {
            self.cache = Some(ConvCache { cols, shape: x.shape() });
        } else {
            self.scratch = cols;
        }
        let y = from_channel_major(&out, [n, self.out_channels, h, w]);
        self.out_scratch = out;
        y
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let ConvCache { cols, shape } = self.cache.take().expect("backward without a training forward");
        let [n, c, h, w] = shape;
        let ld = n * h * w;
        let rows = c * self.kernel * self.kernel;
        let mut g = std::mem::take(&mut self.out_scratch);
        to_channel_major_into(grad, &mut g);

        if !self.weight.stop_gradient {
            matmul_nt(self.out_channels, ld, rows, &g, &cols, &mut self.weight.grad, true);
            for (o, db) in self.bias.grad.iter_mut().enumerate() {
                *db = *db + g[o * ld..(o + 1) * ld].iter().copied().sum();
            }
        }

        // The column buffer is dead after the weight gradient; reuse it for the input gradient.
        let mut dcols = cols;
        matmul_tn(rows, self.out_channels, ld, &self.weight.value, &g, &mut dcols, false);
        self.out_scratch = g;
        let dx = if self.kernel == 1 {
            from_channel_major(&dcols, shape)
        } else {
            let plane = h * w;
            let k = self.kernel;
            let mut dx = Tensor::zeros(shape);
            for item in 0..n {
                col2im(&dcols[item * plane..], ld, c, h, w, k, 1, k / 2, dx.item_mut(item));
            }
            dx
        };
        self.scratch = dcols;
        dx
    }
}

impl<F: Scalar> Module<F> for Conv2d<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), ParamKind::Trainable, &mut self.weight);
        f(&join(prefix, "bias"), ParamKind::Trainable, &mut self.bias);
    }
}

/// 4x4 transposed convolution with stride 2 and padding 1: doubles height and width.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<F> {
    /// Laid out as `(in, out, 4, 4)`.
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_channels: usize,
    out_channels: usize,
    cache: Option<(Vec<F>, [usize; 4])>,
}

const UP_KERNEL: usize = 4;
const UP_STRIDE: usize = 2;
const UP_PAD: usize = 1;

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = out_channels * UP_KERNEL * UP_KERNEL;
        Self {
            weight: Param::uniform(vec![in_channels, out_channels, UP_KERNEL, UP_KERNEL], fan_in, rng),
            bias: Param::uniform(vec![out_channels], fan_in, rng),
            in_channels,
            out_channels,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "transpose conv input channel mismatch");
        let (oh, ow) = (h * UP_STRIDE, w * UP_STRIDE);
        let ld = n * h * w;
        let rows = self.out_channels * UP_KERNEL * UP_KERNEL;
        let xb = to_channel_major(x);
        let mut cols = vec![F::zero(); rows * ld];
        matmul_tn(rows, c, ld, &self.weight.value, &xb, &mut cols, false);

        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        for item in 0..n {
            col2im(
                &cols[item * h * w..],
                ld,
                self.out_channels,
                oh,
                ow,
                UP_KERNEL,
                UP_STRIDE,
                UP_PAD,
                out.item_mut(item),
            );
            for (o, &b) in self.bias.value.iter().enumerate() {
                for v in out.plane_mut(item, o) {
                    *v = *v + b;
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some((xb, x.shape()));
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let (xb, shape) = self.cache.take().expect("backward without a training forward");
        let [n, c, h, w] = shape;
        let (oh, ow) = (h * UP_STRIDE, w * UP_STRIDE);
        let ld = n * h * w;
        let rows = self.out_channels * UP_KERNEL * UP_KERNEL;

        let mut dcols = vec![F::zero(); rows * ld];
        for item in 0..n {
            im2col(
                grad.item(item),
                self.out_channels,
                oh,
                ow,
                UP_KERNEL,
                UP_STRIDE,
                UP_PAD,
                &mut dcols[item * h * w..],
                ld,
            );
        }
        if !self.weight.stop_gradient {
            matmul_nt(c, ld, rows, &xb, &dcols, &mut self.weight.grad, true);
            for item in 0..n {
                for (o, db) in self.bias.grad.iter_mut().enumerate() {
                    *db = *db + grad.plane(item, o).iter().copied().sum();
                }
            }
        }
        let mut dx = vec![F::zero(); c * ld];
        matmul(c, rows, ld, &self.weight.value, &dcols, &mut dx, false);
        from_channel_major(&dx, shape)
    }
}

impl<F: Scalar> Module<F> for ConvTranspose2d<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), ParamKind::Trainable, &mut self.weight);
        f(&join(prefix, "bias"), ParamKind::Trainable, &mut self.bias);
    }
}
