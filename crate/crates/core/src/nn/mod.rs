//! Layers with hand-written backward passes.
//!
//! Every layer caches what it needs during a training-mode forward call and
//! consumes that cache in `backward`, accumulating into its parameter grads.
//! A layer is used at most once per forward pass.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::MaxPool2x2;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Scalar, Tensor};

/// Whether a forward call is part of an optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches recorded for backward.
    Train,
    /// Running statistics, nothing recorded.
    Eval,
    /// Batch statistics like `Train`, but nothing recorded for backward.
    BatchStats,
}

impl Mode {
    /// Same normalization behaviour without recording backward caches.
    pub fn without_backward(self) -> Mode {
        match self {
            Mode::Train => Mode::BatchStats,
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by gradient descent.
    Trainable,
    /// State that is saved with the model but not optimized (running statistics).
    Buffer,
}

/// A named, shaped array of values with an accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub value: Vec<F>,
    pub grad: Vec<F>,
    pub shape: Vec<usize>,
    /// Set for parameters that only feed a hard threshold; they receive no gradient.
    pub stop_gradient: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(shape: Vec<usize>, value: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            grad: vec![F::zero(); value.len()],
            value,
            shape,
            stop_gradient: false,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![F::zero(); len])
    }

    pub fn filled(shape: Vec<usize>, v: F) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![v; len])
    }

    /// Kaiming-uniform style initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let len = shape.iter().product();
        let value = (0..len).map(|_| F::from_f64_lossy(dist.sample(rng))).collect();
        Self::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Callback used to walk every parameter and buffer of a model in a fixed order.
pub type Visitor<'a, F> = dyn FnMut(&str, ParamKind, &mut Param<F>) + 'a;

pub trait Module<F: Scalar> {
    /// Visits parameters and buffers under `prefix` in a deterministic order.
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>);

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, _, p| p.zero_grad());
    }

    fn num_trainable(&mut self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, kind, p| {
            if kind == ParamKind::Trainable {
                total += p.len();
            }
        });
        total
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// In-place ReLU that returns the activation pattern for backward.
pub(crate) fn relu_inplace<F: Scalar>(t: &mut Tensor<F>, record: bool) -> Option<Vec<bool>> {
    let mask = record.then(|| t.data().iter().map(|&v| v > F::zero()).collect());
    for v in t.data_mut() {
        *v = v.max(F::zero());
    }
    mask
}

pub(crate) fn relu_backward<F: Scalar>(grad: &mut Tensor<F>, mask: &[bool]) {
    for (g, &on) in grad.data_mut().iter_mut().zip(mask) {
        *g = if on { *g } else { F::zero() };
    }
}

/// 3x3 convolution, batch norm and ReLU: the unit the network is assembled from.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<F> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm2d<F>,
    relu_mask: Option<Vec<bool>>,
}

impl<F: Scalar> ConvBnRelu<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, kernel, rng),
            bn: BatchNorm2d::new(out_channels),
            relu_mask: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let y = self.conv.forward(x, mode);
        let mut y = self.bn.forward(&y, mode);
        self.relu_mask = relu_inplace(&mut y, mode == Mode::Train);
        y
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let mask = self.relu_mask.take().expect("backward without a training forward");
        let mut g = grad.clone();
        relu_backward(&mut g, &mask);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }

    pub fn set_stop_gradient(&mut self) {
        self.visit("", &mut |_, _, p| p.stop_gradient = true);
    }
}

impl<F: Scalar> Module<F> for ConvBnRelu<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}
