use rand::Rng;

use crate::nn::{
    join, relu_backward, relu_inplace, sigmoid, BatchNorm2d, Conv2d, ConvBnRelu, Linear, Mode, Module, Visitor,
};
use crate::tensor::{Scalar, Tensor};

/// Squeeze-and-excitation channel gating.
///
/// Global average pool, a reduce/expand bottleneck with a ReLU between, and a
/// sigmoid gate that rescales each channel.
#[derive(Clone, Debug)]
pub struct SeLayer<F> {
    pub reduce: Linear<F>,
    pub expand: Linear<F>,
    cache: Option<SeCache<F>>,
}

#[derive(Clone, Debug)]
struct SeCache<F> {
    input: Tensor<F>,
    squeezed: Vec<F>,
    hidden: Vec<F>,
    gates: Vec<F>,
}

/// Bottleneck width for `channels` at the given reduction ratio (at least 1).
pub fn se_hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

impl<F: Scalar> SeLayer<F> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = se_hidden_width(channels, reduction);
        Self {
            reduce: Linear::new(channels, hidden, rng),
            expand: Linear::new(hidden, channels, rng),
            cache: None,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.reduce.out_features()
    }

    /// Per-item, per-channel gates in `(0, 1)`.
    pub fn gates(&self, x: &Tensor<F>) -> Vec<F> {
        self.gates_with_intermediates(x).2
    }

    fn gates_with_intermediates(&self, x: &Tensor<F>) -> (Vec<F>, Vec<F>, Vec<F>) {
        let [n, c, _, _] = x.shape();
        let area = F::from_usize(x.plane_len()).expect("area fits");
        let mut squeezed = Vec::with_capacity(n * c);
        for item in 0..n {
            for ch in 0..c {
                squeezed.push(x.plane(item, ch).iter().copied().sum::<F>() / area);
            }
        }
        let mut hidden = self.reduce.forward(&squeezed, n);
        for v in hidden.iter_mut() {
            *v = v.max(F::zero());
        }
        let gates = self.expand.forward(&hidden, n).into_iter().map(sigmoid).collect();
        (squeezed, hidden, gates)
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let (squeezed, hidden, gates) = self.gates_with_intermediates(x);
        let [n, c, _, _] = x.shape();
        let mut out = x.clone();
        for item in 0..n {
            for ch in 0..c {
                let g = gates[item * c + ch];
                for v in out.plane_mut(item, ch) {
                    *v = *v * g;
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(SeCache {
                input: x.clone(),
                squeezed,
                hidden,
                gates,
            });
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let SeCache {
            input,
            squeezed,
            hidden,
            gates,
        } = self.cache.take().expect("backward without a training forward");
        let [n, c, _, _] = input.shape();
        let area = F::from_usize(input.plane_len()).expect("area fits");

        let mut dx = grad.clone();
        let mut dpre = vec![F::zero(); n * c];
        for item in 0..n {
            for ch in 0..c {
                let g = gates[item * c + ch];
                let dg: F = grad
                    .plane(item, ch)
                    .iter()
                    .zip(input.plane(item, ch))
                    .map(|(&a, &b)| a * b)
                    .sum();
                dpre[item * c + ch] = dg * g * (F::one() - g);
                for v in dx.plane_mut(item, ch) {
                    *v = *v * g;
                }
            }
        }
        let mut dhidden = self.expand.backward(&hidden, &dpre, n);
        for (d, &h) in dhidden.iter_mut().zip(&hidden) {
            if h <= F::zero() {
                *d = F::zero();
            }
        }
        let dsq = self.reduce.backward(&squeezed, &dhidden, n);
        for item in 0..n {
            for ch in 0..c {
                let d = dsq[item * c + ch] / area;
                for v in dx.plane_mut(item, ch) {
                    *v = *v + d;
                }
            }
        }
        dx
    }
}

impl<F: Scalar> Module<F> for SeLayer<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }
}

/// Residual block: conv-BN-ReLU, conv-BN, SE gating, plus the identity path
/// (a 1x1 projection when channel counts differ), then ReLU.
#[derive(Clone, Debug)]
pub struct SeResidualBlock<F> {
    pub first: ConvBnRelu<F>,
    pub second: Conv2d<F>,
    pub second_bn: BatchNorm2d<F>,
    pub se: SeLayer<F>,
    pub projection: Option<Conv2d<F>>,
    relu_mask: Option<Vec<bool>>,
}

impl<F: Scalar> SeResidualBlock<F> {
    pub fn new(in_channels: usize, out_channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: ConvBnRelu::new(in_channels, out_channels, 3, rng),
            second: Conv2d::new(out_channels, out_channels, 3, rng),
            second_bn: BatchNorm2d::new(out_channels),
            se: SeLayer::new(out_channels, reduction, rng),
            projection: (in_channels != out_channels).then(|| Conv2d::new(in_channels, out_channels, 1, rng)),
            relu_mask: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.second.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let a = self.first.forward(x, mode);
        let b = self.second.forward(&a, mode);
        let b = self.second_bn.forward(&b, mode);
        let mut y = self.se.forward(&b, mode);
        match self.projection.as_mut() {
            Some(p) => y.add_assign(&p.forward(x, mode)),
            None => y.add_assign(x),
        }
        self.relu_mask = relu_inplace(&mut y, mode == Mode::Train);
        y
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let mask = self.relu_mask.take().expect("backward without a training forward");
        let mut g = grad.clone();
        relu_backward(&mut g, &mask);
        let db = self.se.backward(&g);
        let da = self.second.backward(&self.second_bn.backward(&db));
        let mut dx = self.first.backward(&da);
        match self.projection.as_mut() {
            Some(p) => dx.add_assign(&p.backward(&g)),
            None => dx.add_assign(&g),
        }
        dx
    }
}

impl<F: Scalar> Module<F> for SeResidualBlock<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.first.visit(&join(prefix, "conv1"), f);
        self.second.visit(&join(prefix, "conv2"), f);
        self.second_bn.visit(&join(prefix, "bn2"), f);
        self.se.visit(&join(prefix, "se"), f);
        if let Some(p) = self.projection.as_mut() {
            p.visit(&join(prefix, "shortcut"), f);
        }
    }
}
