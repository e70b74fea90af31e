use rand::Rng;

use super::{join, Module, Param, ParamKind, Visitor};
use crate::tensor::Scalar;

/// Fully connected layer on `(batch, features)` row-major matrices.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_features: usize,
    out_features: usize,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::uniform(vec![out_features, in_features], in_features, rng),
            bias: Param::uniform(vec![out_features], in_features, rng),
            in_features,
            out_features,
        }
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn forward(&self, x: &[F], batch: usize) -> Vec<F> {
        debug_assert_eq!(x.len(), batch * self.in_features);
        let mut out = Vec::with_capacity(batch * self.out_features);
        for row in x.chunks(self.in_features) {
            for o in 0..self.out_features {
                let w = &self.weight.value[o * self.in_features..(o + 1) * self.in_features];
                let dot: F = w.iter().zip(row).map(|(&a, &b)| a * b).sum();
                out.push(dot + self.bias.value[o]);
            }
        }
        out
    }

    /// Accumulates parameter grads given the forward input and returns the input grad.
    pub fn backward(&mut self, x: &[F], grad: &[F], batch: usize) -> Vec<F> {
        let (fi, fo) = (self.in_features, self.out_features);
        let mut dx = vec![F::zero(); batch * fi];
        for b in 0..batch {
            let row = &x[b * fi..(b + 1) * fi];
            let g = &grad[b * fo..(b + 1) * fo];
            for (o, &go) in g.iter().enumerate() {
                let w = &self.weight.value[o * fi..(o + 1) * fi];
                for (d, &wv) in dx[b * fi..(b + 1) * fi].iter_mut().zip(w) {
                    *d = *d + go * wv;
                }
                let wg = &mut self.weight.grad[o * fi..(o + 1) * fi];
                for (d, &xv) in wg.iter_mut().zip(row) {
                    *d = *d + go * xv;
                }
                self.bias.grad[o] = self.bias.grad[o] + go;
            }
        }
        dx
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), ParamKind::Trainable, &mut self.weight);
        f(&join(prefix, "bias"), ParamKind::Trainable, &mut self.bias);
    }
}
