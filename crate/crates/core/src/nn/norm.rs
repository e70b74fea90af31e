use super::{join, Mode, Module, Param, ParamKind, Visitor};
use crate::tensor::{Scalar, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, height, width)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    cache: Option<BnCache<F>>,
}

#[derive(Clone, Debug)]
struct BnCache<F> {
    normalized: Tensor<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], F::one()),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::zeros(vec![channels]),
            running_var: Param::filled(vec![channels], F::one()),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let [n, c, _, _] = x.shape();
        assert_eq!(c, self.gamma.len(), "batch norm channel mismatch");
        let eps = F::from_f64_lossy(EPS);
        let mut out = Tensor::zeros(x.shape());

        if mode == Mode::Eval {
            for ch in 0..c {
                let scale = self.gamma.value[ch] / (self.running_var.value[ch] + eps).sqrt();
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                for item in 0..n {
                    for (o, &v) in out.plane_mut(item, ch).iter_mut().zip(x.plane(item, ch)) {
                        *o = v * scale + shift;
                    }
                }
            }
            return out;
        }

        let count = n * x.plane_len();
        let m = F::from_usize(count).expect("count fits");
        let momentum = F::from_f64_lossy(MOMENTUM);
        let mut inv_std = vec![F::zero(); c];
        let mut normalized = Tensor::zeros(x.shape());
        #[allow(clippy::needless_range_loop)]
        for ch in 0..c {
            let mut sum = F::zero();
            for item in 0..n {
                sum = sum + x.plane(item, ch).iter().copied().sum::<F>();
            }
            let mean = sum / m;
            let mut sq = F::zero();
            for item in 0..n {
                sq = sq + x.plane(item, ch).iter().map(|&v| (v - mean) * (v - mean)).sum::<F>();
            }
            let var = sq / m;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for item in 0..n {
                let src = x.plane(item, ch);
                for (xh, &v) in normalized.plane_mut(item, ch).iter_mut().zip(src) {
                    *xh = (v - mean) * istd;
                }
                for (o, &xh) in out.plane_mut(item, ch).iter_mut().zip(normalized.plane(item, ch)) {
                    *o = g * xh + b;
                }
            }
            let unbiased = if count > 1 {
                sq / F::from_usize(count - 1).expect("count fits")
            } else {
                var
            };
            let rm = &mut self.running_mean.value[ch];
            *rm = (F::one() - momentum) * *rm + momentum * mean;
            let rv = &mut self.running_var.value[ch];
            *rv = (F::one() - momentum) * *rv + momentum * unbiased;
        }
        if mode == Mode::Train {
            self.cache = Some(BnCache { normalized, inv_std });
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let BnCache { normalized, inv_std } = self.cache.take().expect("backward without a training forward");
        let [n, c, _, _] = grad.shape();
        let m = F::from_usize(n * grad.plane_len()).expect("count fits");
        let mut dx = Tensor::zeros(grad.shape());
        #[allow(clippy::needless_range_loop)]
        for ch in 0..c {
            let mut sum_g = F::zero();
            let mut sum_gx = F::zero();
            for item in 0..n {
                for (&g, &xh) in grad.plane(item, ch).iter().zip(normalized.plane(item, ch)) {
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * xh;
                }
            }
            if !self.gamma.stop_gradient {
                self.gamma.grad[ch] = self.gamma.grad[ch] + sum_gx;
                self.beta.grad[ch] = self.beta.grad[ch] + sum_g;
            }
            let k = self.gamma.value[ch] * inv_std[ch] / m;
            for item in 0..n {
                let g = grad.plane(item, ch);
                let xh = normalized.plane(item, ch);
                for ((d, &gv), &xv) in dx.plane_mut(item, ch).iter_mut().zip(g).zip(xh) {
                    *d = k * (m * gv - sum_g - xv * sum_gx);
                }
            }
        }
        dx
    }
}

impl<F: Scalar> Module<F> for BatchNorm2d<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), ParamKind::Trainable, &mut self.gamma);
        f(&join(prefix, "bias"), ParamKind::Trainable, &mut self.beta);
        f(&join(prefix, "running_mean"), ParamKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), ParamKind::Buffer, &mut self.running_var);
    }
}
