use super::Mode;
use crate::tensor::{Scalar, Tensor};

/// 2x2 max pooling with stride 2.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    /// Flat input index of each output's maximum.
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<F: Scalar>(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let [n, c, h, w] = x.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "max pooling needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        for (plane_idx, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let base = plane_idx * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[oy * ow + ox] = src[best];
                    argmax.push(best);
                }
            }
        }
        if mode == Mode::Train {
            self.argmax = Some((argmax, x.shape()));
        }
        out
    }

    pub fn backward<F: Scalar>(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let (argmax, shape) = self.argmax.take().expect("backward without a training forward");
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad.data()) {
            d[idx] = d[idx] + g;
        }
        dx
    }
}
