use rand::Rng;

use crate::error::{Error, Result};
use crate::mask_codec::{downscale_mask, BinaryMask};
use crate::nn::{join, sigmoid, Conv2d, ConvBnRelu, Mode, Module, Visitor};
use crate::tensor::{Scalar, Tensor};

/// Hard-attention masks produced inside one MixPool block for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMasks {
    /// Previous mask max-pooled to the stage resolution.
    pub feedback: Vec<BinaryMask>,
    /// Thresholded spatial attention generated from the features.
    pub generated: Vec<BinaryMask>,
    /// Pointwise union of the two, used to gate the features.
    pub union: Vec<BinaryMask>,
}

/// Feedback hard-attention block.
///
/// Generates a binary spatial map from the features (3x3 conv-BN-ReLU, 1x1
/// conv, sigmoid, `>= 0.5`), ORs it with the max-pooled previous mask, gates
/// the features with the union, and concatenates a conv-BN-ReLU transform of
/// the plain features with one of the gated features.
///
/// The generated map is a hard threshold, so its generator receives no
/// gradient.
#[derive(Clone, Debug)]
pub struct MixPool<F> {
    pub attention_conv: ConvBnRelu<F>,
    pub attention_logits: Conv2d<F>,
    /// Transform of the untouched features; absent when that branch is ablated.
    pub feature_branch: Option<ConvBnRelu<F>>,
    pub attended_branch: ConvBnRelu<F>,
    channels: usize,
    /// When set, replaces the generated maps (used to hold the gates fixed).
    frozen: Option<Vec<BinaryMask>>,
    last: Option<AttentionMasks>,
    union_cache: Option<Vec<BinaryMask>>,
}

impl<F: Scalar> MixPool<F> {
    pub fn new(channels: usize, use_feature_branch: bool, rng: &mut impl Rng) -> Self {
        let mut attention_conv = ConvBnRelu::new(channels, channels, 3, rng);
        attention_conv.set_stop_gradient();
        let mut attention_logits = Conv2d::new(channels, 1, 1, rng);
        attention_logits.weight.stop_gradient = true;
        attention_logits.bias.stop_gradient = true;
        Self {
            attention_conv,
            attention_logits,
            feature_branch: use_feature_branch.then(|| ConvBnRelu::new(channels, channels, 3, rng)),
            attended_branch: ConvBnRelu::new(channels, channels, 3, rng),
            channels,
            frozen: None,
            last: None,
            union_cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.channels
    }

    pub fn out_channels(&self) -> usize {
        if self.feature_branch.is_some() {
            2 * self.channels
        } else {
            self.channels
        }
    }

    /// Sigmoid activations of the attention generator, one plane per item.
    pub fn attention_probabilities(&mut self, f: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let hidden = self.attention_conv.forward(f, mode.without_backward());
        self.attention_logits.forward(&hidden, Mode::Eval).map(sigmoid)
    }

    /// Thresholds the generated attention at 0.5 (inclusive).
    pub fn make_attention_map(&mut self, f: &Tensor<F>, mode: Mode) -> Vec<BinaryMask> {
        let probs = self.attention_probabilities(f, mode);
        let half = F::from_f64_lossy(0.5);
        let (h, w) = (f.height(), f.width());
        (0..f.batch())
            .map(|n| {
                let plane = probs.plane(n, 0);
                BinaryMask::new(h, w, plane.iter().map(|&p| u8::from(p >= half)).collect())
                    .expect("dims match")
            })
            .collect()
    }

    pub fn freeze_attention(&mut self, masks: Option<Vec<BinaryMask>>) {
        self.frozen = masks;
    }

    /// Masks used by the most recent forward call.
    pub fn last_attention(&self) -> Option<&AttentionMasks> {
        self.last.as_ref()
    }

    pub fn forward(&mut self, f: &Tensor<F>, prev_masks: &[BinaryMask], mode: Mode) -> Result<Tensor<F>> {
        let [n, c, h, w] = f.shape();
        if c != self.channels {
            return Err(Error::Shape(format!("mixpool expects {} channels, got {c}", self.channels)));
        }
        if prev_masks.len() != n {
            return Err(Error::Shape(format!("{} masks for a batch of {n}", prev_masks.len())));
        }
        let feedback = prev_masks
            .iter()
            .map(|m| downscale_mask(m, h, w))
            .collect::<Result<Vec<_>>>()?;
        let generated = match &self.frozen {
            Some(frozen) => {
                if frozen.len() != n || frozen.iter().any(|m| m.dims() != (h, w)) {
                    return Err(Error::Shape("frozen attention does not match the batch".into()));
                }
                // Keep batch-norm statistics consistent with an unfrozen pass.
                self.attention_conv.forward(f, mode.without_backward());
                frozen.clone()
            }
            None => self.make_attention_map(f, mode),
        };
        let union = feedback
            .iter()
            .zip(&generated)
            .map(|(a, b)| a.union(b))
            .collect::<Result<Vec<_>>>()?;

        let attended = apply_hard_attention(f, &union)?;
        let gated = self.attended_branch.forward(&attended, mode);
        let out = match self.feature_branch.as_mut() {
            Some(branch) => {
                let plain = branch.forward(f, mode);
                Tensor::concat_channels(&[&plain, &gated])?
            }
            None => gated,
        };
        if mode == Mode::Train {
            self.union_cache = Some(union.clone());
        }
        self.last = Some(AttentionMasks {
            feedback,
            generated,
            union,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Tensor<F> {
        let union = self.union_cache.take().expect("backward without a training forward");
        let (d_plain, d_gated) = if self.feature_branch.is_some() {
            let mut parts = grad.split_channels(&[self.channels, self.channels]);
            let g = parts.pop().expect("two parts");
            (parts.pop(), g)
        } else {
            (None, grad.clone())
        };
        let d_attended = self.attended_branch.backward(&d_gated);
        let mut df = apply_hard_attention(&d_attended, &union).expect("shapes checked in forward");
        if let (Some(branch), Some(d)) = (self.feature_branch.as_mut(), d_plain) {
            df.add_assign(&branch.backward(&d));
        }
        df
    }
}

/// Multiplies every channel of item `n` by `masks[n]` (values 0 or 1).
pub fn apply_hard_attention<F: Scalar>(f: &Tensor<F>, masks: &[BinaryMask]) -> Result<Tensor<F>> {
    let [n, c, h, w] = f.shape();
    if masks.len() != n || masks.iter().any(|m| m.dims() != (h, w)) {
        return Err(Error::Shape(format!(
            "attention masks do not match features of shape {:?}",
            f.shape()
        )));
    }
    let mut out = f.clone();
    for (item, mask) in masks.iter().enumerate() {
        for ch in 0..c {
            for (v, &m) in out.plane_mut(item, ch).iter_mut().zip(mask.values()) {
                if m == 0 {
                    *v = F::zero();
                }
            }
        }
    }
    Ok(out)
}

impl<F: Scalar> Module<F> for MixPool<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.attention_conv.visit(&join(prefix, "attn_conv"), f);
        self.attention_logits.visit(&join(prefix, "attn_logits"), f);
        if let Some(b) = self.feature_branch.as_mut() {
            b.visit(&join(prefix, "feature_branch"), f);
        }
        self.attended_branch.visit(&join(prefix, "attended_branch"), f);
    }
}
