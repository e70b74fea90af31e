use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use super::mixpool::{AttentionMasks, MixPool};
use super::se::SeResidualBlock;
use crate::error::{Error, Result};
use crate::mask_codec::BinaryMask;
use crate::nn::{join, sigmoid, Conv2d, ConvTranspose2d, MaxPool2x2, Mode, Module, ParamKind, Visitor};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
struct EncoderStage<F> {
    blocks: Vec<SeResidualBlock<F>>,
    mixpool: Option<MixPool<F>>,
    pool: MaxPool2x2,
}

#[derive(Clone, Debug)]
struct DecoderStage<F> {
    up: ConvTranspose2d<F>,
    blocks: Vec<SeResidualBlock<F>>,
    mixpool: Option<MixPool<F>>,
}

/// Channel counts flowing through one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageChannels {
    pub input: usize,
    /// Width of the SE-Residual blocks (and of the skip connection for encoders).
    pub width: usize,
    /// Channels leaving the stage (after MixPool, when present).
    pub output: usize,
}

/// Encoder-decoder segmentation network with feedback hard attention.
#[derive(Clone, Debug)]
pub struct Fanet<F> {
    config: NetworkConfig,
    encoders: Vec<EncoderStage<F>>,
    decoders: Vec<DecoderStage<F>>,
    head: Conv2d<F>,
    /// Sigmoid output of the last training forward.
    output_cache: Option<Tensor<F>>,
}

fn blocks<F: Scalar>(
    input: usize,
    width: usize,
    count: usize,
    reduction: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SeResidualBlock<F>> {
    (0..count)
        .map(|i| SeResidualBlock::new(if i == 0 { input } else { width }, width, reduction, rng))
        .collect()
}

impl<F: Scalar> Fanet<F> {
    /// Builds a freshly initialized network; the same seed gives the same weights.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_blocks = config.se_blocks_per_stage;
        let r = config.se_reduction;

        let mut encoders = Vec::with_capacity(config.depth);
        let mut channels = config.in_channels;
        for (stage, &width) in config.base_widths.iter().enumerate() {
            let blocks = blocks(channels, width, n_blocks, r, &mut rng);
            let mixpool = config
                .encoder_has_mixpool(stage)
                .then(|| MixPool::new(width, config.mixpool_use_fl_branch, &mut rng));
            channels = mixpool.as_ref().map_or(width, |m| m.out_channels());
            encoders.push(EncoderStage {
                blocks,
                mixpool,
                pool: MaxPool2x2::new(),
            });
        }

        let mut decoders = Vec::with_capacity(config.depth);
        for stage in 0..config.depth {
            let width = config.base_widths[config.depth - 1 - stage];
            let up = ConvTranspose2d::new(channels, width, &mut rng);
            // Upsampled features are concatenated with the encoder skip of equal width.
            let blocks = blocks(2 * width, width, n_blocks, r, &mut rng);
            let mixpool = config
                .decoder_has_mixpool(stage)
                .then(|| MixPool::new(width, config.mixpool_use_fl_branch, &mut rng));
            channels = mixpool.as_ref().map_or(width, |m| m.out_channels());
            decoders.push(DecoderStage { up, blocks, mixpool });
        }

        let head_in = channels + usize::from(config.uses_mask());
        let head = Conv2d::new(head_in, 1, 1, &mut rng);
        Ok(Self {
            config,
            encoders,
            decoders,
            head,
            output_cache: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Switches iterative feedback at inference. Training is unaffected, which
    /// is how B2 and B4 share one set of weights.
    pub fn set_feedback_at_inference(&mut self, on: bool) {
        self.config.feedback_at_inference = on;
    }

    /// Per-stage channel bookkeeping: encoders shallow to deep, then decoders deep to shallow.
    pub fn stage_channels(&self) -> (Vec<StageChannels>, Vec<StageChannels>) {
        let enc = self
            .encoders
            .iter()
            .map(|s| {
                let width = s.blocks[0].out_channels();
                StageChannels {
                    input: s.blocks[0].first.conv.in_channels(),
                    width,
                    output: s.mixpool.as_ref().map_or(width, |m| m.out_channels()),
                }
            })
            .collect();
        let dec = self
            .decoders
            .iter()
            .map(|s| {
                let width = s.blocks[0].out_channels();
                StageChannels {
                    input: s.up.weight.shape[0],
                    width,
                    output: s.mixpool.as_ref().map_or(width, |m| m.out_channels()),
                }
            })
            .collect();
        (enc, dec)
    }

    fn check_inputs(&self, images: &Tensor<F>, prev_masks: &[BinaryMask]) -> Result<()> {
        let [n, c, h, w] = images.shape();
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let d = self.config.spatial_divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not divisible by {d}")));
        }
        if self.config.uses_mask() {
            if prev_masks.len() != n {
                return Err(Error::Shape(format!("{} masks for a batch of {n}", prev_masks.len())));
            }
            if let Some(m) = prev_masks.iter().find(|m| m.dims() != (h, w)) {
                return Err(Error::Shape(format!(
                    "mask {:?} does not match image {h}x{w}",
                    m.dims()
                )));
            }
        }
        Ok(())
    }

    /// Per-pixel foreground probabilities of shape `(n, 1, h, w)`.
    ///
    /// `prev_masks` holds one full-resolution mask per item; it is ignored
    /// (and may be empty) when the configuration has no MixPool blocks.
    pub fn forward(&mut self, images: &Tensor<F>, prev_masks: &[BinaryMask], mode: Mode) -> Result<Tensor<F>> {
        self.check_inputs(images, prev_masks)?;
        let mut x = images.clone();
        let mut skips = Vec::with_capacity(self.encoders.len());
        for stage in &mut self.encoders {
            for block in &mut stage.blocks {
                x = block.forward(&x, mode);
            }
            skips.push(x.clone());
            if let Some(mp) = stage.mixpool.as_mut() {
                x = mp.forward(&x, prev_masks, mode)?;
            }
            x = stage.pool.forward(&x, mode);
        }
        for stage in &mut self.decoders {
            let up = stage.up.forward(&x, mode);
            let skip = skips.pop().expect("one skip per encoder");
            x = Tensor::concat_channels(&[&up, &skip])?;
            for block in &mut stage.blocks {
                x = block.forward(&x, mode);
            }
            if let Some(mp) = stage.mixpool.as_mut() {
                x = mp.forward(&x, prev_masks, mode)?;
            }
        }
        if self.config.uses_mask() {
            let mask_plane = mask_tensor::<F>(prev_masks);
            x = Tensor::concat_channels(&[&x, &mask_plane])?;
        }
        let probs = self.head.forward(&x, mode).map(sigmoid);
        if mode == Mode::Train {
            self.output_cache = Some(probs.clone());
        }
        Ok(probs)
    }

    /// Backpropagates `d loss / d probability` and accumulates parameter grads.
    pub fn backward(&mut self, grad_probs: &Tensor<F>) {
        let probs = self.output_cache.take().expect("backward without a training forward");
        let mut g = grad_probs.clone();
        for (d, &p) in g.data_mut().iter_mut().zip(probs.data()) {
            *d = *d * p * (F::one() - p);
        }
        let mut g = self.head.backward(&g);
        if self.config.uses_mask() {
            let c = g.channels();
            g = g.split_channels(&[c - 1, 1]).swap_remove(0);
        }

        let mut skip_grads = Vec::with_capacity(self.decoders.len());
        for stage in self.decoders.iter_mut().rev() {
            if let Some(mp) = stage.mixpool.as_mut() {
                g = mp.backward(&g);
            }
            for block in stage.blocks.iter_mut().rev() {
                g = block.backward(&g);
            }
            let width = stage.up.out_channels();
            let mut parts = g.split_channels(&[width, width]);
            skip_grads.push(parts.pop().expect("skip part"));
            g = stage.up.backward(&parts.pop().expect("up part"));
        }
        // skip_grads now runs from the shallowest encoder to the deepest.
        for (stage, skip_grad) in self.encoders.iter_mut().zip(skip_grads).rev() {
            g = stage.pool.backward(&g);
            if let Some(mp) = stage.mixpool.as_mut() {
                g = mp.backward(&g);
            }
            g.add_assign(&skip_grad);
            for block in stage.blocks.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
    }

    /// Attention masks of every MixPool block from the last forward call,
    /// encoders first, keyed by stage name.
    pub fn attention_trace(&self) -> Vec<(String, AttentionMasks)> {
        let enc = self.encoders.iter().enumerate().filter_map(|(i, s)| {
            s.mixpool
                .as_ref()
                .and_then(|m| m.last_attention())
                .map(|a| (format!("enc{}", i + 1), a.clone()))
        });
        let dec = self.decoders.iter().enumerate().filter_map(|(i, s)| {
            s.mixpool
                .as_ref()
                .and_then(|m| m.last_attention())
                .map(|a| (format!("dec{}", i + 1), a.clone()))
        });
        enc.chain(dec).collect()
    }

    /// Holds the generated attention maps fixed at those of the last forward
    /// call (or releases them with `false`).
    pub fn freeze_attention(&mut self, freeze: bool) {
        for mp in self.mixpools_mut() {
            let masks = freeze.then(|| mp.last_attention().map(|a| a.generated.clone())).flatten();
            mp.freeze_attention(masks);
        }
    }

    fn mixpools_mut(&mut self) -> impl Iterator<Item = &mut MixPool<F>> {
        self.encoders
            .iter_mut()
            .filter_map(|s| s.mixpool.as_mut())
            .chain(self.decoders.iter_mut().filter_map(|s| s.mixpool.as_mut()))
    }

    pub fn num_parameters(&mut self) -> usize {
        self.num_trainable()
    }

    /// Converts all parameters and buffers to another precision.
    pub fn cast<G: Scalar>(&mut self) -> Fanet<G> {
        let mut out = Fanet::<G>::new(self.config.clone(), 0).expect("config already validated");
        let mut values = Vec::new();
        self.visit("", &mut |_, _, p| values.push(p.value.clone()));
        let mut it = values.into_iter();
        out.visit("", &mut |_, _, p| {
            let src = it.next().expect("same layout");
            p.value = src.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect();
        });
        out
    }
}

/// Stacks masks into an `(n, 1, h, w)` tensor of zeros and ones.
pub fn mask_tensor<F: Scalar>(masks: &[BinaryMask]) -> Tensor<F> {
    let (h, w) = masks.first().map_or((0, 0), |m| m.dims());
    let data = masks
        .iter()
        .flat_map(|m| m.values().iter().map(|&v| if v == 1 { F::one() } else { F::zero() }))
        .collect();
    Tensor::from_vec([masks.len(), 1, h, w], data).expect("masks share dims")
}

impl<F: Scalar> Module<F> for Fanet<F> {
    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, F>) {
        for (i, stage) in self.encoders.iter_mut().enumerate() {
            let p = join(prefix, &format!("enc{}", i + 1));
            for (j, block) in stage.blocks.iter_mut().enumerate() {
                block.visit(&join(&p, &format!("block{}", j + 1)), f);
            }
            if let Some(mp) = stage.mixpool.as_mut() {
                mp.visit(&join(&p, "mixpool"), f);
            }
        }
        for (i, stage) in self.decoders.iter_mut().enumerate() {
            let p = join(prefix, &format!("dec{}", i + 1));
            stage.up.visit(&join(&p, "up"), f);
            for (j, block) in stage.blocks.iter_mut().enumerate() {
                block.visit(&join(&p, &format!("block{}", j + 1)), f);
            }
            if let Some(mp) = stage.mixpool.as_mut() {
                mp.visit(&join(&p, "mixpool"), f);
            }
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Trainable scalar count of the network described by `config`.
pub fn count_parameters(config: &NetworkConfig) -> Result<usize> {
    let mut net = Fanet::<f32>::new(config.clone(), 0)?;
    let mut total = 0;
    net.visit("", &mut |_, kind, p| {
        if kind == ParamKind::Trainable {
            total += p.len();
        }
    });
    Ok(total)
}
