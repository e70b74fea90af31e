//! Iterative test-time refinement: the prediction is fed back as the next
//! input mask, starting from an Otsu mask.

use crate::data::{image_batch, Image};
use crate::error::{Error, Result};
use crate::mask_codec::{otsu_threshold, BinaryMask};
use crate::metrics::{confusion, metric_suite, MetricSuite};
use crate::model::Fanet;
use crate::nn::Mode;
use crate::tensor::Scalar;

pub const DEFAULT_ITERATIONS: usize = 10;

/// Histogram resolution of the Otsu seed mask.
pub const OTSU_LEVELS: usize = 256;

/// `1` wherever `p >= threshold`.
pub fn binarize<F: Scalar>(probs: &[F], height: usize, width: usize, threshold: f64) -> Result<BinaryMask> {
    let t = F::from_f64_lossy(threshold);
    BinaryMask::new(height, width, probs.iter().map(|&p| u8::from(p >= t)).collect())
}

/// The Otsu mask that seeds iteration 0.
pub fn initial_mask(image: &Image) -> BinaryMask {
    otsu_threshold(&image.gray(), OTSU_LEVELS).mask
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementTrace {
    /// Sigmoid outputs, one map per iteration.
    pub probabilities: Vec<Vec<f32>>,
    /// Binarized predictions; entry 0 comes from the Otsu-seeded pass.
    pub masks: Vec<BinaryMask>,
    /// Per-iteration metrics when ground truth was supplied.
    pub metrics: Option<Vec<MetricSuite>>,
    /// Whether refinement stopped at a fixed point before the iteration budget.
    pub converged_early: bool,
}

impl RefinementTrace {
    pub fn final_mask(&self) -> &BinaryMask {
        self.masks.last().expect("trace is never empty")
    }

    pub fn f1_curve(&self) -> Option<Vec<f64>> {
        self.metrics.as_ref().map(|m| m.iter().map(|s| s.f1).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferenceOptions {
    pub iterations: usize,
    /// Stop as soon as an iteration reproduces the previous mask.
    pub early_stop: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            early_stop: false,
        }
    }
}

fn forward_masks(
    model: &mut Fanet<f32>,
    images: &[&Image],
    inputs: &[BinaryMask],
) -> Result<(Vec<Vec<f32>>, Vec<BinaryMask>)> {
    let x = image_batch::<f32>(images)?;
    let (h, w) = images[0].dims();
    let probs = model.forward(&x, inputs, Mode::Eval)?;
    let threshold = model.config().binarize_threshold;
    let plane = h * w;
    let mut maps = Vec::with_capacity(images.len());
    let mut masks = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let p = probs.data()[i * plane..(i + 1) * plane].to_vec();
        masks.push(binarize(&p, h, w, threshold)?);
        maps.push(p);
    }
    Ok((maps, masks))
}

/// Refines a batch of same-sized images in lockstep for `iterations` rounds.
///
/// Traces have `iterations + 1` entries. When the model was configured
/// without inference feedback every round is fed the Otsu seed again.
pub fn iterative_predict_batch(
    model: &mut Fanet<f32>,
    images: &[&Image],
    iterations: usize,
    truths: Option<&[&BinaryMask]>,
) -> Result<Vec<RefinementTrace>> {
    iterate(model, images, iterations, false, truths)
}

/// Single-image refinement; with `early_stop` the trace ends at the first fixed point.
pub fn iterative_predict(
    model: &mut Fanet<f32>,
    image: &Image,
    options: InferenceOptions,
    truth: Option<&BinaryMask>,
) -> Result<RefinementTrace> {
    let truths = truth.map(|t| vec![t]);
    let mut traces = iterate(model, &[image], options.iterations, options.early_stop, truths.as_deref())?;
    Ok(traces.pop().expect("one trace per image"))
}

fn iterate(
    model: &mut Fanet<f32>,
    images: &[&Image],
    iterations: usize,
    early_stop: bool,
    truths: Option<&[&BinaryMask]>,
) -> Result<Vec<RefinementTrace>> {
    if iterations == 0 {
        return Err(Error::Config("iterative inference needs at least one iteration".into()));
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(t) = truths {
        if t.len() != images.len() {
            return Err(Error::Shape(format!("{} truths for {} images", t.len(), images.len())));
        }
    }
    let feedback = model.config().feedback_at_inference;
    let seeds: Vec<BinaryMask> = images.iter().map(|i| initial_mask(i)).collect();
    let mut traces: Vec<RefinementTrace> = images
        .iter()
        .map(|_| RefinementTrace {
            probabilities: Vec::with_capacity(iterations + 1),
            masks: Vec::with_capacity(iterations + 1),
            metrics: truths.map(|_| Vec::with_capacity(iterations + 1)),
            converged_early: false,
        })
        .collect();

    let mut inputs = seeds.clone();
    for step in 0..=iterations {
        let (maps, masks) = forward_masks(model, images, &inputs)?;
        let mut all_fixed = step > 0;
        for (i, (p, m)) in maps.into_iter().zip(masks).enumerate() {
            if let (Some(t), Some(ms)) = (truths, traces[i].metrics.as_mut()) {
                ms.push(metric_suite(&confusion(&m, t[i])?));
            }
            all_fixed &= traces[i].masks.last() == Some(&m);
            inputs[i] = if feedback { m.clone() } else { seeds[i].clone() };
            traces[i].probabilities.push(p);
            traces[i].masks.push(m);
        }
        if early_stop && all_fixed && step < iterations {
            for t in &mut traces {
                t.converged_early = true;
            }
            break;
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, NetworkConfig};

    #[test]
    fn binarize_boundary_is_inclusive() {
        assert_eq!(binarize(&[0.5f32; 4], 2, 2, 0.5).unwrap(), BinaryMask::ones(2, 2));
        assert_eq!(binarize(&[0.4999f32; 4], 2, 2, 0.5).unwrap(), BinaryMask::zeros(2, 2));
    }

    fn tiny(ablation: Ablation) -> Fanet<f32> {
        Fanet::new(NetworkConfig::default().with_widths(&[4, 8]).with_ablation(ablation), 3).unwrap()
    }

    fn image() -> Image {
        Image::new(8, 8, (0..192).map(|i| ((i * 7) % 13) as f32 / 13.0).collect()).unwrap()
    }

    #[test]
    fn trace_length_is_iterations_plus_one() {
        let mut m = tiny(Ablation::B4);
        let t = iterative_predict(&mut m, &image(), InferenceOptions { iterations: 1, early_stop: false }, None).unwrap();
        assert_eq!(t.masks.len(), 2);
        assert_eq!(t.probabilities.len(), 2);
        assert!(t.metrics.is_none());
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let mut m = tiny(Ablation::B4);
        let opts = InferenceOptions { iterations: 0, early_stop: false };
        assert!(iterative_predict(&mut m, &image(), opts, None).is_err());
    }

    #[test]
    fn reruns_are_bit_identical() {
        let mut m = tiny(Ablation::B4);
        let truth = BinaryMask::from_fn(8, 8, |y, x| y > x);
        let a = iterative_predict(&mut m, &image(), InferenceOptions::default(), Some(&truth)).unwrap();
        let b = iterative_predict(&mut m, &image(), InferenceOptions::default(), Some(&truth)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.f1_curve().unwrap().len(), DEFAULT_ITERATIONS + 1);
    }

    #[test]
    fn early_stop_ends_at_a_fixed_point() {
        // Without inference feedback every round sees the same seed, so round 1 repeats round 0.
        let mut m = tiny(Ablation::B2);
        let full = iterative_predict(&mut m, &image(), InferenceOptions::default(), None).unwrap();
        assert!(full.masks.windows(2).all(|w| w[0] == w[1]));
        let t = iterative_predict(&mut m, &image(), InferenceOptions { iterations: 10, early_stop: true }, None).unwrap();
        assert!(t.converged_early);
        assert_eq!(t.masks.len(), 2);
    }

    #[test]
    fn batch_matches_single_image_traces() {
        let mut m = tiny(Ablation::B4);
        let a = image();
        let b = Image::new(8, 8, (0..192).map(|i| ((i * 5) % 11) as f32 / 11.0).collect()).unwrap();
        let batch = iterative_predict_batch(&mut m, &[&a, &b], 3, None).unwrap();
        let opts = InferenceOptions { iterations: 3, early_stop: false };
        let single = iterative_predict(&mut m, &b, opts, None).unwrap();
        assert_eq!(batch[1].masks, single.masks);
    }
}
