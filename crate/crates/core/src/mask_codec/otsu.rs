use std::cmp::Ordering;

use super::BinaryMask;
use crate::error::{Error, Result};

/// Single-channel image of finite intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("image contains non-finite values".into()));
        }
        Ok(Self { height, width, values })
    }
}

/// Converts planar RGB (`3 x h x w`) to luma with ITU-R BT.601 weights.
pub fn luminance(rgb: &[f32], height: usize, width: usize) -> GrayImage {
    let plane = height * width;
    assert_eq!(rgb.len(), 3 * plane, "expected three planes");
    let (r, rest) = rgb.split_at(plane);
    let (g, b) = rest.split_at(plane);
    let values = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    GrayImage { height, width, values }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtsuResult {
    pub mask: BinaryMask,
    /// Intensity separating background (`<=`) from foreground (`>`).
    pub threshold: f32,
    /// Histogram bin chosen as the last background bin; `None` for constant images.
    pub bin: Option<usize>,
}

/// Global Otsu threshold over a `levels`-bin histogram spanning the image's range.
///
/// Ties between equally good thresholds resolve to the smallest bin. A
/// constant image yields an empty mask and its constant as the threshold.
pub fn otsu_threshold(image: &GrayImage, levels: usize) -> OtsuResult {
    assert!(levels >= 2, "otsu needs at least two histogram levels");
    let (lo, hi) = image
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return OtsuResult {
            mask: BinaryMask::zeros(image.height, image.width),
            threshold: lo,
            bin: None,
        };
    }

    let range = f64::from(hi) - f64::from(lo);
    let bin_of = |v: f32| -> usize {
        let b = ((f64::from(v) - f64::from(lo)) / range * levels as f64).floor() as usize;
        b.min(levels - 1)
    };
    let bins: Vec<usize> = image.values.iter().map(|&v| bin_of(v)).collect();
    let mut hist = vec![0u64; levels];
    for &b in &bins {
        hist[b] += 1;
    }

    let best = best_split(&hist).expect("min and max fall in different bins");
    let threshold = (f64::from(lo) + (best + 1) as f64 * range / levels as f64) as f32;
    let values = bins.iter().map(|&b| u8::from(b > best)).collect();
    OtsuResult {
        mask: BinaryMask::new(image.height, image.width, values).expect("valid dims"),
        threshold,
        bin: Some(best),
    }
}

/// Between-class variance of splitting after bin `t`, kept as an exact fraction
/// `(n1*s0 - n0*s1)^2 / (n0*n1)` (proportional to `n0*n1*(mu0-mu1)^2`).
#[derive(Clone, Copy, Debug)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        match (self.num.checked_mul(other.den), other.num.checked_mul(self.den)) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => {
                let a = self.num as f64 / self.den as f64;
                let b = other.num as f64 / other.den as f64;
                a.partial_cmp(&b).unwrap_or(Ordering::Equal)
            }
        }
    }
}

/// Index of the last background bin maximizing between-class variance.
fn best_split(hist: &[u64]) -> Option<usize> {
    let n: u64 = hist.iter().sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &h)| i as u128 * u128::from(h)).sum();
    let mut n0 = 0u64;
    let mut s0 = 0u128;
    let mut best: Option<(usize, Score)> = None;
    for (t, &h) in hist.iter().enumerate().take(hist.len() - 1) {
        n0 += h;
        s0 += t as u128 * u128::from(h);
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = s - s0;
        let a = u128::from(n1) * s0;
        let b = u128::from(n0) * s1;
        let diff = a.abs_diff(b);
        let score = match diff.checked_mul(diff) {
            Some(num) => Score {
                num,
                den: u128::from(n0) * u128::from(n1),
            },
            // Fall back to a scaled representation for very large images.
            None => {
                let d = diff as f64;
                let v = d * d / (n0 as f64 * n1 as f64);
                Score {
                    num: v.min(u128::MAX as f64) as u128,
                    den: 1,
                }
            }
        };
        if best.as_ref().is_none_or(|(_, b)| score.cmp(b) == Ordering::Greater) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_gives_empty_mask() {
        let img = GrayImage::new(3, 3, vec![0.25; 9]).unwrap();
        let r = otsu_threshold(&img, 256);
        assert_eq!(r.mask, BinaryMask::zeros(3, 3));
        assert_eq!(r.threshold, 0.25);
        assert_eq!(r.bin, None);
    }

    #[test]
    fn bimodal_image_splits_between_modes() {
        let values: Vec<f32> = (0..100).map(|i| if i < 40 { 10.0 } else { 200.0 }).collect();
        let img = GrayImage::new(10, 10, values.clone()).unwrap();
        let r = otsu_threshold(&img, 256);
        assert!(r.threshold > 10.0 && r.threshold < 200.0);
        for (m, v) in r.mask.values().iter().zip(&values) {
            assert_eq!(*m == 1, *v == 200.0);
        }
    }

    /// Direct evaluation of `n0 * n1 * (mu0 - mu1)^2` per candidate from pixel lists.
    fn brute_force(pixels: &[u8]) -> usize {
        let mut best_t = None;
        let mut best = (0u128, 1u128);
        for t in 0..255u32 {
            let (bg, fg): (Vec<u8>, Vec<u8>) = pixels.iter().partition(|&&p| u32::from(p) <= t);
            if bg.is_empty() || fg.is_empty() {
                continue;
            }
            let (n0, n1) = (bg.len() as u128, fg.len() as u128);
            let s0: u128 = bg.iter().map(|&p| p as u128).sum();
            let s1: u128 = fg.iter().map(|&p| p as u128).sum();
            let d = (n1 * s0).abs_diff(n0 * s1);
            let cand = (d * d, n0 * n1);
            if best_t.is_none() || cand.0 * best.1 > best.0 * cand.1 {
                best = cand;
                best_t = Some(t as usize);
            }
        }
        best_t.unwrap()
    }

    #[test]
    fn matches_exhaustive_search_on_8bit_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut pixels: Vec<u8> = (0..32 * 32).map(|_| rng.random()).collect();
            // Pin the range so histogram bins coincide with 8-bit levels.
            pixels[0] = 0;
            pixels[1] = 255;
            let img = GrayImage::new(32, 32, pixels.iter().map(|&p| f32::from(p)).collect()).unwrap();
            let r = otsu_threshold(&img, 256);
            assert_eq!(r.bin, Some(brute_force(&pixels)));
        }
    }

    #[test]
    fn luminance_weights() {
        let g = luminance(&[1.0, 0.0, 0.0], 1, 1);
        assert!((g.values[0] - 0.299).abs() < 1e-7);
    }
}
