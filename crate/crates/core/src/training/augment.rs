//! Offline augmentation: every recipe index produces one deterministic variant
//! with its own sample id, so each variant carries its own feedback mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{resize_mask_nearest, Image, Sample};
use crate::error::Result;
use crate::mask_codec::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Identity,
    HorizontalFlip,
    VerticalFlip,
    Rotate90,
    Rotate180,
    Rotate270,
    /// Random crop of 70-95% of each side, resized back.
    Crop,
    /// Smooth random displacement of a 4x4 control grid.
    GridDistortion,
    /// Image only: random brightness and contrast.
    BrightnessContrast,
    /// Image only.
    Grayscale,
    /// Image only: up to four zeroed rectangles.
    CoarseDropout,
}

impl Recipe {
    pub const ALL: [Recipe; 11] = [
        Recipe::Identity,
        Recipe::HorizontalFlip,
        Recipe::VerticalFlip,
        Recipe::Rotate90,
        Recipe::Rotate180,
        Recipe::Rotate270,
        Recipe::Crop,
        Recipe::GridDistortion,
        Recipe::BrightnessContrast,
        Recipe::Grayscale,
        Recipe::CoarseDropout,
    ];

    /// Recipe `index` cycles through [`Recipe::ALL`]; indices past the end
    /// repeat the random recipes with fresh draws.
    pub fn from_index(index: usize) -> Recipe {
        Self::ALL[index % Self::ALL.len()]
    }
}

/// Variant id: the identity recipe keeps the original id.
pub fn variant_id(id: &str, index: usize) -> String {
    if index == 0 {
        id.to_string()
    } else {
        format!("{id}~aug{index}")
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn remap_image(img: &Image, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Image {
    let sw = img.width();
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                data[(c * h + y) * w + x] = plane[sy * sw + sx];
            }
        }
    }
    Image::new(h, w, data).expect("dims are positive")
}

fn remap_mask(mask: &BinaryMask, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| {
        let (sy, sx) = src(y, x);
        mask.get(sy, sx)
    })
}

/// Applies the same spatial map to image and mask.
fn spatial(sample: &Sample, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize) + Copy) -> (Image, BinaryMask) {
    (remap_image(&sample.image, h, w, src), remap_mask(&sample.mask, h, w, src))
}

/// Builds variant `index` of `sample`; `seed` fixes the random draws.
pub fn augment_offline(sample: &Sample, index: usize, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(sample.id.as_bytes()));
    rng.set_stream(index as u64);
    let (h, w) = sample.image.dims();
    let (image, mask) = match Recipe::from_index(index) {
        Recipe::Identity => (sample.image.clone(), sample.mask.clone()),
        Recipe::HorizontalFlip => spatial(sample, h, w, |y, x| (y, w - 1 - x)),
        Recipe::VerticalFlip => spatial(sample, h, w, |y, x| (h - 1 - y, x)),
        // Counter-clockwise: output (y, x) reads input (x, w - 1 - y).
        Recipe::Rotate90 => spatial(sample, w, h, |y, x| (x, w - 1 - y)),
        Recipe::Rotate180 => spatial(sample, h, w, |y, x| (h - 1 - y, w - 1 - x)),
        Recipe::Rotate270 => spatial(sample, w, h, |y, x| (h - 1 - x, y)),
        Recipe::Crop => {
            let ch = ((h as f64 * rng.random_range(0.7..0.95)) as usize).max(1);
            let cw = ((w as f64 * rng.random_range(0.7..0.95)) as usize).max(1);
            let oy = rng.random_range(0..=h - ch);
            let ox = rng.random_range(0..=w - cw);
            let (img, m) = spatial(sample, ch, cw, |y, x| (y + oy, x + ox));
            (img.resize_bilinear(h, w), resize_mask_nearest(&m, h, w))
        }
        Recipe::GridDistortion => {
            let grid: Vec<(f64, f64)> = (0..16)
                .map(|_| (rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)))
                .collect();
            let displace = |y: usize, x: usize| {
                let (fy, fx) = ((y as f64 + 0.5) / h as f64 * 3.0, (x as f64 + 0.5) / w as f64 * 3.0);
                let (gy, gx) = (fy.floor().min(2.0) as usize, fx.floor().min(2.0) as usize);
                let (ty, tx) = (fy - gy as f64, fx - gx as f64);
                let at = |j: usize, i: usize| grid[j * 4 + i];
                let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
                let top = lerp(at(gy, gx), at(gy, gx + 1), tx);
                let bottom = lerp(at(gy + 1, gx), at(gy + 1, gx + 1), tx);
                let (dy, dx) = lerp(top, bottom, ty);
                let sy = (y as f64 + dy * h as f64).round().clamp(0.0, (h - 1) as f64) as usize;
                let sx = (x as f64 + dx * w as f64).round().clamp(0.0, (w - 1) as f64) as usize;
                (sy, sx)
            };
            spatial(sample, h, w, displace)
        }
        Recipe::BrightnessContrast => {
            let brightness = rng.random_range(-0.15f32..0.15);
            let contrast = rng.random_range(0.8f32..1.2);
            let mut img = sample.image.clone();
            let mean = img.data().iter().sum::<f32>() / img.data().len() as f32;
            for v in img.data_mut() {
                *v = ((*v - mean) * contrast + mean + brightness).clamp(0.0, 1.0);
            }
            (img, sample.mask.clone())
        }
        Recipe::Grayscale => {
            let gray = sample.image.gray();
            let data = gray.values.repeat(3);
            (Image::new(h, w, data)?, sample.mask.clone())
        }
        Recipe::CoarseDropout => {
            let mut img = sample.image.clone();
            let holes = rng.random_range(1..=4);
            let plane = h * w;
            for _ in 0..holes {
                let hh = rng.random_range(1..=(h / 8).max(1));
                let hw = rng.random_range(1..=(w / 8).max(1));
                let y0 = rng.random_range(0..=h - hh);
                let x0 = rng.random_range(0..=w - hw);
                for c in 0..3 {
                    for y in y0..y0 + hh {
                        img.data_mut()[c * plane + y * w + x0..c * plane + y * w + x0 + hw].fill(0.0);
                    }
                }
            }
            (img, sample.mask.clone())
        }
    };
    Sample::new(variant_id(&sample.id, index), image, mask)
}

/// Expands every sample into the listed recipe variants.
pub fn expand_offline(samples: &[Sample], recipes: &[usize], seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(samples.len() * recipes.len());
    for s in samples {
        for &r in recipes {
            out.push(augment_offline(s, r, seed)?);
        }
    }
    Ok(out)
}
