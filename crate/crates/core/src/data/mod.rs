//! Images, samples, dataset manifests and the synthetic blob generator.

mod manifest;
mod synthetic;

pub use manifest::{known_split_sizes, load_manifest, load_sample, load_split, write_manifest, DatasetManifest, ManifestRecord, Split};
pub use synthetic::{ellipse_contains, generate_synthetic, write_dataset, Ellipse, SyntheticSet, SyntheticSpec};

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask_codec::{luminance, BinaryMask, GrayImage};
use crate::tensor::{Scalar, Tensor};

/// Planar RGB image (`3 x h x w`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "{} values for a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let len = self.height * self.width;
        &self.data[c * len..(c + 1) * len]
    }

    pub fn gray(&self) -> GrayImage {
        luminance(&self.data, self.height, self.width)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = f32::from(px[c]) / 255.0;
            }
        }
        Self::new(h, w, data)
    }

    /// Writes an 8-bit RGB PNG.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let plane = self.height * self.width;
        let mut buf = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                buf.push((self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        image::save_buffer(
            path,
            &buf,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resize with half-pixel centers; a no-op at the current size.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let (sh, sw) = (self.height, self.width);
        let fy = sh as f32 / height as f32;
        let fx = sw as f32 / width as f32;
        let coord = |o: usize, f: f32, n: usize| {
            let s = ((o as f32 + 0.5) * f - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f32)
        };
        let xs: Vec<_> = (0..width).map(|x| coord(x, fx, sw)).collect();
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            let src = self.plane(c);
            for y in 0..height {
                let (y0, y1, ty) = coord(y, fy, sh);
                for &(x0, x1, tx) in &xs {
                    let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
                    let bottom = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
                    data.push(top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        Image { height, width, data }
    }
}

/// Nearest-neighbour mask resize; a no-op at the current size.
pub fn resize_mask_nearest(mask: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    let (sh, sw) = mask.dims();
    if (sh, sw) == (height, width) {
        return mask.clone();
    }
    BinaryMask::from_fn(height, width, |y, x| {
        let sy = ((y * sh) / height).min(sh - 1);
        let sx = ((x * sw) / width).min(sw - 1);
        mask.get(sy, sx)
    })
}

/// One image with its ground truth, under a stable id that keys its feedback mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: BinaryMask) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::Shape(format!(
                "image {:?} and mask {:?} differ",
                image.dims(),
                mask.dims()
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}

/// Stacks images into an `(n, 3, h, w)` batch.
pub fn image_batch<F: Scalar>(images: &[&Image]) -> Result<Tensor<F>> {
    let (h, w) = images.first().map(|i| i.dims()).ok_or(Error::EmptyDataset)?;
    if let Some(bad) = images.iter().find(|i| i.dims() != (h, w)) {
        return Err(Error::Shape(format!("batch mixes {h}x{w} and {:?} images", bad.dims())));
    }
    let data = images
        .iter()
        .flat_map(|i| i.data.iter().map(|&v| F::from_f64_lossy(f64::from(v))))
        .collect();
    Tensor::from_vec([images.len(), 3, h, w], data)
}
