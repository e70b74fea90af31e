//! Binary masks and the machinery that carries them between epochs:
//! run-length coding, Otsu initialization, max-pool downscaling and the
//! per-sample mask store.

mod otsu;
mod rle;
mod store;

pub use otsu::{luminance, otsu_threshold, GrayImage, OtsuResult};
pub use rle::{rle_decode, rle_encode, RleMask};
pub use store::{MaskStore, StoreEntry};

use std::path::Path;

use crate::error::{Error, Result};

/// A 2-D grid of `{0, 1}` values in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!("empty mask {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} values for a {height}x{width} mask",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMask(format!("value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dims must be positive");
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dims must be positive");
        Self {
            height,
            width,
            values: vec![1; height * width],
        }
    }

    /// Builds a mask from any predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(height > 0 && width > 0, "mask dims must be positive");
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, values }
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

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.values[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Pointwise OR of two equally sized masks.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "union of {:?} and {:?} masks",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a | b).collect(),
        })
    }

    /// Reads an 8-bit grayscale PNG; pixels above 127 become foreground.
    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        let values = img.into_raw().into_iter().map(|v| u8::from(v > 127)).collect();
        Self::new(h as usize, w as usize, values)
    }

    /// Writes the mask as a single-channel PNG with values 0 and 255.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        image::save_buffer(
            path,
            &buf,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Max-pools `mask` down to `target_height x target_width`.
///
/// An output pixel is set iff any pixel of its source window is set. Target
/// dims must divide the source dims.
pub fn downscale_mask(mask: &BinaryMask, target_height: usize, target_width: usize) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    if target_height == 0
        || target_width == 0
        || h % target_height != 0
        || w % target_width != 0
    {
        return Err(Error::Shape(format!(
            "cannot max-pool a {h}x{w} mask to {target_height}x{target_width}"
        )));
    }
    let (sy, sx) = (h / target_height, w / target_width);
    if sy == 1 && sx == 1 {
        return Ok(mask.clone());
    }
    let mut out = vec![0u8; target_height * target_width];
    for y in 0..h {
        let row = &mask.values[y * w..(y + 1) * w];
        let dst = &mut out[(y / sy) * target_width..(y / sy + 1) * target_width];
        for (x, &v) in row.iter().enumerate() {
            dst[x / sx] |= v;
        }
    }
    Ok(BinaryMask {
        height: target_height,
        width: target_width,
        values: out,
    })
}
