use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, DatasetManifest, ManifestRecord, Split};
use super::{Image, Sample};
use crate::error::{Error, Result};
use crate::mask_codec::BinaryMask;

/// Noisy backgrounds with one to four bright elliptical blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    /// Side of the square images.
    pub size: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train: 200,
            test: 50,
            size: 64,
            min_blobs: 1,
            max_blobs: 4,
            noise: 0.08,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("synthetic size {} is below 8", self.size)));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return Err(Error::Config(format!(
                "blob range {}..={} must be non-empty and start at 1 or more",
                self.min_blobs, self.max_blobs
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be a non-negative number", self.noise)));
        }
        if self.train + self.test == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }
}

/// A rotated ellipse in pixel coordinates (pixel `(y, x)` has its center at `(y + 0.5, x + 0.5)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    /// Rotation in radians.
    pub angle: f64,
}

pub fn ellipse_contains(e: &Ellipse, y: f64, x: f64) -> bool {
    let (s, c) = e.angle.sin_cos();
    let (dy, dx) = (y - e.cy, x - e.cx);
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    (u / e.rx).powi(2) + (v / e.ry).powi(2) <= 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// The blobs drawn into each sample, by id.
    pub blobs: BTreeMap<String, Vec<Ellipse>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let mut set = SyntheticSet {
        train: Vec::with_capacity(spec.train),
        test: Vec::with_capacity(spec.test),
        blobs: BTreeMap::new(),
    };
    for index in 0..spec.train + spec.test {
        let (sample, blobs) = draw(spec, index)?;
        set.blobs.insert(sample.id.clone(), blobs);
        if index < spec.train {
            set.train.push(sample);
        } else {
            set.test.push(sample);
        }
    }
    Ok(set)
}

fn draw(spec: &SyntheticSpec, index: usize) -> Result<(Sample, Vec<Ellipse>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = spec.size;
    let size = n as f64;

    let count = rng.random_range(spec.min_blobs..=spec.max_blobs);
    let blobs: Vec<Ellipse> = (0..count)
        .map(|_| Ellipse {
            cy: rng.random_range(0.2..0.8) * size,
            cx: rng.random_range(0.2..0.8) * size,
            ry: rng.random_range(0.07..0.2) * size,
            rx: rng.random_range(0.07..0.2) * size,
            angle: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect();
    let mask = BinaryMask::from_fn(n, n, |y, x| {
        blobs
            .iter()
            .any(|e| ellipse_contains(e, y as f64 + 0.5, x as f64 + 0.5))
    });

    let background: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.35));
    let lift: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.55));
    let (gy, gx) = (rng.random_range(-0.1f32..0.1), rng.random_range(-0.1f32..0.1));
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = vec![0.0f32; 3 * n * n];
    for c in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let ramp = gy * (y as f32 / n as f32 - 0.5) + gx * (x as f32 / n as f32 - 0.5);
                let fg = if mask.get(y, x) { lift[c] } else { 0.0 };
                let v = background[c] + ramp + fg + noise.sample(&mut rng);
                data[(c * n + y) * n + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    let image = Image::new(n, n, data)?;
    let sample = Sample::new(format!("synth-{index:05}"), image, mask)?;
    Ok((sample, blobs))
}

/// Writes images, masks and a manifest under `dir`; returns the manifest.
pub fn write_dataset(set: &SyntheticSet, dir: &Path, name: &str) -> Result<DatasetManifest> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let size = set
        .train
        .iter()
        .chain(&set.test)
        .map(|s| s.image.height())
        .next()
        .ok_or(Error::EmptyDataset)?;
    let mut records = Vec::new();
    for (split, samples) in [(Split::Train, &set.train), (Split::Test, &set.test)] {
        for s in samples {
            let image = Path::new("images").join(format!("{}.png", s.id));
            let mask = Path::new("masks").join(format!("{}.png", s.id));
            s.image.write_png(&dir.join(&image))?;
            s.mask.write_png(&dir.join(&mask))?;
            records.push(ManifestRecord {
                sample_id: s.id.clone(),
                image,
                mask,
                split,
            });
        }
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        target_size: size,
        records,
        root: dir.to_path_buf(),
    };
    manifest.validate()?;
    write_manifest(&manifest, &dir.join("manifest.txt"))?;
    Ok(manifest)
}
