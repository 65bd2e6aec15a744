//! Image stacks, whitening, patch datasets, MNIST IDX parsing and the
//! checkpoint container.

mod checkpoint;
mod mnist;
mod whiten;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ArrayMeta, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
pub use whiten::{centered_frequency, fft_round_trip, whiten, whitening_filter, WhitenConfig};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

/// A stack of equally sized grayscale images, stored image after image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// JSON sidecar describing a raw image stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageStack {
    pub fn new(count: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != count * height * width {
            return Err(Error::dims(
                "ImageStack",
                format!("{count}x{height}x{width}"),
                format!("{} pixels", pixels.len()),
            ));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("image stack contains non-finite pixels"));
        }
        Ok(ImageStack {
            count,
            height,
            width,
            pixels,
        })
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.pixels[i * n..(i + 1) * n]
    }

    pub fn header(&self) -> StackHeader {
        StackHeader {
            count: self.count,
            height: self.height,
            width: self.width,
        }
    }

    /// Mean and (population) variance over every pixel of the stack.
    pub fn mean_variance(&self) -> (f64, f64) {
        let n = self.pixels.len().max(1) as f64;
        let mean = self.pixels.iter().sum::<f64>() / n;
        let var = self.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

/// `<stack path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads a raw little-endian f64 stack and its JSON sidecar.
pub fn read_stack(path: &Path) -> Result<ImageStack> {
    let side = sidecar_path(path);
    let header_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: StackHeader = serde_json::from_str(&header_text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.count * header.height * header.width * 8;
    if bytes.len() != expected {
        return Err(Error::Format {
            what: "image stack",
            offset: bytes.len().min(expected),
            message: format!(
                "sidecar declares {}x{}x{} ({expected} bytes), file has {} bytes",
                header.count,
                header.height,
                header.width,
                bytes.len()
            ),
        });
    }
    let pixels = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ImageStack::new(header.count, header.height, header.width, pixels)
}

/// Writes the raw stack and its sidecar.
pub fn write_stack(path: &Path, stack: &ImageStack) -> Result<()> {
    let mut bytes = Vec::with_capacity(stack.pixels.len() * 8);
    for p in &stack.pixels {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&stack.header())?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Dead-leaves images: occluding disks with power-law radii and uniform gray
/// levels, painted front to back until the canvas is covered.
///
/// Used as a stand-in natural-image ensemble with edges and an approximately
/// `1/f²` power spectrum.
pub fn synthesize_dead_leaves(count: usize, size: usize, rng: &mut Rng) -> Result<ImageStack> {
    if count == 0 || size == 0 {
        return Err(Error::invalid("dead leaves needs count >= 1 and size >= 1"));
    }
    let r_min = 1.0f64;
    let r_max = size as f64 / 4.0;
    let max_disks = 200 * size;
    let mut pixels = Vec::with_capacity(count * size * size);
    for _ in 0..count {
        let mut img = vec![f64::NAN; size * size];
        let mut uncovered = size * size;
        for _ in 0..max_disks {
            if uncovered == 0 {
                break;
            }
            // Inverse CDF of p(r) ∝ r^−3 on [r_min, r_max].
            let u = rng.uniform();
            let a = r_min.powi(-2);
            let b = r_max.powi(-2);
            let r = (a - u * (a - b)).powf(-0.5);
            let cx = rng.uniform() * size as f64;
            let cy = rng.uniform() * size as f64;
            let gray = rng.uniform();
            let y0 = (cy - r).floor().max(0.0) as usize;
            let y1 = ((cy + r).ceil() as usize).min(size);
            let x0 = (cx - r).floor().max(0.0) as usize;
            let x1 = ((cx + r).ceil() as usize).min(size);
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let p = &mut img[y * size + x];
                    if p.is_nan() && dx * dx + dy * dy <= r * r {
                        *p = gray;
                        uncovered -= 1;
                    }
                }
            }
        }
        pixels.extend(img.into_iter().map(|p| if p.is_nan() { 0.5 } else { p }));
    }
    ImageStack::new(count, size, size, pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Flattened patches (or digits) with a train/test tag per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    /// `(height, width)` of each sample when viewed as an image.
    pub patch_shape: (usize, usize),
    pub samples: Vec<Vector>,
    pub split: Vec<Split>,
    pub labels: Option<Vec<u8>>,
}

impl PatchDataset {
    pub fn new(patch_shape: (usize, usize), samples: Vec<Vector>) -> Result<Self> {
        let dim = patch_shape.0 * patch_shape.1;
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::dims("PatchDataset", dim, bad.len()));
        }
        let split = vec![Split::Train; samples.len()];
        Ok(PatchDataset {
            patch_shape,
            samples,
            split,
            labels: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.patch_shape.0 * self.patch_shape.1
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copies of the samples tagged `which`, in dataset order.
    pub fn samples_in(&self, which: Split) -> Vec<Vector> {
        self.samples
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn count_in(&self, which: Split) -> usize {
        self.split.iter().filter(|s| **s == which).count()
    }
}

/// `n` square patches from uniformly chosen images and positions, flattened row-major.
pub fn extract_patches(images: &ImageStack, size: usize, n: usize, rng: &mut Rng) -> Result<PatchDataset> {
    if size == 0 || size > images.height || size > images.width {
        return Err(Error::invalid(format!(
            "patch size {size} does not fit {}x{} images",
            images.height, images.width
        )));
    }
    if images.count == 0 {
        return Err(Error::invalid("cannot extract patches from an empty stack"));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.below(images.count);
        let top = rng.below(images.height - size + 1);
        let left = rng.below(images.width - size + 1);
        let img = images.image(i);
        let mut patch = Vec::with_capacity(size * size);
        for r in top..top + size {
            patch.extend_from_slice(&img[r * images.width + left..r * images.width + left + size]);
        }
        samples.push(Vector::from_vec(patch));
    }
    PatchDataset::new((size, size), samples)
}

/// Seeded shuffle that tags `round(test_fraction · n)` samples as test.
pub fn split(mut data: PatchDataset, test_fraction: f64, rng: &mut Rng) -> Result<PatchDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid(format!(
            "test_fraction {test_fraction} leaves an empty split for {n} samples"
        )));
    }
    let order = rng.permutation(n);
    data.split = vec![Split::Train; n];
    for &i in &order[..n_test] {
        data.split[i] = Split::Test;
    }
    Ok(data)
}
