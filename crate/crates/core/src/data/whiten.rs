use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::data::ImageStack;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhitenConfig {
    /// Low-pass cutoff in cycles/image.
    pub f0: f64,
}

impl Default for WhitenConfig {
    fn default() -> Self {
        WhitenConfig { f0: 200.0 }
    }
}

/// Radial whitening / low-pass response `R(f) = f · exp(−(f/f0)^4)`.
pub fn whitening_filter(f: f64, f0: f64) -> f64 {
    f * (-(f / f0).powi(4)).exp()
}

/// Signed frequency of DFT bin `k` of an `n`-point transform, in `[−n/2, n/2)`.
pub fn centered_frequency(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Row/column 2-D FFT over a square buffer.
struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let n = self.size;
        let fft = if inverse { &self.inverse } else { &self.forward };
        fft.process(buf);
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = buf[r * n + c];
            }
            fft.process(&mut col);
            for r in 0..n {
                buf[r * n + c] = col[r];
            }
        }
        if inverse {
            let scale = 1.0 / (n * n) as f64;
            buf.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Forward then inverse 2-D transform with an optional per-bin gain.
fn filter_image(fft: &Fft2, pixels: &[f64], gain: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = pixels.iter().map(|p| Complex::new(*p, 0.0)).collect();
    fft.run(&mut buf, false);
    for (v, g) in buf.iter_mut().zip(gain) {
        *v *= g;
    }
    fft.run(&mut buf, true);
    buf.into_iter().map(|c| c.re).collect()
}

fn check_square_pow2(images: &ImageStack) -> Result<usize> {
    let (h, w) = (images.height, images.width);
    if h != w || !h.is_power_of_two() {
        return Err(Error::invalid(format!(
            "whitening needs square power-of-two images, got {h}x{w}"
        )));
    }
    Ok(h)
}

/// Round trip through the 2-D transform with unit gain.
pub fn fft_round_trip(images: &ImageStack) -> Result<ImageStack> {
    let n = check_square_pow2(images)?;
    let fft = Fft2::new(n);
    let gain = vec![1.0; n * n];
    let mut out = images.clone();
    for i in 0..images.count {
        let filtered = filter_image(&fft, images.image(i), &gain);
        out.image_mut(i).copy_from_slice(&filtered);
    }
    Ok(out)
}

/// Applies `R(f)` to every image in the frequency domain, then rescales the
/// whole stack to unit pixel variance.
pub fn whiten(images: &ImageStack, cfg: &WhitenConfig) -> Result<ImageStack> {
    if !(cfg.f0 > 0.0) || !cfg.f0.is_finite() {
        return Err(Error::invalid(format!("f0 must be positive, got {}", cfg.f0)));
    }
    let n = check_square_pow2(images)?;
    let fft = Fft2::new(n);
    let mut gain = vec![0.0; n * n];
    for r in 0..n {
        let fy = centered_frequency(r, n);
        for c in 0..n {
            let fx = centered_frequency(c, n);
            gain[r * n + c] = whitening_filter((fx * fx + fy * fy).sqrt(), cfg.f0);
        }
    }
    let mut out = images.clone();
    for i in 0..images.count {
        let filtered = filter_image(&fft, images.image(i), &gain);
        out.image_mut(i).copy_from_slice(&filtered);
    }
    let total = out.pixels.len() as f64;
    let mean = out.pixels.iter().sum::<f64>() / total;
    let var = out.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / total;
    if var > 0.0 {
        let inv_std = 1.0 / var.sqrt();
        out.pixels.iter_mut().for_each(|p| *p *= inv_std);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn noise_stack(count: usize, size: usize, seed: u64) -> ImageStack {
        let mut rng = Rng::new(seed, 0);
        let pixels = (0..count * size * size).map(|_| 3.0 + rng.standard_normal()).collect();
        ImageStack::new(count, size, size, pixels).unwrap()
    }

    #[test]
    fn filter_values() {
        assert_eq!(whitening_filter(0.0, 200.0), 0.0);
        let at_cutoff = whitening_filter(200.0, 200.0);
        assert!((at_cutoff - 200.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert!((at_cutoff - 73.576).abs() < 1e-3);
        assert!(whitening_filter(141.0, 200.0) > whitening_filter(100.0, 200.0));
        assert!(whitening_filter(141.0, 200.0) > whitening_filter(199.0, 200.0));
    }

    #[test]
    fn filter_peak_location() {
        // dR/df = 0 at f = f0 · 4^(−1/4).
        let peak = 200.0 * 0.25f64.powf(0.25);
        assert!((peak - 141.421).abs() < 1e-3);
        let r = |f| whitening_filter(f, 200.0);
        assert!(r(peak) > r(peak - 0.5) && r(peak) > r(peak + 0.5));
    }

    #[test]
    fn frequencies_are_centered() {
        let f: Vec<f64> = (0..8).map(|k| centered_frequency(k, 8)).collect();
        assert_eq!(f, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn round_trip_reproduces_input() {
        let stack = noise_stack(2, 16, 1);
        let back = fft_round_trip(&stack).unwrap();
        let err = stack
            .pixels
            .iter()
            .zip(&back.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn whitened_stack_has_zero_mean_unit_variance() {
        let stack = noise_stack(3, 32, 2);
        let out = whiten(&stack, &WhitenConfig { f0: 12.0 }).unwrap();
        for i in 0..out.count {
            let img = out.image(i);
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            assert!(mean.abs() < 1e-9, "image {i} mean {mean}");
        }
        let n = out.pixels.len() as f64;
        let mean = out.pixels.iter().sum::<f64>() / n;
        let var = out.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let stack = ImageStack::new(1, 12, 12, vec![0.0; 144]).unwrap();
        assert!(whiten(&stack, &WhitenConfig::default()).is_err());
        let stack = ImageStack::new(1, 8, 16, vec![0.0; 128]).unwrap();
        assert!(whiten(&stack, &WhitenConfig::default()).is_err());
    }
}
