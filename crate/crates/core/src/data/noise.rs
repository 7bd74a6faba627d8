use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::rng;

/// Mean and standard deviation of the "Gaussian" noise images, before
/// clipping to `[0, 1]`.
pub const GAUSSIAN_IMAGE_MEAN: f64 = 0.5;
pub const GAUSSIAN_IMAGE_STD: f64 = 0.25;

/// Smallest signal length [`colored_noise`] accepts.
pub const MIN_NOISE_LEN: usize = 64;

fn square_shape(d: usize) -> Option<ImageShape> {
    let side = (d as f64).sqrt().round() as usize;
    (side * side == d).then_some(ImageShape {
        rows: side,
        cols: side,
    })
}

fn noise_dataset(inputs: Array2<f64>, provenance: String) -> Dataset {
    let shape = square_shape(inputs.ncols());
    let mut ds = Dataset::unlabeled(inputs, provenance).expect("generated values are finite");
    ds.shape = shape;
    ds
}

/// `n` images of iid `Normal(0.5, 0.25)` pixels clipped to `[0, 1]`.
pub fn gen_gaussian_images(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, rng::streams::OOD_GAUSSIAN);
    let normal = Normal::new(GAUSSIAN_IMAGE_MEAN, GAUSSIAN_IMAGE_STD).expect("valid params");
    let inputs = Array2::from_shape_simple_fn((n, d), || normal.sample(&mut r).clamp(0.0, 1.0));
    noise_dataset(inputs, format!("gaussian-noise(seed={seed})"))
}

/// `n` images of iid `Uniform[0, 1]` pixels.
pub fn gen_uniform_images(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, rng::streams::OOD_UNIFORM);
    let inputs = Array2::from_shape_simple_fn((n, d), || r.random::<f64>());
    noise_dataset(inputs, format!("uniform-noise(seed={seed})"))
}

/// Noise whose power spectral density falls off as `1 / f^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

impl NoiseColor {
    pub fn exponent(self) -> u8 {
        match self {
            NoiseColor::White => 0,
            NoiseColor::Pink => 1,
            NoiseColor::Brown => 2,
        }
    }

    pub const ALL: [NoiseColor; 3] = [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown];
}

impl TryFrom<u8> for NoiseColor {
    type Error = Error;

    fn try_from(beta: u8) -> Result<Self> {
        match beta {
            0 => Ok(NoiseColor::White),
            1 => Ok(NoiseColor::Pink),
            2 => Ok(NoiseColor::Brown),
            other => Err(Error::InvalidArgument(format!(
                "spectral exponent must be 0, 1 or 2, got {other}"
            ))),
        }
    }
}

/// Spectrally shaped Gaussian noise with unit variance.
///
/// White Gaussian noise is transformed, each bin at frequency index `k` is
/// scaled by `k^(-beta/2)` (so power goes as `k^-beta`), the DC bin is
/// zeroed, and the result is transformed back. `length` must be a power of
/// two no smaller than [`MIN_NOISE_LEN`].
pub fn colored_noise(length: usize, color: NoiseColor, seed: u64) -> Result<Vec<f64>> {
    if length < MIN_NOISE_LEN || !length.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "noise length must be a power of two >= {MIN_NOISE_LEN}, got {length}"
        )));
    }
    let mut r = rng::stream(seed, rng::streams::COLORED_NOISE);
    let mut buf: Vec<Complex<f64>> = (0..length)
        .map(|_| Complex::new(StandardNormal.sample(&mut r), 0.0))
        .collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(length).process(&mut buf);

    let half_exponent = color.exponent() as f64 / 2.0;
    buf[0] = Complex::new(0.0, 0.0);
    for (k, bin) in buf.iter_mut().enumerate().skip(1) {
        // Bins k and length - k hold the same physical frequency.
        let freq = k.min(length - k) as f64;
        *bin *= freq.powf(-half_exponent);
    }

    planner.plan_fft_inverse(length).process(&mut buf);
    let signal: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = signal.iter().sum::<f64>() / length as f64;
    let std = (signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / length as f64).sqrt();
    Ok(signal.into_iter().map(|x| (x - mean) / std).collect())
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// `clean + volume_ratio * noise'`, where `noise'` is `noise` rescaled to the
/// RMS level of `clean` (unit RMS when `clean` is silent). The added noise
/// therefore sits `-20 log10(volume_ratio)` dB below the clean signal.
pub fn mix_signals(clean: &[f64], noise: &[f64], volume_ratio: f64) -> Result<Vec<f64>> {
    if clean.len() != noise.len() {
        return Err(Error::LengthMismatch {
            what: "clean vs noise",
            left: clean.len(),
            right: noise.len(),
        });
    }
    if !(volume_ratio > 0.0 && volume_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "volume ratio must be in (0, 1], got {volume_ratio}"
        )));
    }
    let noise_rms = rms(noise);
    if noise_rms == 0.0 || !noise_rms.is_finite() {
        return Err(Error::InvalidArgument("noise has zero RMS".into()));
    }
    let clean_rms = rms(clean);
    let reference = if clean_rms > 0.0 { clean_rms } else { 1.0 };
    let gain = volume_ratio * reference / noise_rms;
    Ok(clean.iter().zip(noise).map(|(c, n)| c + gain * n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_images() {
        let ds = gen_gaussian_images(128, 784, 1);
        let mean = ds.inputs.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(ds.is_unit_range());
        assert_eq!(ds, gen_gaussian_images(128, 784, 1));
        assert_eq!(ds.shape, Some(ImageShape { rows: 28, cols: 28 }));
        assert!(ds.labels.is_none());
    }

    #[test]
    fn uniform_images() {
        let ds = gen_uniform_images(128, 784, 1);
        let mean = ds.inputs.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(ds.is_unit_range());
        assert_eq!(ds, gen_uniform_images(128, 784, 1));
    }

    #[test]
    fn uniform_images_pass_ks() {
        let ds = gen_uniform_images(10, 1000, 3);
        let mut v: Vec<f64> = ds.inputs.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
            .fold(0.0, f64::max);
        // Asymptotic critical value at alpha = 0.01.
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let x = colored_noise(4096, NoiseColor::White, 2).unwrap();
        let n = x.len();
        let lag1 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1) as f64;
        assert!(lag1.abs() < 0.05, "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn colored_noise_is_normalized_and_seeded() {
        for color in NoiseColor::ALL {
            let x = colored_noise(1024, color, 5).unwrap();
            let mean = x.iter().sum::<f64>() / 1024.0;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1024.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
            assert_eq!(x, colored_noise(1024, color, 5).unwrap());
        }
    }

    #[test]
    fn colored_noise_rejects_bad_lengths() {
        assert!(colored_noise(100, NoiseColor::Pink, 0).is_err());
        assert!(colored_noise(32, NoiseColor::Pink, 0).is_err());
        assert!(NoiseColor::try_from(3).is_err());
        assert_eq!(NoiseColor::try_from(2).unwrap(), NoiseColor::Brown);
    }

    #[test]
    fn mixing() {
        let noise: Vec<f64> = (0..64).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let zero = vec![0.0; 64];
        let out = mix_signals(&zero, &noise, 0.3).unwrap();
        let gain = 0.3 / rms(&noise);
        for (o, n) in out.iter().zip(&noise) {
            assert!((o - gain * n).abs() < 1e-15);
        }

        let clean: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = mix_signals(&clean, &noise, 0.3).unwrap();
        let gain = 0.3 * rms(&clean) / rms(&noise);
        let added: Vec<f64> = out.iter().zip(&clean).map(|(o, c)| o - c).collect();
        assert!((rms(&added) / rms(&clean) - 0.3).abs() < 1e-12);
        for ((o, n), c) in out.iter().zip(&noise).zip(&clean) {
            assert!((o - gain * n - c).abs() < 1e-12);
        }

        assert!(mix_signals(&clean, &noise[..10], 0.3).is_err());
        assert!(mix_signals(&clean, &zero, 0.3).is_err());
        assert!(mix_signals(&clean, &noise, 0.0).is_err());
        assert!(mix_signals(&clean, &noise, 1.5).is_err());
    }
}
