use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::noise::{colored_noise, mix_signals, NoiseColor, MIN_NOISE_LEN};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub rows: usize,
    pub cols: usize,
}

impl ImageShape {
    pub const MNIST: ImageShape = ImageShape { rows: 28, cols: 28 };

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A concrete corruption with fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistortionKind {
    /// Additive `Normal(0, sigma)` noise, clipped to `[0, 1]`.
    GaussianNoise { sigma: f64 },
    /// Additive `Uniform[-amplitude, amplitude]` noise, clipped to `[0, 1]`.
    UniformNoise { amplitude: f64 },
    /// Gaussian blur with standard deviation `sigma` pixels.
    Blur { sigma: f64 },
    /// Rotation about the image center, counter-clockwise in degrees.
    Rotation { degrees: f64 },
    /// Additive colored noise at `volume_ratio` of the signal's RMS level.
    ColoredNoise {
        color: NoiseColor,
        volume_ratio: f64,
    },
}

impl DistortionKind {
    /// Rejects zero-strength (identity) and non-finite parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!("{what} must be positive and finite, got {v}")))
        };
        match *self {
            DistortionKind::GaussianNoise { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad("noise sigma", sigma)
            }
            DistortionKind::UniformNoise { amplitude }
                if !(amplitude > 0.0 && amplitude.is_finite()) =>
            {
                bad("noise amplitude", amplitude)
            }
            DistortionKind::Blur { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad("blur sigma", sigma)
            }
            DistortionKind::Rotation { degrees } if degrees == 0.0 || !degrees.is_finite() => Err(
                Error::InvalidArgument(format!("rotation must be non-zero and finite, got {degrees}")),
            ),
            DistortionKind::ColoredNoise { volume_ratio, .. }
                if !(volume_ratio > 0.0 && volume_ratio <= 1.0) =>
            {
                Err(Error::InvalidArgument(format!(
                    "volume ratio must be in (0, 1], got {volume_ratio}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_shape(&self) -> bool {
        matches!(self, DistortionKind::Blur { .. } | DistortionKind::Rotation { .. })
    }
}

/// Applies `kind` to one input vector. Blur and rotation need `shape`; any
/// distortion of an image-valued input (`shape` given) is clipped to `[0, 1]`.
pub fn distort(
    input: &[f64],
    kind: &DistortionKind,
    shape: Option<ImageShape>,
    seed: u64,
) -> Result<Vec<f64>> {
    kind.validate()?;
    if let Some(s) = shape {
        if s.len() != input.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} shape for input of length {}",
                s.rows,
                s.cols,
                input.len()
            )));
        }
    }
    let image_shape = || {
        shape.ok_or_else(|| {
            Error::ShapeMismatch(format!("{kind:?} needs a 2-D image shape"))
        })
    };
    let mut r = rng::stream(seed, rng::streams::DISTORTION);
    let mut out = match *kind {
        DistortionKind::GaussianNoise { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            input.iter().map(|x| x + normal.sample(&mut r)).collect()
        }
        DistortionKind::UniformNoise { amplitude } => input
            .iter()
            .map(|x| x + r.random_range(-amplitude..=amplitude))
            .collect(),
        DistortionKind::Blur { sigma } => gaussian_blur(input, image_shape()?, sigma),
        DistortionKind::Rotation { degrees } => rotate(input, image_shape()?, degrees),
        DistortionKind::ColoredNoise {
            color,
            volume_ratio,
        } => {
            let len = input.len().max(MIN_NOISE_LEN).next_power_of_two();
            let noise_seed = r.random::<u64>();
            let mut noise = colored_noise(len, color, noise_seed)?;
            noise.truncate(input.len());
            mix_signals(input, &noise, volume_ratio)?
        }
    };
    let pixel_noise = matches!(
        kind,
        DistortionKind::GaussianNoise { .. } | DistortionKind::UniformNoise { .. }
    );
    if shape.is_some() || pixel_noise {
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur, kernel truncated at `3 sigma`, reflect padding.
fn gaussian_blur(input: &[f64], shape: ImageShape, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let ImageShape { rows, cols } = shape;
    let mut horizontal = vec![0.0; input.len()];
    for y in 0..rows {
        for x in 0..cols {
            horizontal[y * cols + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * input[y * cols + reflect(x as isize + j as isize - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; input.len()];
    for y in 0..rows {
        for x in 0..cols {
            out[y * cols + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * horizontal[reflect(y as isize + j as isize - radius, rows) * cols + x])
                .sum();
        }
    }
    out
}

/// Bilinear rotation about the image center; samples outside the image read 0.
fn rotate(input: &[f64], shape: ImageShape, degrees: f64) -> Vec<f64> {
    let ImageShape { rows, cols } = shape;
    let theta = degrees.rem_euclid(360.0).to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let pixel = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= rows as isize || x >= cols as isize {
            0.0
        } else {
            input[y as usize * cols + x as usize]
        }
    };
    let mut out = vec![0.0; input.len()];
    for y in 0..rows {
        for x in 0..cols {
            // Inverse map: rotate the output coordinate by -theta. Image rows
            // grow downward, so a counter-clockwise turn flips the sin sign.
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[y * cols + x] = (1.0 - fy) * ((1.0 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1))
                + fy * ((1.0 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1));
        }
    }
    out
}

/// A distortion family with a sampling range for its strength parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistortionRange {
    GaussianNoise { sigma: (f64, f64) },
    UniformNoise { amplitude: (f64, f64) },
    Blur { sigma: (f64, f64) },
    /// Rotation magnitude range; the sign is drawn uniformly.
    Rotation { degrees: (f64, f64) },
    ColoredNoise {
        colors: Vec<NoiseColor>,
        volume_ratio: (f64, f64),
    },
}

impl DistortionRange {
    /// Blur, rotation and additive Gaussian noise on `[0, 1]` images.
    pub fn image_defaults() -> Vec<DistortionRange> {
        vec![
            DistortionRange::Blur { sigma: (0.5, 2.0) },
            DistortionRange::Rotation {
                degrees: (15.0, 60.0),
            },
            DistortionRange::GaussianNoise { sigma: (0.1, 0.5) },
        ]
    }

    /// White, pink and brown noise at 10% to 50% of the signal level.
    pub fn frame_defaults() -> Vec<DistortionRange> {
        vec![DistortionRange::ColoredNoise {
            colors: NoiseColor::ALL.to_vec(),
            volume_ratio: (0.1, 0.5),
        }]
    }

    pub fn validate(&self) -> Result<()> {
        let range = |what: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && lo <= hi && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{what} range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )))
            }
        };
        match self {
            DistortionRange::GaussianNoise { sigma } => range("noise sigma", *sigma),
            DistortionRange::UniformNoise { amplitude } => range("noise amplitude", *amplitude),
            DistortionRange::Blur { sigma } => range("blur sigma", *sigma),
            DistortionRange::Rotation { degrees } => range("rotation", *degrees),
            DistortionRange::ColoredNoise {
                colors,
                volume_ratio,
            } => {
                if colors.is_empty() {
                    return Err(Error::InvalidArgument("no noise colors".into()));
                }
                range("volume ratio", *volume_ratio)?;
                if volume_ratio.1 > 1.0 {
                    return Err(Error::InvalidArgument("volume ratio above 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> DistortionKind {
        let mut draw = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        match self {
            DistortionRange::GaussianNoise { sigma } => DistortionKind::GaussianNoise {
                sigma: draw(*sigma),
            },
            DistortionRange::UniformNoise { amplitude } => DistortionKind::UniformNoise {
                amplitude: draw(*amplitude),
            },
            DistortionRange::Blur { sigma } => DistortionKind::Blur {
                sigma: draw(*sigma),
            },
            DistortionRange::Rotation { degrees } => {
                let magnitude = draw(*degrees);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                DistortionKind::Rotation {
                    degrees: sign * magnitude,
                }
            }
            DistortionRange::ColoredNoise {
                colors,
                volume_ratio,
            } => {
                let volume_ratio = draw(*volume_ratio);
                let color = colors[rng.random_range(0..colors.len())];
                DistortionKind::ColoredNoise {
                    color,
                    volume_ratio,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digit() -> Vec<f64> {
        // A filled plus sign on a 28 x 28 canvas.
        let mut img = vec![0.0; 784];
        for i in 6..22 {
            img[14 * 28 + i] = 1.0;
            img[i * 28 + 14] = 0.8;
        }
        img
    }

    #[test]
    fn blur_preserves_constants() {
        let img = vec![0.37; 784];
        let out = distort(&img, &DistortionKind::Blur { sigma: 1.7 }, Some(ImageShape::MNIST), 0)
            .unwrap();
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-9));
    }

    #[test]
    fn blur_conserves_mass_away_from_edges() {
        let img = digit();
        let out = distort(&img, &DistortionKind::Blur { sigma: 1.0 }, Some(ImageShape::MNIST), 0)
            .unwrap();
        let (a, b): (f64, f64) = (img.iter().sum(), out.iter().sum());
        assert!((a - b).abs() < 1e-9);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn full_turn_is_identity() {
        let img = digit();
        let out = distort(
            &img,
            &DistortionKind::Rotation { degrees: 360.0 },
            Some(ImageShape::MNIST),
            0,
        )
        .unwrap();
        for (a, b) in img.iter().zip(&out) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 3x3: the right-middle pixel goes to top-middle on a CCW quarter turn.
        let mut img = vec![0.0; 9];
        img[5] = 1.0;
        let shape = ImageShape { rows: 3, cols: 3 };
        let out = distort(&img, &DistortionKind::Rotation { degrees: 90.0 }, Some(shape), 0)
            .unwrap();
        assert!((out[1] - 1.0).abs() < 1e-12, "{out:?}");
        assert!(out.iter().sum::<f64>() - 1.0 < 1e-12);
    }

    #[test]
    fn gaussian_noise_changes_pixels_and_clips() {
        let img = digit();
        let kind = DistortionKind::GaussianNoise { sigma: 0.3 };
        let out = distort(&img, &kind, Some(ImageShape::MNIST), 4).unwrap();
        assert!(img.iter().zip(&out).filter(|(a, b)| a != b).count() > 300);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out, distort(&img, &kind, Some(ImageShape::MNIST), 4).unwrap());
    }

    #[test]
    fn colored_noise_distortion_keeps_length() {
        let frame: Vec<f64> = (0..286).map(|i| (i as f64 * 0.1).sin()).collect();
        let kind = DistortionKind::ColoredNoise {
            color: NoiseColor::Pink,
            volume_ratio: 0.3,
        };
        let out = distort(&frame, &kind, None, 1).unwrap();
        assert_eq!(out.len(), frame.len());
        assert_ne!(out, frame);
    }

    #[test]
    fn validation() {
        let img = digit();
        assert!(distort(&img, &DistortionKind::Blur { sigma: 1.0 }, None, 0).is_err());
        assert!(distort(&img, &DistortionKind::GaussianNoise { sigma: 0.0 }, None, 0).is_err());
        assert!(DistortionKind::Rotation { degrees: 0.0 }.validate().is_err());
        assert!(DistortionRange::Blur { sigma: (0.0, 1.0) }.validate().is_err());
        assert!(DistortionRange::Blur { sigma: (2.0, 1.0) }.validate().is_err());
        for r in DistortionRange::image_defaults()
            .iter()
            .chain(&DistortionRange::frame_defaults())
        {
            r.validate().unwrap();
        }
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let mut r = rng::stream(0, 0);
        let rot = DistortionRange::Rotation {
            degrees: (15.0, 60.0),
        };
        let mut signs = (0, 0);
        for _ in 0..200 {
            match rot.sample(&mut r) {
                DistortionKind::Rotation { degrees } => {
                    assert!((15.0..60.0).contains(&degrees.abs()));
                    if degrees > 0.0 {
                        signs.0 += 1
                    } else {
                        signs.1 += 1
                    }
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(signs.0 > 50 && signs.1 > 50);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }
}
