//! Image-tensor arithmetic shared by all optimizers: L-infinity ball
//! projection, 8-bit grid quantization, and finite-difference gradient
//! checking.
//!
//! Everything here is pure and double-precision. Perturbation budgets and
//! step sizes are constrained to multiples of 1/255 so that attack images
//! survive 8-bit file storage without silently leaving the budget ball.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Intensity levels per channel in 8-bit storage.
pub const GRID_LEVELS: f64 = 255.0;

/// Absolute slack when deciding whether a value sits on the 1/255 grid.
const GRID_TOL: f64 = 1e-9;

/// An H×W×C image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds a tensor, validating length and the `[0, 1]` range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("shape", "all dimensions must be positive"));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::invalid(
                "data",
                format!("length {} does not match H*W*C = {expected}", data.len()),
            ));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(
                "data",
                format!("element {bad} outside [0, 1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor without range validation. Only for internal probes
    /// (finite differences step slightly outside `[0, 1]`).
    pub(crate) fn from_raw_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Self {
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Constant-valued image. `value` must lie in `[0, 1]`.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// All-ones (white) image.
    pub fn white(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 1.0).expect("1.0 is in range")
    }

    /// Mid-gray image at the grid point 128/255.
    pub fn mid_gray(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 128.0 / GRID_LEVELS).expect("in range")
    }

    /// Uniform-noise image drawn on the 1/255 grid from a seeded stream.
    pub fn seeded_noise(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..height * width * channels)
            .map(|_| rng.gen_range(0..=255u32) as f64 / GRID_LEVELS)
            .collect();
        Self::from_raw_unchecked(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// True when every element is (within tolerance) a multiple of 1/255.
    pub fn is_grid_aligned(&self) -> bool {
        self.data.iter().all(|&v| {
            let scaled = v * GRID_LEVELS;
            (scaled - scaled.round()).abs() <= GRID_TOL
        })
    }

    /// Quantized 8-bit bytes, row-major RGB interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * GRID_LEVELS).round().clamp(0.0, GRID_LEVELS) as u8)
            .collect()
    }

    /// Hex SHA-256 over the quantized byte stream; stable across runs.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(
            [
                (self.height as u32).to_le_bytes(),
                (self.width as u32).to_le_bytes(),
                (self.channels as u32).to_le_bytes(),
            ]
            .concat(),
        );
        hasher.update(self.to_bytes());
        hex::encode(hasher.finalize())
    }

    fn same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Gradient (or any unbounded per-pixel field) with the same layout as an
/// [`ImageTensor`] but no range invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl GradTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(
                "data",
                format!(
                    "length {} does not match H*W*C = {}",
                    data.len(),
                    height * width * channels
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise accumulation; shapes must match.
    pub fn accumulate(&mut self, other: &GradTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// L-infinity perturbation budget. `epsilon` and `step_size` are multiples
/// of 1/255 so every PGD iterate stays exactly representable in 8 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinfBudget {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
}

impl LinfBudget {
    /// Validates range, grid alignment, and `step_size <= epsilon`.
    pub fn new(epsilon: f64, step_size: f64, steps: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid("epsilon", "must lie in (0, 1]"));
        }
        if !is_grid_multiple(epsilon) {
            return Err(Error::invalid(
                "epsilon",
                format!("{epsilon} is not a multiple of 1/255"),
            ));
        }
        if !(step_size > 0.0 && step_size <= epsilon) {
            return Err(Error::invalid("step_size", "must lie in (0, epsilon]"));
        }
        if !is_grid_multiple(step_size) {
            return Err(Error::invalid(
                "step_size",
                format!("{step_size} is not a multiple of 1/255"),
            ));
        }
        Ok(Self {
            epsilon,
            step_size,
            steps,
        })
    }

    /// Budget expressed in integer 1/255 units; always grid-exact.
    pub fn from_grid(epsilon_255: u32, step_255: u32, steps: usize) -> Result<Self> {
        Self::new(
            f64::from(epsilon_255) / GRID_LEVELS,
            f64::from(step_255) / GRID_LEVELS,
            steps,
        )
    }
}

impl Default for LinfBudget {
    /// The reference configuration: epsilon 32/255, step 1/255, 3000 steps.
    fn default() -> Self {
        Self::from_grid(32, 1, 3000).expect("reference budget is grid-aligned")
    }
}

fn is_grid_multiple(v: f64) -> bool {
    let scaled = v * GRID_LEVELS;
    (scaled - scaled.round()).abs() <= GRID_TOL
}

/// Projects `x` onto the L-infinity ball of radius `epsilon` around
/// `origin`, then clamps to `[0, 1]`. Elements already satisfying both
/// constraints pass through unchanged.
pub fn project_linf_ball(
    x: &ImageTensor,
    origin: &ImageTensor,
    epsilon: f64,
) -> Result<ImageTensor> {
    x.same_shape(origin)?;
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon", "must be finite and nonnegative"));
    }
    let data = x
        .data
        .iter()
        .zip(&origin.data)
        .map(|(&v, &o)| v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0))
        .collect();
    Ok(ImageTensor::from_raw_unchecked(
        x.height, x.width, x.channels, data,
    ))
}

/// Maximum absolute elementwise difference.
pub fn linf_distance(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Rounds every element to the nearest 1/255 grid point, i.e. the value it
/// would take after being written to and re-read from an 8-bit file.
/// Idempotent; the identity on grid-aligned inputs.
pub fn quantize_roundtrip(x: &ImageTensor) -> ImageTensor {
    let data = x
        .data
        .iter()
        .map(|&v| (v * GRID_LEVELS).round().clamp(0.0, GRID_LEVELS) / GRID_LEVELS)
        .collect();
    ImageTensor::from_raw_unchecked(x.height, x.width, x.channels, data)
}

/// Central-difference gradient of a scalar function of the image:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per element.
///
/// This is the independent oracle for every analytic gradient in the crate;
/// it must never share code with the closed-form paths it checks.
pub fn finite_diff_grad<F>(f: F, x: &ImageTensor, h: f64) -> Result<GradTensor>
where
    F: Fn(&ImageTensor) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid("h", "must be positive"));
    }
    let mut grad = vec![0.0; x.data.len()];
    let mut probe = x.data.clone();
    for i in 0..x.data.len() {
        let saved = probe[i];
        probe[i] = saved + h;
        let plus = f(&ImageTensor::from_raw_unchecked(
            x.height,
            x.width,
            x.channels,
            probe.clone(),
        ));
        probe[i] = saved - h;
        let minus = f(&ImageTensor::from_raw_unchecked(
            x.height,
            x.width,
            x.channels,
            probe.clone(),
        ));
        probe[i] = saved;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    GradTensor::from_data(x.height, x.width, x.channels, grad)
}

/// Maximum relative elementwise error between two gradients.
///
/// Per element: `|a - b| / max(|a|, |b|, floor)` where the floor is
/// `max(1e-9, 1e-3 * max_magnitude)`. The floor keeps elements that happen
/// to cross zero from dominating the metric while leaving real sign or
/// scale errors at O(1).
pub fn max_relative_error(a: &GradTensor, b: &GradTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let scale = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x.abs().max(y.abs()))
        .fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(1e-9);
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

/// Loads an 8-bit RGB PNG, mapping each byte to `byte / 255`.
/// Rejects anything that is not exactly 3-channel 8-bit.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let dynamic = image::ImageReader::open(path.as_ref())?.decode()?;
    let rgb = match dynamic {
        image::DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::invalid(
                "image",
                format!("expected 8-bit RGB (3 channels), got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb
        .as_raw()
        .iter()
        .map(|&b| f64::from(b) / GRID_LEVELS)
        .collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// Saves as 8-bit RGB PNG via `round(e * 255)`. Grid-aligned tensors
/// round-trip losslessly through `load_png`.
pub fn save_png(x: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    if x.channels != 3 {
        return Err(Error::invalid(
            "image",
            format!("PNG export requires 3 channels, got {}", x.channels),
        ));
    }
    let buf = image::RgbImage::from_raw(x.width as u32, x.height as u32, x.to_bytes())
        .expect("byte length matches dimensions");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
