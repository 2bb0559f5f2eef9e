//! Synthetic sensor frames and the fouling-quantification pipeline:
//! grayscale conversion, locally adaptive binarization, and mean squared
//! error against a reference frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fouling::{OpacityField, WINDOW_HEIGHT_MM, WINDOW_WIDTH_MM};

/// Grayscale frame with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                left: format!("{} pixels", pixels.len()),
                right: format!("{width}x{height} image"),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("gray intensities must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Rounds every intensity to the nearest of 256 levels, as an 8-bit
    /// sensor would deliver it.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|&p| LEVELS[usize::from(to_u8(p))])
                .collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| to_u8(p)).collect()
    }

    /// Multiplies every intensity by `c`, clamping to 1.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| (p * c).min(1.0)).collect(),
        }
    }
}

/// `i / 255` for every 8-bit level, matching what the PGM reader produces.
static LEVELS: std::sync::LazyLock<[f64; 256]> = std::sync::LazyLock::new(|| {
    let mut t = [0.0; 256];
    for (i, v) in t.iter_mut().enumerate() {
        *v = i as f64 / 255.0;
    }
    t
});

pub(crate) fn to_u8(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Colour frame with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

/// Luma conversion with the 0.299 / 0.587 / 0.114 weights.
pub fn to_gray(rgb: &RgbImage) -> Result<GrayImage> {
    if rgb
        .pixels
        .iter()
        .flatten()
        .any(|c| !(0.0..=1.0).contains(c))
    {
        return Err(Error::invalid("rgb channels must lie in [0, 1]"));
    }
    let pixels = rgb
        .pixels
        .iter()
        .map(|[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(rgb.width, rgb.height, pixels)
}

/// Binarized frame, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::ShapeMismatch {
                left: format!("{} bits", bits.len()),
                right: format!("{width}x{height} image"),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("binary image values must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Foreground darker than its surroundings (fouling on a bright backdrop).
    Dark,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdParams {
    pub sensitivity: f64,
    pub polarity: Polarity,
    /// Odd side of the averaging window; derived from the image size when
    /// absent.
    pub window_side: Option<usize>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            sensitivity: 0.5,
            polarity: Polarity::Dark,
            window_side: None,
        }
    }
}

/// `2 * floor(min(w, h) / 16) + 1`, never below 3.
pub fn default_window_side(width: usize, height: usize) -> usize {
    (2 * (width.min(height) / 16) + 1).max(3)
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sensitivity) {
            return Err(Error::invalid(format!(
                "sensitivity must be in [0, 1], got {}",
                self.sensitivity
            )));
        }
        if let Some(side) = self.window_side {
            if side < 3 || side.is_multiple_of(2) {
                return Err(Error::invalid(format!(
                    "window side must be odd and at least 3, got {side}"
                )));
            }
        }
        Ok(())
    }

    pub fn window_for(&self, width: usize, height: usize) -> usize {
        self.window_side
            .unwrap_or_else(|| default_window_side(width, height))
    }

    /// Relative margin below (dark) or above (bright) the local mean.
    pub fn offset(&self) -> f64 {
        0.3 * (1.0 - self.sensitivity)
    }
}

/// Summed-area table with a zero guard row and column.
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width, img.height);
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.pixels[y * w + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Sum over columns `x0..x1` and rows `y0..y1` (exclusive ends).
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
            + self.sums[y0 * s + x0]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Mean of the `window_side` square centred on each pixel, with windows cut
/// off at the image border and divided by the pixels actually covered.
pub fn local_mean(img: &GrayImage, window_side: usize) -> Result<Vec<f64>> {
    if window_side.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "window side must be odd, got {window_side}"
        )));
    }
    let integral = IntegralImage::new(img);
    let (w, h) = (img.width, img.height);
    let half = window_side / 2;
    let mut means = vec![0.0; w * h];
    means.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(h);
        for (x, m) in row.iter_mut().enumerate() {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(w);
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            *m = integral.rect_sum(x0, y0, x1, y1) / count;
        }
    });
    Ok(means)
}

/// Locally adaptive thresholding against the windowed mean.
///
/// With dark polarity a pixel maps to 1 when it is brighter than
/// `mean * (1 - t)`, so fouling comes out as 0 on a background of 1. Bright
/// polarity maps to 1 when the pixel is darker than `mean * (1 + t)`.
pub fn binarize(img: &GrayImage, params: &ThresholdParams) -> Result<BinaryImage> {
    params.validate()?;
    let side = params.window_for(img.width, img.height);
    let means = local_mean(img, side)?;
    let t = params.offset();
    let bits = match params.polarity {
        Polarity::Dark => {
            let f = 1.0 - t;
            img.pixels
                .par_iter()
                .zip(means.par_iter())
                .map(|(&p, &m)| u8::from(p > m * f))
                .collect()
        }
        Polarity::Bright => {
            let f = 1.0 + t;
            img.pixels
                .par_iter()
                .zip(means.par_iter())
                .map(|(&p, &m)| u8::from(p < m * f))
                .collect()
        }
    };
    BinaryImage::new(img.width, img.height, bits)
}

/// Mean of squared element-wise differences.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            left: format!("{} elements", x.len()),
            right: format!("{} elements", y.len()),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("mse of empty arrays"));
    }
    let sum: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Mean squared error between two binarized frames of equal size.
pub fn binary_mse(x: &BinaryImage, y: &BinaryImage) -> Result<f64> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{}", x.width, x.height),
            right: format!("{}x{}", y.width, y.height),
        });
    }
    let differing = x.bits.iter().zip(&y.bits).filter(|(a, b)| a != b).count();
    Ok(differing as f64 / x.bits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub width: usize,
    pub height: usize,
    /// Brightness of the white backdrop seen through a clean window.
    pub background_level: f64,
    pub noise_sigma: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            width: 1600,
            height: 1200,
            background_level: 0.9,
            noise_sigma: 0.035,
        }
    }
}

impl RenderParams {
    pub fn validate(&self, field: &OpacityField) -> Result<()> {
        if !(self.background_level > 0.0 && self.background_level <= 1.0) {
            return Err(Error::invalid(format!(
                "background level must be in (0, 1], got {}",
                self.background_level
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and nonnegative"));
        }
        if self.width < field.cols() || self.height < field.rows() {
            return Err(Error::invalid(format!(
                "frame {}x{} is smaller than the {}x{} opacity grid",
                self.width,
                self.height,
                field.cols(),
                field.rows()
            )));
        }
        Ok(())
    }
}

/// Views the backdrop through the fouled window.
///
/// The window is mapped onto the whole frame; each pixel samples the cell
/// under its centre and transmits `background * (1 - opacity)`, plus
/// Gaussian sensor noise.
pub fn render(field: &OpacityField, params: &RenderParams, rng_seed: u64) -> Result<GrayImage> {
    params.validate(field)?;
    let (w, h) = (params.width, params.height);
    let cs = field.cell_size_mm();
    let col_of: Vec<usize> = (0..w)
        .map(|x| {
            let x_mm = (x as f64 + 0.5) * WINDOW_WIDTH_MM / w as f64;
            ((x_mm / cs) as usize).min(field.cols() - 1)
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let y_mm = (y as f64 + 0.5) * WINDOW_HEIGHT_MM / h as f64;
        let row = ((y_mm / cs) as usize).min(field.rows() - 1);
        let cells = &field.cells()[row * field.cols()..(row + 1) * field.cols()];
        pixels.extend(
            col_of
                .iter()
                .map(|&c| params.background_level * (1.0 - cells[c])),
        );
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, params.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
        for p in &mut pixels {
            *p += normal.sample(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    GrayImage::new(w, h, pixels)
}

/// Field as a transmittance image at grid resolution, for inspection.
pub fn field_image(field: &OpacityField) -> GrayImage {
    let pixels = field.cells().iter().map(|o| 1.0 - o).collect();
    GrayImage::new(field.cols(), field.rows(), pixels).expect("field cells are in range")
}
