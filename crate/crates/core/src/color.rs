//! RGB <-> optical density conversion and tissue masking.
//!
//! Optical density follows the Beer-Lambert convention with a base-10
//! logarithm: `OD = -log10(max(I, 1) / i0)`. Clamping the intensity at 1
//! keeps the largest OD finite (`log10(255)` for `i0 = 255`) and makes the
//! 8-bit round trip exact.

use std::path::Path;

use crate::error::{Error, Result};

/// Default incident light intensity.
pub const DEFAULT_I0: f64 = 255.0;

/// Default optical density threshold separating tissue from background.
pub const DEFAULT_OD_THRESHOLD: f64 = 0.15;

/// Largest optical density produced by [`rgb_to_od`] with `i0 = 255`.
pub fn od_max() -> f64 {
    DEFAULT_I0.log10()
}

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes for {width}x{height} RGB", width * height * 3),
                got: format!("{} bytes", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single colour.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Loads a PNG (or any format the `image` crate was built with), dropping alpha.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image { path: path.to_path_buf(), source },
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: rgb.into_raw() })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image { path: path.to_path_buf(), source },
        })
    }

    /// Area-average downsampling to `side x side`.
    ///
    /// Each output pixel averages the (fractional) source area it covers, so
    /// an exact integer factor reduces to block means. Returns a clone when the
    /// image is already the requested size.
    pub fn downsample_area(&self, side: usize) -> RgbImage {
        if self.width == side && self.height == side {
            return self.clone();
        }
        let sx = self.width as f64 / side as f64;
        let sy = self.height as f64 / side as f64;
        let mut data = Vec::with_capacity(side * side * 3);
        for oy in 0..side {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            for ox in 0..side {
                let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
                let mut acc = [0.0f64; 3];
                let mut area = 0.0;
                let mut y = y0.floor() as usize;
                while (y as f64) < y1 && y < self.height {
                    let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                    let mut x = x0.floor() as usize;
                    while (x as f64) < x1 && x < self.width {
                        let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                        let w = wx * wy;
                        let p = self.pixel(x, y);
                        for c in 0..3 {
                            acc[c] += w * p[c] as f64;
                        }
                        area += w;
                        x += 1;
                    }
                    y += 1;
                }
                for a in acc {
                    data.push(round_half_up(a / area).clamp(0.0, 255.0) as u8);
                }
            }
        }
        RgbImage { width: side, height: side, data }
    }
}

/// Per-pixel optical density triples.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl OdImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {width}x{height} OD", width * height * 3),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// One flag per pixel, `true` for tissue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl TissueMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels on which two equally sized masks agree.
    pub fn agreement(&self, other: &TissueMask) -> f64 {
        assert_eq!(self.bits.len(), other.bits.len(), "mask sizes differ");
        if self.bits.is_empty() {
            return 1.0;
        }
        let same = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        same as f64 / self.bits.len() as f64
    }
}

#[inline]
pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[inline]
pub fn intensity_to_od(intensity: u8, i0: f64) -> f64 {
    let od = -((intensity.max(1) as f64) / i0).log10();
    // Intensities above i0 would give negative density.
    od.max(0.0)
}

#[inline]
pub fn od_to_intensity(od: f64, i0: f64) -> u8 {
    round_half_up(i0 * 10f64.powf(-od)).clamp(0.0, 255.0) as u8
}

pub fn rgb_to_od(img: &RgbImage, i0: f64) -> OdImage {
    assert!(i0 > 0.0, "reference intensity must be positive");
    let data = img.data.iter().map(|&v| intensity_to_od(v, i0)).collect();
    OdImage { width: img.width, height: img.height, data }
}

pub fn od_to_rgb(od: &OdImage, i0: f64) -> RgbImage {
    let data = od.data.iter().map(|&v| od_to_intensity(v, i0)).collect();
    RgbImage { width: od.width, height: od.height, data }
}

/// A pixel is tissue when its largest channel OD exceeds `od_threshold`.
pub fn tissue_mask(od: &OdImage, od_threshold: f64) -> TissueMask {
    let bits = od
        .pixels()
        .map(|p| p[0].max(p[1]).max(p[2]) > od_threshold)
        .collect();
    TissueMask { width: od.width, height: od.height, bits }
}
