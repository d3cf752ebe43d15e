//! Image and time-series features.

mod hog;
mod pca;
mod preprocess;
mod temporal;

use std::path::Path;

use thiserror::Error;

use crate::geometry::Mask;

pub use hog::{hog, HogConfig, BLOCK_NORM_EPS};
pub use pca::{fit_pca, PcaModel};
pub use preprocess::{baseline_normalize, lower_median, summarize_sessions, Baseline, SummaryStat};
pub use temporal::{
    bag_of_temporal_filters, band_pass, count_upward_crossings, wavelet_band_features, Band, BandFeatures,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("mask is {mask:?} but image is {image:?}")]
    MaskShapeMismatch { image: (usize, usize), mask: (usize, usize) },
    #[error("data has rank zero (all rows identical)")]
    RankZero,
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("session `{0}` has no rows")]
    EmptySession(String),
    #[error("invalid band ({low}, {high}) Hz at {rate} Hz sampling")]
    BadBand { low: f64, high: f64, rate: f64 },
    #[error("invalid retain fraction {0}")]
    BadRetain(f64),
    #[error("image: {0}")]
    Image(String),
}

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, FeatureError> {
        if pixels.len() != width * height {
            return Err(FeatureError::BadDimensions(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn masked(&self, mask: &Mask) -> Self {
        let pixels = self.pixels.iter().zip(&mask.data).map(|(&p, &inside)| if inside { p } else { 0.0 }).collect();
        Self { width: self.width, height: self.height, pixels }
    }

    /// Bilinear sample at a real-valued position, clamping to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Loads an 8-bit grayscale PNG or PGM (color inputs are converted to luma).
    pub fn open(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let img = image::open(path.as_ref()).map_err(|e| FeatureError::Image(e.to_string()))?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let pixels = luma.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("size matches")
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, FeatureError> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_luma8().write_to(&mut buf, image::ImageFormat::Png).map_err(|e| FeatureError::Image(e.to_string()))?;
        Ok(buf.into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Hog,
    HogPca,
    LandmarksHog,
    LandmarksHogPca,
    TemporalFilters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Self {
        Self { values, provenance }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
