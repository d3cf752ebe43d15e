//! Histogram of oriented gradients over a grayscale image.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{FeatureError, FeatureVector, GrayImage, Provenance};
use crate::geometry::Mask;

/// Added to the squared block norm before the square root.
pub const BLOCK_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    pub orientations: usize,
    /// Cell side in pixels.
    pub cell: usize,
    /// Block side in cells.
    pub block: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    /// 0-360° orientations when set, 0-180° otherwise.
    pub signed_gradients: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self { orientations: 8, cell: 8, block: 2, block_stride: 1, signed_gradients: false }
    }
}

impl HogConfig {
    fn grid(&self, width: usize, height: usize) -> Result<HogGrid, FeatureError> {
        if self.orientations == 0 || self.cell == 0 || self.block == 0 || self.block_stride == 0 {
            return Err(FeatureError::BadDimensions("HOG parameters must be positive".into()));
        }
        if !width.is_multiple_of(self.cell) || !height.is_multiple_of(self.cell) {
            return Err(FeatureError::BadDimensions(format!(
                "{width}x{height} image is not divisible into {}px cells",
                self.cell
            )));
        }
        let (cells_x, cells_y) = (width / self.cell, height / self.cell);
        if cells_x < self.block || cells_y < self.block {
            return Err(FeatureError::BadDimensions(format!(
                "{cells_x}x{cells_y} cells cannot hold a {}-cell block",
                self.block
            )));
        }
        Ok(HogGrid {
            cells_x,
            cells_y,
            blocks_x: (cells_x - self.block) / self.block_stride + 1,
            blocks_y: (cells_y - self.block) / self.block_stride + 1,
        })
    }

    /// Descriptor length for a `width x height` image.
    pub fn feature_len(&self, width: usize, height: usize) -> Result<usize, FeatureError> {
        let g = self.grid(width, height)?;
        Ok(g.blocks_x * g.blocks_y * self.block * self.block * self.orientations)
    }
}

struct HogGrid {
    cells_x: usize,
    cells_y: usize,
    blocks_x: usize,
    blocks_y: usize,
}

/// Computes the descriptor. Pixels outside `mask` are zeroed before
/// differentiation. Blocks are emitted row-major, cells row-major within a
/// block, orientation bins innermost.
pub fn hog(img: &GrayImage, mask: Option<&Mask>, cfg: &HogConfig) -> Result<FeatureVector, FeatureError> {
    let (w, h) = (img.width(), img.height());
    let grid = cfg.grid(w, h)?;
    let masked;
    let img = match mask {
        Some(m) => {
            if m.width != w || m.height != h {
                return Err(FeatureError::MaskShapeMismatch { image: (w, h), mask: (m.width, m.height) });
            }
            masked = img.masked(m);
            &masked
        }
        None => img,
    };

    let nb = cfg.orientations;
    let range = if cfg.signed_gradients { 2.0 * PI } else { PI };
    let bin_width = range / nb as f64;
    let mut cells = vec![0.0; grid.cells_x * grid.cells_y * nb];

    for r in 0..h {
        let up = r.saturating_sub(1);
        let down = (r + 1).min(h - 1);
        for c in 0..w {
            let left = c.saturating_sub(1);
            let right = (c + 1).min(w - 1);
            let gx = img.get(right, r) - img.get(left, r);
            let gy = img.get(c, down) - img.get(c, up);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(range);
            // bin centers sit at (b + 0.5) * bin_width
            let pos = angle / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(nb as isize) as usize;
            let b1 = (b0 + 1) % nb;
            let cell = (r / cfg.cell) * grid.cells_x + c / cfg.cell;
            cells[cell * nb + b0] += mag * (1.0 - frac);
            cells[cell * nb + b1] += mag * frac;
        }
    }

    let block_len = cfg.block * cfg.block * nb;
    let mut out = Vec::with_capacity(grid.blocks_x * grid.blocks_y * block_len);
    let mut block = Vec::with_capacity(block_len);
    for by in 0..grid.blocks_y {
        for bx in 0..grid.blocks_x {
            block.clear();
            for cy in 0..cfg.block {
                for cx in 0..cfg.block {
                    let cell = (by * cfg.block_stride + cy) * grid.cells_x + bx * cfg.block_stride + cx;
                    block.extend_from_slice(&cells[cell * nb..(cell + 1) * nb]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + BLOCK_NORM_EPS).sqrt();
            out.extend(block.iter().map(|v| v / norm));
        }
    }
    Ok(FeatureVector::new(out, Provenance::Hog))
}
