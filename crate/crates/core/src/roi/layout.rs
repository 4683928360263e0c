//! Patch grid over an image and its blade mask.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiLayout {
    pub patch_size: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, one entry per patch, `true` for blade.
    pub labels: Vec<bool>,
}

impl RoiLayout {
    /// Layout with explicit labels, e.g. rebuilt from a coded mask.
    pub fn from_labels(height: usize, width: usize, patch_size: usize, labels: Vec<bool>) -> Result<Self> {
        let (rows, cols) = grid_dims(height, width, patch_size)?;
        if labels.len() != rows * cols {
            return Err(Error::Config(format!(
                "{} labels for a {rows}x{cols} grid",
                labels.len()
            )));
        }
        Ok(Self {
            patch_size,
            height,
            width,
            rows,
            cols,
            labels,
        })
    }

    /// Every patch carries the same label.
    pub fn uniform(height: usize, width: usize, patch_size: usize, blade: bool) -> Result<Self> {
        let (rows, cols) = grid_dims(height, width, patch_size)?;
        Self::from_labels(height, width, patch_size, vec![blade; rows * cols])
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn label(&self, row: usize, col: usize) -> bool {
        self.labels[row * self.cols + col]
    }

    /// Padding added on the right and at the bottom.
    pub fn pad(&self) -> (usize, usize) {
        (
            self.cols * self.patch_size - self.width,
            self.rows * self.patch_size - self.height,
        )
    }

    /// Top-left pixel of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        (
            (index / self.cols) * self.patch_size,
            (index % self.cols) * self.patch_size,
        )
    }

    /// Height and width of the unpadded part of patch `index`.
    pub fn valid(&self, index: usize) -> (usize, usize) {
        let (y, x) = self.origin(index);
        (
            (self.height - y).min(self.patch_size),
            (self.width - x).min(self.patch_size),
        )
    }

    /// Raster-order indices of blade patches.
    pub fn blade_indices(&self) -> Vec<usize> {
        (0..self.patch_count()).filter(|&i| self.labels[i]).collect()
    }

    /// Raster-order indices of background patches.
    pub fn background_indices(&self) -> Vec<usize> {
        (0..self.patch_count()).filter(|&i| !self.labels[i]).collect()
    }

    /// Grid cells whose label differs from both the cell below and the cell
    /// to the right, with cells outside the grid counted as background.
    pub fn corners(&self) -> Vec<(usize, usize)> {
        let at = |r: usize, c: usize| r < self.rows && c < self.cols && self.label(r, c);
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.label(r, c);
                if v != at(r + 1, c) && v != at(r, c + 1) {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Largest patch grid a layout may describe.
pub const MAX_PATCHES: usize = 1 << 24;
/// Largest padded image a layout may describe, in pixels.
pub const MAX_PIXELS: usize = 1 << 28;

pub fn grid_dims(height: usize, width: usize, patch_size: usize) -> Result<(usize, usize)> {
    if patch_size == 0 || height == 0 || width == 0 {
        return Err(Error::Config("image and patch sizes must be positive".into()));
    }
    let (rows, cols) = (height.div_ceil(patch_size), width.div_ceil(patch_size));
    let area = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_PATCHES)
        .and_then(|n| n.checked_mul(patch_size.checked_mul(patch_size)?));
    if area.is_none_or(|a| a > MAX_PIXELS) {
        return Err(Error::Config(format!("a {rows}x{cols} grid of {patch_size}-pixel patches is too large")));
    }
    Ok((rows, cols))
}

/// A patch is blade as soon as one source pixel it covers is blade.
pub fn build_layout(mask: &BinaryMask, patch_size: usize) -> Result<RoiLayout> {
    let (h, w) = mask.shape();
    let (rows, cols) = grid_dims(h, w, patch_size)?;
    let mut labels = vec![false; rows * cols];
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                labels[(y / patch_size) * cols + x / patch_size] = true;
            }
        }
    }
    RoiLayout::from_labels(h, w, patch_size, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_inspection_image_has_486_patches() {
        let l = RoiLayout::uniform(4502, 6744, 256, false).unwrap();
        assert_eq!((l.rows, l.cols), (18, 27));
        assert_eq!(l.patch_count(), 486);
        assert_eq!(l.pad(), (27 * 256 - 6744, 18 * 256 - 4502));
    }

    #[test]
    fn single_pixel_marks_its_patch() {
        let mut m = BinaryMask::filled(10, 10, false);
        m.set(9, 0, true);
        let l = build_layout(&m, 4).unwrap();
        assert_eq!((l.rows, l.cols), (3, 3));
        assert_eq!(l.blade_indices(), vec![6]);
        assert_eq!(l.valid(6), (2, 4));
        assert_eq!(l.valid(8), (2, 2));
        assert_eq!(l.origin(5), (4, 8));
    }

    #[test]
    fn corner_predicate() {
        let l = RoiLayout::from_labels(2, 2, 1, vec![true, false, false, false]).unwrap();
        assert_eq!(l.corners(), vec![(0, 0)]);
        // With outside cells as background, a full grid keeps one corner.
        let full = RoiLayout::uniform(3, 4, 1, true).unwrap();
        assert_eq!(full.corners(), vec![(2, 3)]);
        assert!(RoiLayout::uniform(3, 4, 1, false).unwrap().corners().is_empty());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(grid_dims(0, 5, 4).is_err());
        assert!(grid_dims(5, 5, 0).is_err());
        assert!(RoiLayout::from_labels(4, 4, 2, vec![true; 3]).is_err());
        assert!(grid_dims(usize::MAX, usize::MAX, 1).is_err());
    }
}
