//! Patch-resolution binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (row, col) coordinate of a patch in a grid.
pub type Point = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask {height}x{width} needs {} cells, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_points(height: usize, width: usize, points: &[Point]) -> Self {
        let mut mask = Self::empty(height, width);
        for &(r, c) in points {
            mask.set(r, c, true);
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn get_index(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Flat indices of set cells, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn points(&self) -> Vec<Point> {
        self.indices().map(|i| (i / self.width, i % self.width)).collect()
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "masks {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Returns `(|a ∩ b|, |a ∪ b|)`.
    pub fn overlap_counts(&self, other: &BinaryMask) -> Result<(usize, usize)> {
        self.check_dims(other)?;
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok((inter, union))
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let (inter, union) = self.overlap_counts(other)?;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }
}
