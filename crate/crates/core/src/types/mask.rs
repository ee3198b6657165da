use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary segmentation over a pixel grid; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Expands a per-patch label grid into pixels, blockwise constant.
    pub fn from_patches(grid_h: usize, grid_w: usize, patch_size: usize, labels: &[bool]) -> Self {
        debug_assert_eq!(labels.len(), grid_h * grid_w);
        Self::from_fn(grid_h * patch_size, grid_w * patch_size, |r, c| {
            labels[(r / patch_size) * grid_w + c / patch_size]
        })
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_grid(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Per-patch majority vote: a patch is foreground iff strictly more
    /// than half of its pixels are.
    pub fn patch_majority(&self, patch_size: usize) -> Vec<bool> {
        let gh = self.height / patch_size;
        let gw = self.width / patch_size;
        let half = patch_size * patch_size;
        let mut out = Vec::with_capacity(gh * gw);
        for gr in 0..gh {
            for gc in 0..gw {
                let mut fg = 0;
                for r in gr * patch_size..(gr + 1) * patch_size {
                    for c in gc * patch_size..(gc + 1) * patch_size {
                        fg += self.get(r, c) as usize;
                    }
                }
                out.push(2 * fg > half);
            }
        }
        out
    }
}

/// Maps a pixel coordinate to the patch containing it.
pub fn pixel_to_patch(
    row: usize,
    col: usize,
    height: usize,
    width: usize,
    patch_size: usize,
) -> Result<(usize, usize)> {
    if row >= height || col >= width {
        return Err(Error::OutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    if patch_size == 0 {
        return Err(Error::Config("patch_size must be positive".into()));
    }
    Ok((row / patch_size, col / patch_size))
}
