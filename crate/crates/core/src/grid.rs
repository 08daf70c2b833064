use std::fmt;

use serde::{Deserialize, Serialize};

/// Latent grid dimensions. Positions are indexed row-major: `i = y * w + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub w: usize,
    pub h: usize,
}

impl Grid {
    pub const fn new(w: usize, h: usize) -> Self {
        Self { w, h }
    }

    pub const fn square(side: usize) -> Self {
        Self { w: side, h: side }
    }

    pub const fn len(&self) -> usize {
        self.w * self.h
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn index(&self, x: usize, y: usize) -> usize {
        y * self.w + x
    }

    pub const fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.w, i / self.w)
    }

    /// Nearest-neighbor source position in `self` for position `i` of `target`.
    pub fn nearest_from(&self, target: Grid, i: usize) -> usize {
        let (x, y) = target.coords(i);
        let sx = x * self.w / target.w;
        let sy = y * self.h / target.h;
        self.index(sx, sy)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.w, self.h)
    }
}

/// A binary mask over a latent grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    grid: Grid,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            bits: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            bits: vec![true; grid.len()],
        }
    }

    /// Panics if `bits.len() != grid.len()`.
    pub fn from_bits(grid: Grid, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), grid.len(), "mask length does not match grid {grid}");
        Self { grid, bits }
    }

    pub fn from_fn(grid: Grid, f: impl FnMut(usize) -> bool) -> Self {
        Self {
            grid,
            bits: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn singleton(grid: Grid, position: usize) -> Self {
        let mut mask = Self::empty(grid);
        mask.set(position, true);
        mask
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    /// Intersection over union. Two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a || b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Nearest-neighbor resampling onto `target`.
    pub fn resample(&self, target: Grid) -> Mask {
        if target == self.grid {
            return self.clone();
        }
        Mask::from_fn(target, |i| self.bits[self.grid.nearest_from(target, i)])
    }
}
