//! Heatmaps on a fixed colour map, with the value range kept alongside.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use spdiffusion::{Grid, Mask};

/// Viridis sampled at five evenly spaced stops; linear in between.
pub const COLORMAP: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

/// Point colour on overlays.
pub const POINT: [u8; 3] = [255, 127, 14];

/// `t` in `[0, 1]` to a colour; out-of-range values are clamped.
pub fn colormap(t: f32) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (COLORMAP.len() - 1) as f32;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f32;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    std::array::from_fn(|c| (a[c] as f32 + (b[c] as f32 - a[c] as f32) * f).round() as u8)
}

/// Value range of a rendered map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub min: f32,
    pub max: f32,
}

impl Legend {
    pub fn of(values: &[f32]) -> Self {
        let (min, max) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if values.is_empty() {
            Self { min: 0.0, max: 0.0 }
        } else {
            Self { min, max }
        }
    }

    /// Position of `v` in the range; a flat range maps everything to 0.
    pub fn unit(&self, v: f32) -> f32 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

fn paint(grid: Grid, scale: u32, mut color: impl FnMut(usize) -> [u8; 3]) -> RgbImage {
    let scale = scale.max(1);
    let mut img = RgbImage::new(grid.w as u32 * scale, grid.h as u32 * scale);
    for y in 0..grid.h {
        for x in 0..grid.w {
            let c = Rgb(color(grid.index(x, y)));
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x as u32 * scale + dx, y as u32 * scale + dy, c);
                }
            }
        }
    }
    img
}

/// One `scale`×`scale` block per grid cell, coloured by the value's place
/// in its own min/max range.
pub fn heatmap(values: &[f32], grid: Grid, scale: u32) -> (RgbImage, Legend) {
    let legend = Legend::of(values);
    (paint(grid, scale, |i| colormap(legend.unit(values[i]))), legend)
}

/// Grey-scale map with `points` painted over it.
pub fn overlay(values: &[f32], points: &Mask, scale: u32) -> RgbImage {
    let legend = Legend::of(values);
    paint(points.grid(), scale, |i| {
        if points.get(i) {
            POINT
        } else {
            let g = (40.0 + 150.0 * legend.unit(values[i])).round() as u8;
            [g, g, g]
        }
    })
}

/// 4-connected components of a mask.
pub fn components(mask: &Mask) -> usize {
    let grid = mask.grid();
    let mut seen = vec![false; grid.len()];
    let mut count = 0;
    for start in mask.positions() {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            let (x, y) = (p % grid.w, p / grid.w);
            let mut next = Vec::with_capacity(4);
            if x > 0 {
                next.push(p - 1);
            }
            if x + 1 < grid.w {
                next.push(p + 1);
            }
            if y > 0 {
                next.push(p - grid.w);
            }
            if y + 1 < grid.h {
                next.push(p + grid.w);
            }
            for q in next {
                if mask.get(q) && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}
