//! Sensor preprocessing: LiDAR histogram rasterization and front-image cropping.

use crate::error::{Result, SimError};

pub const GRID: usize = 256;
pub const BINS: usize = 2;
pub const CELL: f64 = 0.125;
pub const EXTENT: f64 = 32.0;
pub const DEFAULT_HEIGHT_SPLIT: f64 = 0.2;
pub const DEFAULT_CAP: u16 = 16;
pub const FRONT_SIZE: usize = 256;

/// Point in the ego frame: `x` forward, `y` right, `z` up from the ground.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub type PointCloud = Vec<Point3>;

/// Two-bin height histogram over the frontal 32 m × 32 m area, stored
/// bin-major then row-major. Row 0 is farthest from the ego.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BevGrid {
    pub counts: Vec<u16>,
}

impl Default for BevGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl BevGrid {
    pub fn new() -> Self {
        Self {
            counts: vec![0; BINS * GRID * GRID],
        }
    }

    pub fn index(bin: usize, row: usize, col: usize) -> usize {
        (bin * GRID + row) * GRID + col
    }

    pub fn get(&self, bin: usize, row: usize, col: usize) -> u16 {
        self.counts[Self::index(bin, row, col)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Cell of a point, or `None` when it falls outside `[0,32) × [-16,16)`.
pub fn cell_of(p: &Point3, height_split: f64) -> Option<(usize, usize, usize)> {
    if !(p.x >= 0.0 && p.x < EXTENT && p.y >= -EXTENT / 2.0 && p.y < EXTENT / 2.0) {
        return None;
    }
    let forward = ((p.x / CELL).floor() as usize).min(GRID - 1);
    let col = (((p.y + EXTENT / 2.0) / CELL).floor() as usize).min(GRID - 1);
    let bin = usize::from(p.z >= height_split);
    Some((bin, GRID - 1 - forward, col))
}

/// Bins `cloud` into a [`BevGrid`]; returns the grid and the number of
/// points dropped for lying outside the frontal area.
pub fn rasterize_lidar(cloud: &[Point3], height_split: f64) -> (BevGrid, usize) {
    let mut grid = BevGrid::new();
    let mut dropped = 0;
    for p in cloud {
        match cell_of(p, height_split) {
            Some((bin, row, col)) => {
                let c = &mut grid.counts[BevGrid::index(bin, row, col)];
                *c = c.saturating_add(1);
            }
            None => dropped += 1,
        }
    }
    (grid, dropped)
}

/// Maps counts to `min(count, cap)/cap`, laid out `[2×256×256]`.
pub fn normalize_grid(grid: &BevGrid, cap: u16) -> Result<Vec<f32>> {
    if cap == 0 {
        return Err(SimError::Argument("normalization cap must be at least 1".into()));
    }
    let scale = 1.0 / cap as f32;
    Ok(grid.counts.iter().map(|&c| c.min(cap) as f32 * scale).collect())
}

/// Interleaved 8-bit raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Centered `target × target` window of `raw`, without resampling.
pub fn crop_center(raw: &Image, target: usize) -> Result<Image> {
    if raw.width < target || raw.height < target {
        return Err(SimError::Dimension(format!(
            "image {}x{} smaller than crop {target}x{target}",
            raw.width, raw.height
        )));
    }
    let (x0, y0) = ((raw.width - target) / 2, (raw.height - target) / 2);
    let row_len = target * raw.channels;
    let mut data = Vec::with_capacity(target * row_len);
    for row in y0..y0 + target {
        let start = (row * raw.width + x0) * raw.channels;
        data.extend_from_slice(&raw.data[start..start + row_len]);
    }
    Ok(Image {
        width: target,
        height: target,
        channels: raw.channels,
        data,
    })
}

/// Center-crops an RGB frame to the 256×256 network input.
pub fn crop_front_rgb(raw: &Image) -> Result<Image> {
    if raw.channels != 3 {
        return Err(SimError::Dimension(format!("expected 3 channels, got {}", raw.channels)));
    }
    crop_center(raw, FRONT_SIZE)
}
