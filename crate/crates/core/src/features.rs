//! Window features over grayscale images.
//!
//! Three per-pixel features feed the downstream classifiers: the local
//! mean, the local population standard deviation (both over a square
//! window that includes the center pixel), and NCN, the number of close
//! neighbors whose gray level differs from the center by strictly less
//! than a threshold (center excluded).
//!
//! Windows are square with side `2 * radius + 1`. At the border, `Shrink`
//! drops out-of-bounds positions and `Clamp` replicates edge pixels by
//! clamping coordinates, so clamped windows keep a full population with
//! duplicates counted.

use crate::image::GrayImage;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderPolicy {
    #[default]
    Shrink,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub radius: usize,
    pub border: BorderPolicy,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            radius: 1,
            border: BorderPolicy::Shrink,
        }
    }
}

impl WindowSpec {
    pub fn new(radius: usize, border: BorderPolicy) -> Self {
        assert!(radius >= 1, "window radius must be at least 1");
        Self { radius, border }
    }

    /// Cells in a full (non-shrunk) window.
    pub fn population(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }

    /// Visits every window cell of `(x, y)` under the border policy.
    #[inline]
    fn for_each_cell(
        &self,
        img: &GrayImage,
        x: usize,
        y: usize,
        mut visit: impl FnMut(bool, u8),
    ) {
        let r = self.radius as isize;
        let (w, h) = (img.width() as isize, img.height() as isize);
        let (cx, cy) = (x as isize, y as isize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (mut px, mut py) = (cx + dx, cy + dy);
                match self.border {
                    BorderPolicy::Shrink => {
                        if px < 0 || py < 0 || px >= w || py >= h {
                            continue;
                        }
                    }
                    BorderPolicy::Clamp => {
                        px = px.clamp(0, w - 1);
                        py = py.clamp(0, h - 1);
                    }
                }
                visit(dx == 0 && dy == 0, img.get(px as usize, py as usize));
            }
        }
    }
}

/// Per-pixel feature grids, row-major, all sized like the source image.
///
/// `p` is the fuzzy spatial weight in `[0, 1]`; [`compute`](FeatureMaps::compute)
/// leaves it zeroed until a weighting pass fills it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub width: usize,
    pub height: usize,
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    pub ncn: Vec<u32>,
    pub p: Vec<f64>,
}

impl FeatureMaps {
    /// Computes mean, sigma, and NCN in one pass each.
    pub fn compute(img: &GrayImage, window: WindowSpec, s_threshold: f64) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            mean: local_mean(img, window),
            sigma: local_std(img, window),
            ncn: ncn(img, window, s_threshold),
            p: vec![0.0; img.width() * img.height()],
        }
    }
}

/// Mean gray level over each pixel's window (center included).
pub fn local_mean(img: &GrayImage, window: WindowSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (mut sum, mut n) = (0.0f64, 0usize);
            window.for_each_cell(img, x, y, |_, v| {
                sum += f64::from(v);
                n += 1;
            });
            out.push(sum / n as f64);
        }
    }
    out
}

/// Population standard deviation over each pixel's window (center included):
/// `sqrt(sum((v - mean)^2) / N)` with the window's own mean.
pub fn local_std(img: &GrayImage, window: WindowSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (mut sum, mut n) = (0.0f64, 0usize);
            window.for_each_cell(img, x, y, |_, v| {
                sum += f64::from(v);
                n += 1;
            });
            let mean = sum / n as f64;
            let mut ss = 0.0f64;
            window.for_each_cell(img, x, y, |_, v| {
                let d = f64::from(v) - mean;
                ss += d * d;
            });
            out.push((ss / n as f64).sqrt());
        }
    }
    out
}

/// Number of close neighbors: window cells other than the center position
/// whose value differs from the center pixel by strictly less than
/// `s_threshold`.
pub fn ncn(img: &GrayImage, window: WindowSpec, s_threshold: f64) -> Vec<u32> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let center = f64::from(img.get(x, y));
            let mut count = 0u32;
            window.for_each_cell(img, x, y, |is_center, v| {
                if !is_center && (f64::from(v) - center).abs() < s_threshold {
                    count += 1;
                }
            });
            out.push(count);
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("grid file needs a 16-byte header, got {got} bytes")]
    ShortHeader { got: usize },
    #[error("grid payload holds {got} values, expected {expected} for {width}x{height}")]
    ShortPayload {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
}

/// Serializes a grid of reals: 16-byte header (width then height, 64-bit
/// little-endian unsigned) followed by row-major 64-bit little-endian
/// IEEE values.
pub fn write_grid_f64(grid: &[f64], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(grid.len(), width * height, "grid length mismatch");
    let mut out = Vec::with_capacity(16 + 8 * grid.len());
    out.extend_from_slice(&(width as u64).to_le_bytes());
    out.extend_from_slice(&(height as u64).to_le_bytes());
    for v in grid {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a grid written by [`write_grid_f64`].
pub fn read_grid_f64(bytes: &[u8]) -> Result<(Vec<f64>, usize, usize), GridError> {
    if bytes.len() < 16 {
        return Err(GridError::ShortHeader { got: bytes.len() });
    }
    let width = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let height = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(GridError::EmptyDimensions { width, height });
    }
    let expected = width * height;
    let payload = &bytes[16..];
    if payload.len() < expected * 8 {
        return Err(GridError::ShortPayload {
            width,
            height,
            expected,
            got: payload.len() / 8,
        });
    }
    let grid = payload[..expected * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((grid, width, height))
}

/// Min-max scales a grid to 0..=255 for quick visual inspection.
/// A constant grid renders black.
pub fn grid_to_pgm(grid: &[f64], width: usize, height: usize) -> GrayImage {
    assert_eq!(grid.len(), width * height, "grid length mismatch");
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in grid {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let pixels = grid
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(width, height, pixels).unwrap()
}
