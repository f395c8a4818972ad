//! Three-channel geometry images.
//!
//! Channel 1 holds the antenna (0 substrate, 1 metal, 0.5 feed port). Channels
//! 2 and 3 are normalized x and y coordinate ramps, so only channel 1 is
//! stored; the ramps are regenerated from the image shape on demand.
//!
//! Pixels are sampled at their centers with no anti-aliasing. Row 0 is the top
//! of the design space (`y = H`), column 0 the left edge.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::geometry::{clip_to_space, AntennaModel, ClippedGeometry, DesignSpace, Rect};
use crate::{Error, Result};

pub const SUBSTRATE: f32 = 0.0;
pub const PORT: f32 = 0.5;
pub const METAL: f32 = 1.0;

/// 8-bit codes for the channel-1 values, as stored on disk.
pub const SUBSTRATE_CODE: u8 = 0;
pub const PORT_CODE: u8 = 128;
pub const METAL_CODE: u8 = 255;

/// Default raster pitch in millimeters per pixel.
pub const DEFAULT_RESOLUTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryImage {
    width: usize,
    height: usize,
    resolution: f64,
    codes: Vec<u8>,
}

impl GeometryImage {
    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        GeometryImage {
            width,
            height,
            resolution,
            codes: vec![SUBSTRATE_CODE; width * height],
        }
    }

    /// Rebuilds an image from 8-bit channel-1 codes (0, 128, 255).
    pub fn from_codes(width: usize, height: usize, resolution: f64, codes: &[u8]) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::Raster("code count does not match image shape"));
        }
        if codes
            .iter()
            .any(|&c| !matches!(c, SUBSTRATE_CODE | PORT_CODE | METAL_CODE))
        {
            return Err(Error::Raster("channel-1 code must be 0, 128 or 255"));
        }
        Ok(GeometryImage {
            width,
            height,
            resolution,
            codes: codes.to_vec(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Channel 1 as 8-bit codes, row-major from the top-left pixel.
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Channel 1 values, row-major from the top-left pixel.
    pub fn geometry(&self) -> Vec<f32> {
        self.codes.iter().map(|&c| value(c)).collect()
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        value(self.codes[row * self.width + col])
    }

    /// Channel 2 value for a column: 0 at the left edge, 1 at the right.
    pub fn x_coord(&self, col: usize) -> f32 {
        ramp(col, self.width)
    }

    /// Channel 3 value for a row: 0 at the top, 1 at the bottom.
    pub fn y_coord(&self, row: usize) -> f32 {
        ramp(row, self.height)
    }

    /// One full channel plane (0-based channel index).
    pub fn channel(&self, k: usize) -> Vec<f32> {
        match k {
            0 => self.geometry(),
            1 => (0..self.height)
                .flat_map(|_| (0..self.width).map(|c| self.x_coord(c)))
                .collect(),
            2 => (0..self.height)
                .flat_map(|r| core::iter::repeat_n(self.y_coord(r), self.width))
                .collect(),
            _ => panic!("geometry images have 3 channels"),
        }
    }

    /// Writes the three channels into `out` (length `3 * width * height`).
    pub fn write_channels(&self, out: &mut [f32]) {
        let n = self.width * self.height;
        assert_eq!(out.len(), 3 * n);
        let (g, rest) = out.split_at_mut(n);
        let (xs, ys) = rest.split_at_mut(n);
        for (o, &c) in g.iter_mut().zip(&self.codes) {
            *o = value(c);
        }
        for r in 0..self.height {
            let yv = self.y_coord(r);
            for c in 0..self.width {
                xs[r * self.width + c] = self.x_coord(c);
                ys[r * self.width + c] = yv;
            }
        }
    }

    pub fn count(&self, value: f32) -> usize {
        let code = code(value);
        self.codes.iter().filter(|&&v| v == code).count()
    }

    fn fill(&mut self, rect: &Rect, value: u8) {
        let res = self.resolution;
        let c0 = floor_index(rect.x / res - 1.0);
        let c1 = ((rect.right() / res + 1.0).max(0.0) as usize).min(self.width);
        let r_lo = floor_index(self.height as f64 - rect.top() / res - 1.0);
        let r_hi = ((self.height as f64 - rect.y / res + 1.0).max(0.0) as usize).min(self.height);
        for r in r_lo..r_hi {
            let cy = pixel_center_y(r, self.height, res);
            if !(cy >= rect.y && cy < rect.top()) {
                continue;
            }
            for c in c0..c1 {
                let cx = pixel_center_x(c, res);
                if cx >= rect.x && cx < rect.right() {
                    self.codes[r * self.width + c] = value;
                }
            }
        }
    }
}

fn ramp(i: usize, n: usize) -> f32 {
    if n > 1 {
        i as f32 / (n - 1) as f32
    } else {
        0.0
    }
}

fn code(v: f32) -> u8 {
    if v == METAL {
        METAL_CODE
    } else if v == PORT {
        PORT_CODE
    } else {
        SUBSTRATE_CODE
    }
}

fn value(c: u8) -> f32 {
    match c {
        METAL_CODE => METAL,
        PORT_CODE => PORT,
        _ => SUBSTRATE,
    }
}

fn floor_index(v: f64) -> usize {
    if v <= 0.0 {
        0
    } else {
        v as usize
    }
}

/// x coordinate (mm) of the center of column `col`.
pub fn pixel_center_x(col: usize, resolution: f64) -> f64 {
    (col as f64 + 0.5) * resolution
}

/// y coordinate (mm) of the center of row `row`, rows counted from the top.
pub fn pixel_center_y(row: usize, height_px: usize, resolution: f64) -> f64 {
    ((height_px - row) as f64 - 0.5) * resolution
}

/// Pixel grid `(width, height)` covering the design space exactly.
pub fn pixel_grid(space: &DesignSpace, resolution: f64) -> Result<(usize, usize)> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::Raster("resolution must be positive"));
    }
    let whole = |len: f64| {
        let n = len / resolution;
        let r = libm::round(n);
        if libm::fabs(n - r) > 1e-9 * r.max(1.0) {
            Err(Error::Raster("design space is not a whole number of pixels"))
        } else {
            Ok(r as usize)
        }
    };
    let (w, h) = (whole(space.width)?, whole(space.height)?);
    if w == 0 || h == 0 {
        return Err(Error::Raster("zero-size raster"));
    }
    Ok((w, h))
}

pub fn rasterize(model: &AntennaModel, resolution: f64) -> Result<GeometryImage> {
    rasterize_clipped(&clip_to_space(model), &model.space, resolution)
}

/// Metal (components and keepouts) first, then the port on top of it.
pub fn rasterize_clipped(
    geometry: &ClippedGeometry,
    space: &DesignSpace,
    resolution: f64,
) -> Result<GeometryImage> {
    let (w, h) = pixel_grid(space, resolution)?;
    let mut img = GeometryImage::empty(w, h, resolution);
    for r in geometry.metal.iter().chain(&geometry.keepouts) {
        img.fill(r, METAL_CODE);
    }
    img.fill(&geometry.port, PORT_CODE);
    Ok(img)
}

/// Content hash of channel 1 and the image shape.
pub fn image_digest(img: &GeometryImage) -> String {
    let mut h = Sha256::new();
    h.update((img.width as u64).to_le_bytes());
    h.update((img.height as u64).to_le_bytes());
    h.update(&img.codes);
    let out = h.finalize();
    crate::seed::hex(&out[..16])
}
