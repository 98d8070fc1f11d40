//! Binary masks and their column-major run-length encoding.
//!
//! Runs alternate background/foreground and always start with a background
//! run, which may be zero. Pixel `(x, y)` has scan index `x * height + y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pixel;

/// Dense binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Self {
        Raster {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut r = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                r.set(x, y, f(x, y));
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    /// Foreground pixels in column-major order.
    pub fn pixels(&self) -> Vec<Pixel> {
        let mut out = Vec::new();
        for x in 0..self.width {
            for y in 0..self.height {
                if self.get(x, y) {
                    out.push((x as i64, y as i64));
                }
            }
        }
        out
    }
}

/// Tight axis-aligned box `(x, y, w, h)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn of_pixels(pixels: &[Pixel]) -> Option<BBox> {
        let first = pixels.first()?;
        let (mut x0, mut x1, mut y0, mut y1) = (first.0, first.0, first.1, first.1);
        for &(x, y) in pixels {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some(BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
}

impl Mask {
    /// Wraps runs after checking they cover the frame exactly.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Mask> {
        let expected = width as u64 * height as u64;
        let actual: u64 = runs.iter().map(|&r| r as u64).sum();
        if actual != expected {
            return Err(Error::CorruptMask { expected, actual });
        }
        Ok(Mask {
            width,
            height,
            runs,
        })
    }

    pub fn empty(width: u32, height: u32) -> Mask {
        Mask {
            width,
            height,
            runs: vec![width * height],
        }
    }

    /// Builds a mask from foreground pixels. Pixels outside the frame are
    /// ignored, duplicates are merged.
    pub fn from_pixels(width: u32, height: u32, pixels: &[Pixel]) -> Mask {
        let h = height as u64;
        let mut idx: Vec<u64> = pixels
            .iter()
            .filter(|&&(x, y)| x >= 0 && y >= 0 && (x as u64) < width as u64 && (y as u64) < h)
            .map(|&(x, y)| x as u64 * h + y as u64)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        Mask::from_sorted_indices(width, height, &idx)
    }

    fn from_sorted_indices(width: u32, height: u32, idx: &[u64]) -> Mask {
        let total = width as u64 * height as u64;
        let mut runs = Vec::new();
        let mut pos = 0u64;
        let mut i = 0;
        while i < idx.len() {
            let start = idx[i];
            let mut end = start + 1;
            i += 1;
            while i < idx.len() && idx[i] == end {
                end += 1;
                i += 1;
            }
            runs.push((start - pos) as u32);
            runs.push((end - start) as u32);
            pos = end;
        }
        if pos < total || runs.is_empty() {
            runs.push((total - pos) as u32);
        }
        Mask {
            width,
            height,
            runs,
        }
    }

    /// Foreground area in pixels.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground intervals `[start, end)` of scan indices.
    pub fn intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as u64;
            (i % 2 == 1 && r > 0).then_some((start, pos))
        })
    }

    /// Foreground pixels in column-major order.
    pub fn pixels(&self) -> Vec<Pixel> {
        let h = self.height as u64;
        self.intervals()
            .flat_map(|(s, e)| (s..e).map(move |i| ((i / h) as i64, (i % h) as i64)))
            .collect()
    }

    pub fn bbox(&self) -> Option<BBox> {
        BBox::of_pixels(&self.pixels())
    }

    /// Number of pixels set in both masks. Masks must share dimensions.
    pub fn intersection_area(&self, other: &Mask) -> u64 {
        let a: Vec<(u64, u64)> = self.intervals().collect();
        let b: Vec<(u64, u64)> = other.intervals().collect();
        let (mut i, mut j, mut acc) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                acc += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        acc
    }
}

/// Encodes a raster as a column-major RLE mask.
pub fn encode_rle(raster: &Raster) -> Mask {
    let (w, h) = (raster.width(), raster.height());
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = raster.get(x, y);
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
    }
    runs.push(len);
    Mask {
        width: w,
        height: h,
        runs,
    }
}

/// Decodes an RLE mask, rejecting runs that do not cover the frame.
pub fn decode_rle(mask: &Mask) -> Result<Raster> {
    let expected = mask.width as u64 * mask.height as u64;
    let actual: u64 = mask.runs.iter().map(|&r| r as u64).sum();
    if actual != expected {
        return Err(Error::CorruptMask { expected, actual });
    }
    let mut raster = Raster::new(mask.width, mask.height);
    let h = mask.height as u64;
    for (s, e) in mask.intervals() {
        for i in s..e {
            raster.set((i / h) as u32, (i % h) as u32, true);
        }
    }
    Ok(raster)
}
