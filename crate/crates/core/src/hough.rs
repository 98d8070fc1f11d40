//! Circular Hough transform with gradient-directed voting.
//!
//! Every edge pixel votes at distance `r` along both senses of its gradient,
//! one accumulator slice per integer radius. Slices are smoothed with a unit
//! Gaussian and only three are alive at a time, so memory stays at three
//! image-sized buffers regardless of the radius range.

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::mask::Mask;
use crate::render::{gaussian_blur, gaussian_kernel, GrayF};

/// Largest possible Sobel magnitude on 8-bit input.
const SOBEL_MAX: f64 = 4.0 * 255.0 * std::f64::consts::SQRT_2;

/// Smoothing applied to every accumulator slice.
const SLICE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub width: u32,
    pub height: u32,
    /// Sobel magnitude scaled to [0, 1].
    pub magnitude: Vec<f64>,
    /// `atan2(gy, gx)`, radians; x grows rightwards and y downwards.
    pub direction: Vec<f64>,
}

/// 3×3 Sobel gradients with edge clamping.
pub fn gradient_map(img: &GrayImage) -> GradientMap {
    let (w, h) = img.dimensions();
    let px = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        img.get_pixel(x, y).0[0] as f64
    };
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h as i64)
        .into_par_iter()
        .map(|y| {
            let mut mag = Vec::with_capacity(w as usize);
            let mut dir = Vec::with_capacity(w as usize);
            for x in 0..w as i64 {
                let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
                let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
                mag.push((gx.hypot(gy) / SOBEL_MAX).min(1.0));
                dir.push(gy.atan2(gx));
            }
            (mag, dir)
        })
        .collect();
    let (magnitude, direction): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    GradientMap {
        width: w,
        height: h,
        magnitude: magnitude.concat(),
        direction: direction.concat(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub r_min: u32,
    pub r_max: u32,
    /// Minimum normalized accumulator value of a reported circle, in (0, 1].
    pub accumulator_threshold: f64,
    /// Minimum normalized gradient magnitude of a voting pixel, in [0, 1].
    pub edge_threshold: f64,
    /// Circles closer than this fraction of the smaller radius are suppressed.
    pub nms_distance_factor: f64,
    pub max_circles: usize,
}

impl Default for HoughParams {
    /// Tuned on the synthetic calibration scenes of the default preset.
    fn default() -> Self {
        HoughParams {
            r_min: 6,
            r_max: 40,
            accumulator_threshold: 0.3,
            edge_threshold: 0.08,
            nms_distance_factor: 0.8,
            max_circles: 1000,
        }
    }
}

impl HoughParams {
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.r_min < 1 || self.r_min >= self.r_max {
            return bad(format!(
                "need 1 <= r_min < r_max, got {}..{}",
                self.r_min, self.r_max
            ));
        }
        let half_diagonal = (width as f64).hypot(height as f64) / 2.0;
        if self.r_max as f64 > half_diagonal {
            return bad(format!(
                "r_max {} exceeds half the image diagonal ({half_diagonal:.1})",
                self.r_max
            ));
        }
        if !(self.accumulator_threshold > 0.0 && self.accumulator_threshold <= 1.0) {
            return bad(format!(
                "accumulator_threshold must lie in (0, 1], got {}",
                self.accumulator_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return bad(format!(
                "edge_threshold must lie in [0, 1], got {}",
                self.edge_threshold
            ));
        }
        if !(self.nms_distance_factor > 0.0) {
            return bad("nms_distance_factor must be > 0".into());
        }
        if self.max_circles == 0 {
            return bad("max_circles must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub score: f64,
}

impl Circle {
    /// Filled disk: pixels whose centers lie within the radius.
    pub fn mask(&self, width: u32, height: u32) -> Mask {
        let r = self.radius;
        let x0 = (self.x - r).floor().max(0.0) as i64;
        let x1 = ((self.x + r).ceil() as i64).min(width as i64 - 1);
        let y0 = (self.y - r).floor().max(0.0) as i64;
        let y1 = ((self.y + r).ceil() as i64).min(height as i64 - 1);
        let mut px: Vec<Pixel> = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                let (dx, dy) = (x as f64 + 0.5 - self.x, y as f64 + 0.5 - self.y);
                if dx * dx + dy * dy <= r * r {
                    px.push((x, y));
                }
            }
        }
        Mask::from_pixels(width, height, &px)
    }
}

struct Edge {
    x: f64,
    y: f64,
    cos: f64,
    sin: f64,
}

struct Voter {
    width: u32,
    height: u32,
    edges: Vec<Edge>,
    /// Smoothed response of a single cell holding one vote.
    peak_gain: f64,
}

impl Voter {
    /// Smoothed slice for radius `r`, normalized so that `2πr` votes in one
    /// cell score 1.
    fn slice(&self, r: u32) -> Vec<f64> {
        let (w, h) = (self.width as usize, self.height as usize);
        let rf = r as f64;
        let votes = self
            .edges
            .par_chunks(2048)
            .fold(
                || vec![0u32; w * h],
                |mut acc, chunk| {
                    for e in chunk {
                        for sign in [1.0, -1.0] {
                            let vx = (e.x + sign * rf * e.cos).floor();
                            let vy = (e.y + sign * rf * e.sin).floor();
                            if vx >= 0.0 && vy >= 0.0 && (vx as usize) < w && (vy as usize) < h {
                                acc[vy as usize * w + vx as usize] += 1;
                            }
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u32; w * h],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        let raw = GrayF {
            width: self.width,
            height: self.height,
            data: votes.into_iter().map(|v| v as f64).collect(),
        };
        let scale = 1.0 / (std::f64::consts::TAU * rf * self.peak_gain);
        let mut smooth = gaussian_blur(&raw, SLICE_SIGMA);
        smooth.data.iter_mut().for_each(|v| *v *= scale);
        smooth.data
    }
}

struct Candidate {
    x: u32,
    y: u32,
    r: u32,
    value: f64,
}

/// Detects circles, strongest first.
pub fn hough_detect(img: &GrayImage, params: &HoughParams) -> Result<Vec<Circle>> {
    let (w, h) = img.dimensions();
    params.validate(w, h)?;
    let grad = gradient_map(img);
    let edges: Vec<Edge> = (0..(w * h) as usize)
        .filter(|&i| grad.magnitude[i] > 0.0 && grad.magnitude[i] >= params.edge_threshold)
        .map(|i| {
            let (x, y) = ((i % w as usize) as f64 + 0.5, (i / w as usize) as f64 + 0.5);
            let (sin, cos) = grad.direction[i].sin_cos();
            Edge { x, y, cos, sin }
        })
        .collect();
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let k0 = gaussian_kernel(SLICE_SIGMA);
    let center = k0[k0.len() / 2];
    let voter = Voter {
        width: w,
        height: h,
        edges,
        peak_gain: center * center,
    };

    let (wu, hu) = (w as usize, h as usize);
    let mut candidates = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut cur = voter.slice(params.r_min);
    for r in params.r_min..=params.r_max {
        let next = (r < params.r_max).then(|| voter.slice(r + 1));
        let found: Vec<Candidate> = (0..hu)
            .into_par_iter()
            .flat_map_iter(|y| {
                let (prev, cur, next) = (prev.as_deref(), &cur, next.as_deref());
                (0..wu).filter_map(move |x| {
                    let v = cur[y * wu + x];
                    if v < params.accumulator_threshold {
                        return None;
                    }
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= wu as i64 || ny >= hu as i64 {
                                continue;
                            }
                            let j = ny as usize * wu + nx as usize;
                            let neighbours = [
                                prev.map(|s| s[j]),
                                (dx != 0 || dy != 0).then(|| cur[j]),
                                next.map(|s| s[j]),
                            ];
                            if neighbours.into_iter().flatten().any(|n| n > v) {
                                return None;
                            }
                        }
                    }
                    Some(Candidate {
                        x: x as u32,
                        y: y as u32,
                        r,
                        value: v,
                    })
                })
            })
            .collect();
        candidates.extend(found);
        prev = Some(std::mem::replace(&mut cur, next.unwrap_or_default()));
    }

    candidates.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.r.cmp(&b.r))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    let mut kept: Vec<Circle> = Vec::new();
    for c in candidates {
        if kept.len() >= params.max_circles {
            break;
        }
        let circle = Circle {
            x: c.x as f64 + 0.5,
            y: c.y as f64 + 0.5,
            radius: c.r as f64,
            score: c.value.min(1.0),
        };
        let clear = kept.iter().all(|k| {
            (k.x - circle.x).hypot(k.y - circle.y)
                >= params.nms_distance_factor * k.radius.min(circle.radius)
        });
        if clear {
            kept.push(circle);
        }
    }
    log::debug!("hough: {} circles", kept.len());
    Ok(kept)
}
