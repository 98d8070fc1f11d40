//! Weighted compositing of the feature maps and the image degradation chain.

use image::GrayImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maps::RenderMaps;
use crate::rng::{self, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub diffuse: f64,
    pub shadow: f64,
    pub background: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            diffuse: 0.9,
            shadow: 1.0,
            background: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Background {
    /// Mean background level in [0, 1].
    pub base: f64,
    /// Peak-to-peak amplitude of the value-noise texture.
    pub amplitude: f64,
    /// Lattice spacing of the texture, px.
    pub scale: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            base: 0.15,
            amplitude: 0.1,
            scale: 48.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Noise {
    /// Standard deviation of additive Gaussian noise (intensity units).
    pub gaussian: f64,
    /// Shot-noise scale λ: variance is `intensity / λ`; 0 disables.
    pub poisson_scale: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            gaussian: 0.03,
            poisson_scale: 400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    /// Additive brightness offset range.
    pub brightness: (f64, f64),
    /// Contrast factor range, applied about mid-gray.
    pub contrast: (f64, f64),
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            brightness: (-0.05, 0.05),
            contrast: (0.9, 1.1),
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        brightness: (0.0, 0.0),
        contrast: (1.0, 1.0),
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CompositeSpec {
    pub weights: Weights,
    pub background: Background,
    pub blur_sigma: f64,
    pub noise: Noise,
    pub jitter: Jitter,
}

impl CompositeSpec {
    /// No texture, blur, noise or jitter.
    pub fn clean() -> Self {
        CompositeSpec {
            weights: Weights::default(),
            background: Background {
                amplitude: 0.0,
                ..Background::default()
            },
            blur_sigma: 0.0,
            noise: Noise {
                gaussian: 0.0,
                poisson_scale: 0.0,
            },
            jitter: Jitter::NONE,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(crate::Error::InvalidSpec(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        unit("weights.diffuse", self.weights.diffuse)?;
        unit("weights.shadow", self.weights.shadow)?;
        unit("weights.background", self.weights.background)?;
        unit("background.base", self.background.base)?;
        unit("noise.gaussian", self.noise.gaussian)?;
        if !(self.blur_sigma >= 0.0) || !(self.noise.poisson_scale >= 0.0) {
            return Err(crate::Error::InvalidSpec(
                "blur_sigma and noise.poisson_scale must be >= 0".into(),
            ));
        }
        if !(self.background.scale > 0.0) {
            return Err(crate::Error::InvalidSpec(
                "background.scale must be > 0".into(),
            ));
        }
        let (b0, b1) = self.jitter.brightness;
        let (c0, c1) = self.jitter.contrast;
        if b0 > b1 || c0 > c1 || c0 < 0.0 {
            return Err(crate::Error::InvalidSpec(
                "jitter ranges must be ordered, contrast >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Grayscale float image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayF {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl GrayF {
    pub fn filled(width: u32, height: u32, v: f64) -> Self {
        GrayF {
            width,
            height,
            data: vec![v; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

#[inline]
fn lattice(key: u64, i: i64, j: i64) -> f64 {
    let h = splitmix64(key ^ splitmix64((i as u64) ^ splitmix64(j as u64).rotate_left(17)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Value noise in [0, 1): hashed values on the integer lattice, bilinearly
/// interpolated.
pub fn value_noise(key: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (i, j) = (fx as i64, fy as i64);
    let a = lattice(key, i, j);
    let b = lattice(key, i + 1, j);
    let c = lattice(key, i, j + 1);
    let d = lattice(key, i + 1, j + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Combines the maps into an intermediate image in [0, 1].
///
/// Background pixels take `w_b * (base + amplitude * (noise - 1/2))`;
/// particle pixels take `w_d * diffuse * shadow^w_s`. The result is clamped.
pub fn composite(maps: &RenderMaps, spec: &CompositeSpec, key: u64) -> GrayF {
    let (w, h) = (maps.width, maps.height);
    let wt = spec.weights;
    let bg = spec.background;
    let noise_key = rng::derive(key, &[0]);
    let mut out = GrayF::filled(w, h, 0.0);
    out.data
        .par_chunks_mut(w.max(1) as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let i = y * w as usize + x;
                let value = if maps.instance_id[i].is_some() {
                    wt.diffuse * maps.diffuse[i] as f64 * (maps.shadow[i] as f64).powf(wt.shadow)
                } else {
                    let texture = if bg.amplitude != 0.0 {
                        let n = value_noise(
                            noise_key,
                            (x as f64 + 0.5) / bg.scale,
                            (y as f64 + 0.5) / bg.scale,
                        );
                        bg.amplitude * (n - 0.5)
                    } else {
                        0.0
                    };
                    wt.background * (bg.base + texture)
                };
                *v = value.clamp(0.0, 1.0);
            }
        });
    out
}

/// Normalized 1D Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &GrayF, sigma: f64) -> GrayF {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = GrayF::filled(img.width, img.height, 0.0);
    tmp.data
        .par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(y, row)| {
            let src = &img.data[y * w as usize..(y + 1) * w as usize];
            for (x, out) in row.iter_mut().enumerate() {
                *out = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| src[(x as i64 + k as i64 - r).clamp(0, w - 1) as usize] * kv)
                    .sum();
            }
        });
    let mut out = GrayF::filled(img.width, img.height, 0.0);
    out.data
        .par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| {
                        let yy = (y as i64 + k as i64 - r).clamp(0, h - 1) as usize;
                        tmp.data[yy * w as usize + x] * kv
                    })
                    .sum();
            }
        });
    out
}

/// Round-half-up quantization of a [0, 1] value to 8 bits.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Blur, shot noise, Gaussian noise, brightness/contrast jitter, clamp and
/// 8-bit quantization.
pub fn degrade(img: &GrayF, spec: &CompositeSpec, key: u64) -> GrayImage {
    let blurred = gaussian_blur(img, spec.blur_sigma);
    let mut jitter_rng = rng::substream(key, &[1]);
    let draw = |rng: &mut rng::StreamRng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let brightness = draw(&mut jitter_rng, spec.jitter.brightness);
    let contrast = draw(&mut jitter_rng, spec.jitter.contrast);
    let apply_jitter = brightness != 0.0 || contrast != 1.0;
    let noise_key = rng::derive(key, &[2]);
    let lambda = spec.noise.poisson_scale;
    let sigma_n = spec.noise.gaussian;

    let pixels: Vec<u8> = blurred
        .data
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut v = v;
            let i = i as u64;
            if lambda > 0.0 {
                v += (v.max(0.0) / lambda).sqrt() * rng::normal_f64(noise_key, 2 * i);
            }
            if sigma_n > 0.0 {
                v += sigma_n * rng::normal_f64(noise_key, 2 * i + 1);
            }
            if apply_jitter {
                v = (v - 0.5) * contrast + 0.5 + brightness;
            }
            quantize(v)
        })
        .collect();
    GrayImage::from_raw(img.width, img.height, pixels).expect("buffer matches dimensions")
}
