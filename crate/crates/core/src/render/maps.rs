//! Orthographic rendering of a [`Scene`] into per-pixel feature maps.
//!
//! The camera looks along +z; pixel `(x, y)` casts a ray through
//! `(x + 0.5, y + 0.5)`. The particle surface is the zero set of
//!
//! ```text
//! F(p) = min over agglomerates A of  smin_k { |p - c_i| - r_i : i in A }
//! ```
//!
//! where `smin_k` is the polynomial smooth minimum folded over the spheres of
//! one agglomerate in particle order. With `k = 0` this is the exact union of
//! spheres. Blending never crosses agglomerate boundaries.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::geometry::Vec3;
use crate::scene::{Scene, Sphere};

/// Attenuation applied per occluding sphere between a surface point and the light.
pub const SHADOW_FACTOR: f64 = 0.6;
/// At most this many occluders darken a point.
pub const MAX_OCCLUDERS: u32 = 3;
/// Central-difference step for surface normals, px.
pub const NORMAL_STEP: f64 = 0.5;
/// Ray sampling step used to bracket the blended surface, px.
const MARCH_STEP: f64 = 0.5;
const BISECTION_STEPS: u32 = 8;
const TILE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderMaps {
    pub width: u32,
    pub height: u32,
    /// Nearest surface z per pixel, `+∞` for background.
    pub depth: Vec<f32>,
    pub instance_id: Vec<Option<u32>>,
    /// Lambertian term `max(0, n · l)`.
    pub diffuse: Vec<f32>,
    /// Multiplicative light attenuation, 1 where unshadowed.
    pub shadow: Vec<f32>,
    /// Unoccluded projected footprint of every particle, in pixels whose
    /// centers fall inside the projected disk.
    pub footprint: BTreeMap<u32, u64>,
}

impl RenderMaps {
    pub fn background(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        RenderMaps {
            width,
            height,
            depth: vec![f32::INFINITY; n],
            instance_id: vec![None; n],
            diffuse: vec![0.0; n],
            shadow: vec![1.0; n],
            footprint: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn instance_at(&self, x: u32, y: u32) -> Option<u32> {
        self.instance_id[self.index(x, y)]
    }

    pub fn foreground_count(&self) -> usize {
        self.instance_id.iter().filter(|i| i.is_some()).count()
    }
}

/// Polynomial smooth minimum; equals `min(a, b)` when `k = 0` or `|a - b| >= k`.
#[inline]
pub fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let m = a.min(b);
    if k <= 0.0 {
        return m;
    }
    let h = (k - (a - b).abs()).max(0.0);
    m - h * h / (4.0 * k)
}

/// Uniform grid of 2D disks for candidate lookup.
struct DiskGrid {
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl DiskGrid {
    fn new(disks: &[(f64, f64, f64)]) -> DiskGrid {
        if disks.is_empty() {
            return DiskGrid {
                origin: (0.0, 0.0),
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y, r) in disks {
            x0 = x0.min(x - r);
            y0 = y0.min(y - r);
            x1 = x1.max(x + r);
            y1 = y1.max(y + r);
        }
        let cols = ((x1 - x0) / TILE).floor() as usize + 1;
        let rows = ((y1 - y0) / TILE).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, &(x, y, r)) in disks.iter().enumerate() {
            let cx0 = ((x - r - x0) / TILE).floor().max(0.0) as usize;
            let cx1 = (((x + r - x0) / TILE).floor() as usize).min(cols - 1);
            let cy0 = ((y - r - y0) / TILE).floor().max(0.0) as usize;
            let cy1 = (((y + r - y0) / TILE).floor() as usize).min(rows - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * cols + cx].push(i as u32);
                }
            }
        }
        DiskGrid {
            origin: (x0, y0),
            cols,
            rows,
            cells,
        }
    }

    fn query(&self, x: f64, y: f64) -> &[u32] {
        let cx = ((x - self.origin.0) / TILE).floor();
        let cy = ((y - self.origin.1) / TILE).floor();
        if cx < 0.0 || cy < 0.0 || cx as usize >= self.cols || cy as usize >= self.rows {
            return &[];
        }
        &self.cells[cy as usize * self.cols + cx as usize]
    }
}

struct Renderer<'a> {
    spheres: &'a [Sphere],
    agglomerate: Vec<u32>,
    k: f64,
    light: Vec3,
    view_grid: DiskGrid,
    light_grid: DiskGrid,
    light_basis: (Vec3, Vec3),
}

#[derive(Clone, Copy)]
struct Candidate {
    idx: usize,
    lateral_sq: f64,
}

#[derive(Clone, Copy)]
struct PixelOut {
    depth: f32,
    id: Option<u32>,
    diffuse: f32,
    shadow: f32,
}

const BACKGROUND: PixelOut = PixelOut {
    depth: f32::INFINITY,
    id: None,
    diffuse: 0.0,
    shadow: 1.0,
};

impl<'a> Renderer<'a> {
    fn new(scene: &'a Scene) -> Self {
        let k = scene.neck_blend.max(0.0);
        let spheres = &scene.spheres[..];
        let view_disks: Vec<_> = spheres
            .iter()
            .map(|s| (s.center.x, s.center.y, s.radius + k))
            .collect();
        let light = scene.light_direction.normalized();
        let helper = if light.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = light.cross(helper).normalized();
        let v = light.cross(u);
        let light_disks: Vec<_> = spheres
            .iter()
            .map(|s| (s.center.dot(u), s.center.dot(v), s.radius))
            .collect();
        Renderer {
            spheres,
            agglomerate: spheres
                .iter()
                .map(|s| {
                    scene
                        .agglomerate_of
                        .get(&s.particle_id)
                        .copied()
                        .unwrap_or(0)
                })
                .collect(),
            k,
            light,
            view_grid: DiskGrid::new(&view_disks),
            light_grid: DiskGrid::new(&light_disks),
            light_basis: (u, v),
        }
    }

    fn candidates(&self, px: f64, py: f64) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .view_grid
            .query(px, py)
            .iter()
            .filter_map(|&i| {
                let s = &self.spheres[i as usize];
                let d2 = (px - s.center.x).powi(2) + (py - s.center.y).powi(2);
                let reach = s.radius + self.k;
                (d2 < reach * reach).then_some(Candidate {
                    idx: i as usize,
                    lateral_sq: d2,
                })
            })
            .collect();
        out.sort_unstable_by_key(|c| c.idx);
        out
    }

    /// Implicit field over the candidate spheres; also returns the index of
    /// the sphere whose surface is nearest.
    fn field(&self, cands: &[Candidate], p: Vec3) -> (f64, usize) {
        let mut total = f64::INFINITY;
        let mut group_val = f64::INFINITY;
        let mut group = u32::MAX;
        let mut nearest = (f64::INFINITY, usize::MAX);
        for c in cands {
            let s = &self.spheres[c.idx];
            let f = p.distance(s.center) - s.radius;
            if f < nearest.0 {
                nearest = (f, c.idx);
            }
            let agg = self.agglomerate[c.idx];
            if agg != group {
                total = total.min(group_val);
                group = agg;
                group_val = f;
            } else {
                group_val = smooth_min(group_val, f, self.k);
            }
        }
        (total.min(group_val), nearest.1)
    }

    fn render_pixel(&self, x: u32, y: u32) -> PixelOut {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let cands = self.candidates(px, py);
        if cands.is_empty() {
            return BACKGROUND;
        }

        // Exact entry into the union of spheres.
        let mut exact: Option<(f64, usize)> = None;
        for c in &cands {
            let s = &self.spheres[c.idx];
            let r2 = s.radius * s.radius;
            if c.lateral_sq <= r2 {
                let t = s.center.z - (r2 - c.lateral_sq).sqrt();
                if exact.is_none_or(|(bt, _)| t < bt) {
                    exact = Some((t, c.idx));
                }
            }
        }

        let ray = |t: f64| Vec3::new(px, py, t);
        let (t_hit, owner) = if self.k == 0.0 {
            match exact {
                Some(hit) => hit,
                None => return BACKGROUND,
            }
        } else {
            // The blended surface lies between the spheres inflated by k/4
            // (where smin can first reach zero) and the exact union.
            let grow = self.k / 4.0;
            let mut chords: Vec<(f64, f64, f64)> = Vec::new();
            for c in &cands {
                let s = &self.spheres[c.idx];
                let ri = s.radius + grow;
                if c.lateral_sq < ri * ri {
                    let half = (ri * ri - c.lateral_sq).sqrt();
                    chords.push((s.center.z - half, s.center.z + half, s.center.z));
                }
            }
            if chords.is_empty() {
                return BACKGROUND;
            }
            let t_lo = chords.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let inside = |t: f64| self.field(&cands, ray(t)).0 <= 0.0;

            let bracket = match exact {
                Some((t_exact, _)) => {
                    let mut prev = t_lo;
                    let mut found = None;
                    if inside(t_lo) {
                        found = Some((t_lo, t_lo));
                    } else {
                        let mut t = t_lo;
                        while t < t_exact {
                            t = (t + MARCH_STEP).min(t_exact);
                            if inside(t) {
                                found = Some((prev, t));
                                break;
                            }
                            prev = t;
                        }
                    }
                    found.or(Some((prev, t_exact)))
                }
                None => {
                    // Fringe pixel: only the blend can reach it. Samples sit
                    // on a fixed lattice so a larger k never loses one.
                    let mut samples: Vec<f64> = Vec::new();
                    for &(a, b, mid) in &chords {
                        samples.push(mid);
                        let mut t = (a / MARCH_STEP).ceil() * MARCH_STEP;
                        while t <= b {
                            samples.push(t);
                            t += MARCH_STEP;
                        }
                    }
                    samples.sort_by(f64::total_cmp);
                    samples.dedup();
                    let mut prev = t_lo;
                    let mut found = None;
                    for &t in &samples {
                        if inside(t) {
                            found = Some((prev, t));
                            break;
                        }
                        prev = t;
                    }
                    found
                }
            };
            let Some((mut lo, mut hi)) = bracket else {
                return BACKGROUND;
            };
            for _ in 0..BISECTION_STEPS {
                if hi - lo <= 0.0 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let owner = self.field(&cands, ray(hi)).1;
            (hi, owner)
        };

        let p = ray(t_hit);
        let h = NORMAL_STEP;
        let f = |q: Vec3| self.field(&cands, q).0;
        let grad = Vec3::new(
            f(p + Vec3::new(h, 0.0, 0.0)) - f(p - Vec3::new(h, 0.0, 0.0)),
            f(p + Vec3::new(0.0, h, 0.0)) - f(p - Vec3::new(0.0, h, 0.0)),
            f(p + Vec3::new(0.0, 0.0, h)) - f(p - Vec3::new(0.0, 0.0, h)),
        );
        let normal = grad.normalized();
        let diffuse = normal.dot(self.light).clamp(0.0, 1.0);
        let occluders = self.occluders(p, owner);
        PixelOut {
            depth: t_hit as f32,
            id: Some(self.spheres[owner].particle_id),
            diffuse: diffuse as f32,
            shadow: SHADOW_FACTOR.powi(occluders as i32) as f32,
        }
    }

    /// Spheres other than `owner` crossed by the ray from `p` towards the light.
    fn occluders(&self, p: Vec3, owner: usize) -> u32 {
        let (u, v) = self.light_basis;
        let mut count = 0;
        for &i in self.light_grid.query(p.dot(u), p.dot(v)) {
            let i = i as usize;
            if i == owner {
                continue;
            }
            let s = &self.spheres[i];
            let oc = p - s.center;
            let b = oc.dot(self.light);
            let c = oc.dot(oc) - s.radius * s.radius;
            let disc = b * b - c;
            if disc > 0.0 && -b + disc.sqrt() > 1e-6 {
                count += 1;
                if count == MAX_OCCLUDERS {
                    break;
                }
            }
        }
        count
    }
}

fn footprints(scene: &Scene) -> BTreeMap<u32, u64> {
    let (w, h) = scene.image_size;
    scene
        .spheres
        .iter()
        .map(|s| {
            let r2 = s.radius * s.radius;
            let x0 = (s.center.x - s.radius - 0.5).floor().max(0.0) as u32;
            let y0 = (s.center.y - s.radius - 0.5).floor().max(0.0) as u32;
            let x1 = ((s.center.x + s.radius).ceil().max(0.0) as u32).min(w);
            let y1 = ((s.center.y + s.radius).ceil().max(0.0) as u32).min(h);
            let mut n = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - s.center.x;
                    let dy = y as f64 + 0.5 - s.center.y;
                    if dx * dx + dy * dy <= r2 {
                        n += 1;
                    }
                }
            }
            (s.particle_id, n)
        })
        .collect()
}

/// Renders depth, instance, diffuse and shadow maps.
pub fn render_maps(scene: &Scene) -> RenderMaps {
    let (w, h) = scene.image_size;
    let mut maps = RenderMaps::background(w, h);
    maps.footprint = footprints(scene);
    if scene.spheres.is_empty() {
        return maps;
    }
    let renderer = Renderer::new(scene);
    let rows: Vec<Vec<PixelOut>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| renderer.render_pixel(x, y)).collect())
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            let i = y * w as usize + x;
            maps.depth[i] = px.depth;
            maps.instance_id[i] = px.id;
            maps.diffuse[i] = px.diffuse;
            maps.shadow[i] = px.shadow;
        }
    }
    maps
}
