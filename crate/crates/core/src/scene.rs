//! Scene synthesis: primary-particle sizes, agglomerate geometry and the
//! placement of agglomerates in the image frame.
//!
//! Agglomerates are grown by sequential attachment. A new sphere `j` touches
//! its parent `i` at center distance `(r_i + r_j)(1 - s)` where `s` is the
//! sintering degree, so `s = 0` gives point contact and larger `s` gives
//! deeper interpenetration.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};

/// Margin kept between projected agglomerate bounds and the frame edge.
pub const FRAME_MARGIN: f64 = 5.0;

/// Probability with which the mode-preferred parent is chosen.
const MODE_PREFERENCE: f64 = 0.75;

/// Lognormal primary-particle size law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdSpec {
    /// Geometric mean (median) diameter in px.
    pub d_g: f64,
    /// Geometric standard deviation, ≥ 1.
    pub sigma_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
}

impl PsdSpec {
    pub fn new(d_g: f64, sigma_g: f64) -> Self {
        PsdSpec {
            d_g,
            sigma_g,
            d_min: None,
            d_max: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_g > 0.0 && self.d_g.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "d_g must be > 0, got {}",
                self.d_g
            )));
        }
        if !(self.sigma_g >= 1.0 && self.sigma_g.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sigma_g must be >= 1, got {}",
                self.sigma_g
            )));
        }
        let lo = self.d_min.unwrap_or(0.0);
        let hi = self.d_max.unwrap_or(f64::INFINITY);
        if self.d_min.is_some() && lo <= 0.0 || lo >= hi {
            return Err(Error::InvalidSpec(format!(
                "truncation bounds must satisfy 0 < d_min < d_max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttachmentMode {
    /// Prefers the most recently attached sphere; produces open, chain-like
    /// agglomerates.
    ChainBiased,
    /// Prefers the sphere nearest the current centroid.
    Compact,
    #[default]
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgglomerateSpec {
    /// Inclusive range of primary particles per agglomerate.
    pub particle_count_range: (u32, u32),
    pub psd: PsdSpec,
    pub sintering_degree: f64,
    pub mode: AttachmentMode,
}

impl AgglomerateSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.particle_count_range;
        if lo < 1 || lo > hi {
            return Err(Error::InvalidSpec(format!(
                "particle_count_range must satisfy 1 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=0.95).contains(&self.sintering_degree) {
            return Err(Error::InvalidSpec(format!(
                "sintering_degree must lie in [0, 0.95], got {}",
                self.sintering_degree
            )));
        }
        self.psd.validate()
    }
}

/// Rejection-loop bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub sample_tries: u32,
    pub placement_tries: u32,
    pub scene_tries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            sample_tries: 1000,
            placement_tries: 200,
            scene_tries: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub particle_id: u32,
}

/// An agglomerate in its local frame together with its growth log.
#[derive(Debug, Clone, PartialEq)]
pub struct Agglomerate {
    pub spheres: Vec<Sphere>,
    /// `(parent, child)` index pairs in attachment order.
    pub attachments: Vec<(usize, usize)>,
    pub sintering_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgglomerateRecord {
    pub id: u32,
    pub sintering_degree: f64,
    pub particle_ids: Vec<u32>,
    pub attachments: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spheres: Vec<Sphere>,
    pub agglomerate_of: BTreeMap<u32, u32>,
    pub agglomerates: Vec<AgglomerateRecord>,
    pub image_size: (u32, u32),
    /// Unit vector pointing from the surface towards the light. The camera
    /// looks along +z, so a light "from the viewer" is `(0, 0, -1)`.
    pub light_direction: Vec3,
    pub neck_blend: f64,
    pub seed: u64,
}

impl Scene {
    pub fn empty(width: u32, height: u32) -> Scene {
        Scene {
            spheres: Vec::new(),
            agglomerate_of: BTreeMap::new(),
            agglomerates: Vec::new(),
            image_size: (width, height),
            light_direction: Vec3::new(0.0, 0.0, -1.0),
            neck_blend: 0.0,
            seed: 0,
        }
    }

    /// Appends spheres as one new agglomerate, assigning fresh particle ids.
    /// Returns the agglomerate id.
    pub fn push_agglomerate(&mut self, agg: &Agglomerate, offset: Vec3) -> u32 {
        let agg_id = self.agglomerates.len() as u32 + 1;
        let base = self.spheres.len() as u32 + 1;
        let mut ids = Vec::with_capacity(agg.spheres.len());
        for (i, s) in agg.spheres.iter().enumerate() {
            let id = base + i as u32;
            self.spheres.push(Sphere {
                center: s.center + offset,
                radius: s.radius,
                particle_id: id,
            });
            self.agglomerate_of.insert(id, agg_id);
            ids.push(id);
        }
        self.agglomerates.push(AgglomerateRecord {
            id: agg_id,
            sintering_degree: agg.sintering_degree,
            attachments: agg
                .attachments
                .iter()
                .map(|&(p, c)| (ids[p], ids[c]))
                .collect(),
            particle_ids: ids,
        });
        agg_id
    }

    pub fn sphere(&self, particle_id: u32) -> Option<&Sphere> {
        // Ids are dense and assigned in order by `push_agglomerate`.
        self.spheres
            .get(particle_id.wrapping_sub(1) as usize)
            .filter(|s| s.particle_id == particle_id)
            .or_else(|| self.spheres.iter().find(|s| s.particle_id == particle_id))
    }
}

/// Draws `count` diameters from a lognormal law with median `d_g` and shape
/// `ln σ_g`, re-drawing values outside the truncation bounds.
pub fn sample_diameters<R: Rng + ?Sized>(
    spec: &PsdSpec,
    count: usize,
    max_tries: u32,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let shape = spec.sigma_g.ln();
    let lo = spec.d_min.unwrap_or(0.0);
    let hi = spec.d_max.unwrap_or(f64::INFINITY);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..max_tries.max(1) {
            let z: f64 = StandardNormal.sample(rng);
            let d = spec.d_g * (z * shape).exp();
            if d >= lo && d <= hi {
                accepted = Some(d);
                break;
            }
        }
        match accepted {
            Some(d) => out.push(d),
            None => {
                return Err(Error::InvalidSpec(format!(
                    "no diameter inside [{lo}, {hi}] after {max_tries} draws"
                )))
            }
        }
    }
    Ok(out)
}

fn choose_parent<R: Rng + ?Sized>(
    mode: AttachmentMode,
    spheres: &[Sphere],
    excluded: &BTreeSet<usize>,
    rng: &mut R,
) -> Option<usize> {
    let candidates: Vec<usize> = (0..spheres.len())
        .filter(|i| !excluded.contains(i))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let preferred = match mode {
        AttachmentMode::UniformRandom => None,
        AttachmentMode::ChainBiased => candidates.last().copied(),
        AttachmentMode::Compact => {
            let n = spheres.len() as f64;
            let centroid = spheres.iter().fold(Vec3::ZERO, |acc, s| acc + s.center) * (1.0 / n);
            candidates.iter().copied().min_by(|&a, &b| {
                let da = spheres[a].center.distance(centroid);
                let db = spheres[b].center.distance(centroid);
                da.total_cmp(&db).then(a.cmp(&b))
            })
        }
    };
    match preferred {
        Some(p) if rng.random::<f64>() < MODE_PREFERENCE => Some(p),
        _ => Some(candidates[rng.random_range(0..candidates.len())]),
    }
}

/// Grows one agglomerate by sequential attachment and centers it on the
/// mean of its sphere centers.
pub fn build_agglomerate<R: Rng + ?Sized>(
    spec: &AgglomerateSpec,
    limits: &Limits,
    rng: &mut R,
) -> Result<Agglomerate> {
    spec.validate()?;
    let (lo, hi) = spec.particle_count_range;
    let n = rng.random_range(lo..=hi) as usize;
    let diameters = sample_diameters(&spec.psd, n, limits.sample_tries, rng)?;
    let s = spec.sintering_degree;

    let mut spheres: Vec<Sphere> = Vec::with_capacity(n);
    let mut attachments = Vec::with_capacity(n.saturating_sub(1));
    spheres.push(Sphere {
        center: Vec3::ZERO,
        radius: diameters[0] / 2.0,
        particle_id: 0,
    });

    for (j, &d) in diameters.iter().enumerate().skip(1) {
        let r = d / 2.0;
        let mut tried = BTreeSet::new();
        let placed = 'parents: loop {
            let Some(parent) = choose_parent(spec.mode, &spheres, &tried, rng) else {
                break None;
            };
            let p = spheres[parent];
            let dist = (p.radius + r) * (1.0 - s);
            for _ in 0..limits.placement_tries {
                let c = p.center + Vec3::random_unit(rng) * dist;
                let clear = spheres.iter().enumerate().all(|(k, o)| {
                    k == parent || o.center.distance(c) >= (o.radius + r) * (1.0 - s) - 1e-9
                });
                if clear {
                    break 'parents Some((parent, c));
                }
            }
            tried.insert(parent);
        };
        let Some((parent, center)) = placed else {
            return Err(Error::InvalidSpec(format!(
                "could not attach particle {j}: every parent exhausted its placement tries"
            )));
        };
        spheres.push(Sphere {
            center,
            radius: r,
            particle_id: j as u32,
        });
        attachments.push((parent, j));
    }

    let centroid = spheres.iter().fold(Vec3::ZERO, |acc, s| acc + s.center) * (1.0 / n as f64);
    for s in &mut spheres {
        s.center = s.center - centroid;
    }
    Ok(Agglomerate {
        spheres,
        attachments,
        sintering_degree: s,
    })
}

/// Per-scene rendering parameters carried on the [`Scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub light_direction: Vec3,
    pub neck_blend: f64,
    pub limits: Limits,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            light_direction: Vec3::new(0.0, 0.0, -1.0),
            neck_blend: 0.0,
            limits: Limits::default(),
        }
    }
}

/// How many agglomerates to place.
#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    /// Exact number of agglomerates per spec.
    Counts(Vec<(AgglomerateSpec, u32)>),
    /// Keep adding agglomerates (specs drawn by weight) until the summed
    /// projected sphere area reaches `coverage` of the frame.
    Coverage {
        specs: Vec<(AgglomerateSpec, f64)>,
        coverage: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub scene: Scene,
    /// Agglomerates dropped because no free spot was found.
    pub placement_warnings: u32,
}

/// Stop a coverage-driven fill after this many consecutive placement failures.
const COVERAGE_FAILURE_STREAK: u32 = 10;

fn projected_radius(agg: &Agglomerate) -> f64 {
    agg.spheres
        .iter()
        .map(|s| (s.center.x * s.center.x + s.center.y * s.center.y).sqrt() + s.radius)
        .fold(0.0, f64::max)
}

struct Placer {
    width: f64,
    height: f64,
    placed: Vec<(f64, f64, f64)>,
    tries: u32,
}

impl Placer {
    fn place<R: Rng + ?Sized>(&mut self, radius: f64, rng: &mut R) -> Option<(f64, f64)> {
        let lo = radius + FRAME_MARGIN;
        let (hi_x, hi_y) = (self.width - lo, self.height - lo);
        if hi_x < lo || hi_y < lo {
            return None;
        }
        for _ in 0..self.tries {
            let x = if hi_x > lo {
                rng.random_range(lo..=hi_x)
            } else {
                lo
            };
            let y = if hi_y > lo {
                rng.random_range(lo..=hi_y)
            } else {
                lo
            };
            let free = self
                .placed
                .iter()
                .all(|&(px, py, pr)| ((x - px).powi(2) + (y - py).powi(2)).sqrt() >= pr + radius);
            if free {
                self.placed.push((x, y, radius));
                return Some((x, y));
            }
        }
        None
    }
}

fn rotate(agg: &mut Agglomerate, rot: &Rotation) {
    for s in &mut agg.spheres {
        s.center = rot.apply(s.center);
    }
}

/// Assembles a scene: builds agglomerates, rotates each uniformly at random
/// and places them so that projected bounding circles neither overlap each
/// other nor come closer than [`FRAME_MARGIN`] to the frame edge.
pub fn compose_scene<R: Rng + ?Sized>(
    population: &Population,
    image_size: (u32, u32),
    params: &SceneParams,
    seed: u64,
    rng: &mut R,
) -> Result<ComposedScene> {
    let (w, h) = image_size;
    if w == 0 || h == 0 {
        return Err(Error::InvalidSpec("image size must be positive".into()));
    }
    if !(params.neck_blend >= 0.0 && params.neck_blend.is_finite()) {
        return Err(Error::InvalidSpec("neck_blend must be >= 0".into()));
    }
    let mut scene = Scene::empty(w, h);
    scene.light_direction = params.light_direction.normalized();
    scene.neck_blend = params.neck_blend;
    scene.seed = seed;
    let mut placer = Placer {
        width: w as f64,
        height: h as f64,
        placed: Vec::new(),
        tries: params.limits.scene_tries,
    };
    let mut warnings = 0;

    let mut add = |spec: &AgglomerateSpec, scene: &mut Scene, rng: &mut R| -> Result<Option<f64>> {
        let mut agg = build_agglomerate(spec, &params.limits, rng)?;
        rotate(&mut agg, &Rotation::random(rng));
        let radius = projected_radius(&agg);
        match placer.place(radius, rng) {
            Some((x, y)) => {
                scene.push_agglomerate(&agg, Vec3::new(x, y, 0.0));
                let area = agg
                    .spheres
                    .iter()
                    .map(|s| std::f64::consts::PI * s.radius * s.radius)
                    .sum();
                Ok(Some(area))
            }
            None => Ok(None),
        }
    };

    match population {
        Population::Counts(entries) => {
            for (spec, count) in entries {
                for _ in 0..*count {
                    if add(spec, &mut scene, rng)?.is_none() {
                        warnings += 1;
                    }
                }
            }
        }
        Population::Coverage { specs, coverage } => {
            if !(*coverage > 0.0 && *coverage <= 0.5) {
                return Err(Error::InvalidSpec(format!(
                    "coverage must lie in (0, 0.5], got {coverage}"
                )));
            }
            if specs.is_empty() {
                return Err(Error::InvalidSpec("no agglomerate specs given".into()));
            }
            let total_weight: f64 = specs.iter().map(|(_, wt)| wt.max(0.0)).sum();
            if total_weight <= 0.0 {
                return Err(Error::InvalidSpec("agglomerate weights sum to zero".into()));
            }
            let target = coverage * w as f64 * h as f64;
            let mut covered = 0.0;
            let mut streak = 0;
            while covered < target && streak < COVERAGE_FAILURE_STREAK {
                let mut pick = rng.random::<f64>() * total_weight;
                let mut chosen = &specs[specs.len() - 1].0;
                for (spec, wt) in specs {
                    if pick < wt.max(0.0) {
                        chosen = spec;
                        break;
                    }
                    pick -= wt.max(0.0);
                }
                match add(chosen, &mut scene, rng)? {
                    Some(area) => {
                        covered += area;
                        streak = 0;
                    }
                    None => {
                        warnings += 1;
                        streak += 1;
                    }
                }
            }
        }
    }
    Ok(ComposedScene {
        scene,
        placement_warnings: warnings,
    })
}
