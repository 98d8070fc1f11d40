//! Scene configuration and the per-image synthesis pipeline:
//! compose scene → render maps → composite → degrade → extract ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{annotate_scene, AnnotatedImage, ExtractOptions, Split};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::render::{
    composite, degrade, render_maps, Background, CompositeSpec, Jitter, Noise, RenderMaps, Weights,
};
use crate::rng::{self, tag};
use crate::scene::{
    compose_scene, AgglomerateSpec, AttachmentMode, Limits, Population, PsdSpec, Scene, SceneParams,
};

/// One agglomerate population of a scene config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgglomerateConfig {
    /// Inclusive range of primary particles per agglomerate.
    pub count_range: [u32; 2],
    pub d_g: f64,
    pub sigma_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
    #[serde(default)]
    pub sintering_degree: f64,
    #[serde(default)]
    pub mode: AttachmentMode,
    /// Agglomerates per image when no coverage target is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    /// Relative draw weight under a coverage target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl AgglomerateConfig {
    pub fn spec(&self) -> AgglomerateSpec {
        AgglomerateSpec {
            particle_count_range: (self.count_range[0], self.count_range[1]),
            psd: PsdSpec {
                d_g: self.d_g,
                sigma_g: self.sigma_g,
                d_min: self.d_min,
                d_max: self.d_max,
            },
            sintering_degree: self.sintering_degree,
            mode: self.mode,
        }
    }
}

fn default_light() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

fn default_blur() -> f64 {
    1.0
}

/// Scene configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    /// Target projected particle area as a fraction of the frame, at most
    /// 0.5. Without it, each population places `count` agglomerates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub agglomerates: Vec<AgglomerateConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub neck_blend: f64,
    #[serde(default = "default_blur")]
    pub blur_sigma: f64,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub jitter: Jitter,
    /// Unit vector from the surface towards the light; the camera looks
    /// along +z, so `[0, 0, -1]` lights head-on.
    #[serde(default = "default_light")]
    pub light_direction: [f64; 3],
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub annotation: ExtractOptions,
    /// Image counts per split used when the caller gives none.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<Split, u32>,
}

/// Names of the shipped presets.
pub const PRESETS: [&str; 2] = ["default", "final-training"];

impl SceneConfig {
    pub fn preset(name: &str) -> Result<SceneConfig> {
        let text = match name {
            "default" => include_str!("../presets/default.json"),
            "final-training" => include_str!("../presets/final-training.json"),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown preset {name:?}, expected one of {PRESETS:?}"
                )))
            }
        };
        let cfg: SceneConfig = serde_json::from_str(text).expect("shipped preset parses");
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<SceneConfig> {
        let cfg: SceneConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SceneConfig> {
        let bytes = crate::io::read_bytes(path)?;
        let cfg: SceneConfig = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn composite_spec(&self) -> CompositeSpec {
        CompositeSpec {
            weights: self.weights,
            background: self.background,
            blur_sigma: self.blur_sigma,
            noise: self.noise,
            jitter: self.jitter,
        }
    }

    pub fn scene_params(&self) -> SceneParams {
        let [x, y, z] = self.light_direction;
        SceneParams {
            light_direction: Vec3::new(x, y, z),
            neck_blend: self.neck_blend,
            limits: self.limits,
        }
    }

    pub fn population(&self) -> Result<Population> {
        match self.coverage {
            Some(coverage) => {
                if self.agglomerates.iter().any(|a| a.count.is_some()) {
                    return Err(Error::InvalidSpec(
                        "agglomerate `count` conflicts with a coverage target; use `weight`".into(),
                    ));
                }
                Ok(Population::Coverage {
                    specs: self
                        .agglomerates
                        .iter()
                        .map(|a| (a.spec(), a.weight.unwrap_or(1.0)))
                        .collect(),
                    coverage,
                })
            }
            None => {
                if self.agglomerates.iter().any(|a| a.weight.is_some()) {
                    return Err(Error::InvalidSpec(
                        "agglomerate `weight` needs a coverage target".into(),
                    ));
                }
                Ok(Population::Counts(
                    self.agglomerates
                        .iter()
                        .map(|a| (a.spec(), a.count.unwrap_or(1)))
                        .collect(),
                ))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::InvalidSpec("image_size must be positive".into()));
        }
        if self.agglomerates.is_empty() {
            return Err(Error::InvalidSpec("agglomerates must not be empty".into()));
        }
        for (i, a) in self.agglomerates.iter().enumerate() {
            a.spec()
                .validate()
                .map_err(|e| Error::InvalidSpec(format!("agglomerates[{i}]: {e}")))?;
            if let Some(wt) = a.weight {
                if !(wt > 0.0 && wt.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "agglomerates[{i}].weight must be > 0"
                    )));
                }
            }
        }
        if let Some(c) = self.coverage {
            if !(c > 0.0 && c <= 0.5) {
                return Err(Error::InvalidSpec(format!(
                    "coverage must lie in (0, 0.5], got {c}"
                )));
            }
        }
        if !(self.neck_blend >= 0.0 && self.neck_blend.is_finite()) {
            return Err(Error::InvalidSpec("neck_blend must be >= 0".into()));
        }
        let l = self.light_direction;
        if !(l.iter().all(|v| v.is_finite()) && l.iter().any(|&v| v != 0.0)) {
            return Err(Error::InvalidSpec(
                "light_direction must be a nonzero vector".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.annotation.min_visible_fraction) {
            return Err(Error::InvalidSpec(
                "annotation.min_visible_fraction must lie in [0, 1]".into(),
            ));
        }
        self.composite_spec().validate()?;
        self.population().map(|_| ())
    }
}

/// Everything produced for one image.
#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub annotated: AnnotatedImage,
    pub scene: Scene,
    pub maps: RenderMaps,
    /// Agglomerates dropped for lack of space.
    pub placement_warnings: u32,
}

/// Builds image `index` (0-based) of `split`. The result depends only on
/// `(config, seed, split, index)`; the image id is `index + 1`.
pub fn generate_image(
    config: &SceneConfig,
    seed: u64,
    split: Split,
    index: u64,
) -> Result<GeneratedImage> {
    let [w, h] = config.image_size;
    let path = [split.index(), index];
    let mut scene_rng = rng::substream(seed, &[tag::SCENE, path[0], path[1]]);
    let composed = compose_scene(
        &config.population()?,
        (w, h),
        &config.scene_params(),
        rng::derive(seed, &[tag::SCENE, path[0], path[1]]),
        &mut scene_rng,
    )?;
    let maps = render_maps(&composed.scene);
    let spec = config.composite_spec();
    let intermediate = composite(
        &maps,
        &spec,
        rng::derive(seed, &[tag::COMPOSITE, path[0], path[1]]),
    );
    let image = degrade(
        &intermediate,
        &spec,
        rng::derive(seed, &[tag::DEGRADE, path[0], path[1]]),
    );
    let particles = annotate_scene(&composed.scene, &maps, &config.annotation);
    if composed.placement_warnings > 0 {
        log::info!(
            "{} image {}: {} agglomerate(s) could not be placed",
            split.as_str(),
            index + 1,
            composed.placement_warnings
        );
    }
    Ok(GeneratedImage {
        annotated: AnnotatedImage {
            image_id: index + 1,
            image,
            particles,
        },
        scene: composed.scene,
        maps,
        placement_warnings: composed.placement_warnings,
    })
}

/// Images `range` of a split, in index order.
pub fn generate_batch(
    config: &SceneConfig,
    seed: u64,
    split: Split,
    range: std::ops::Range<u64>,
) -> Result<Vec<GeneratedImage>> {
    range
        .into_par_iter()
        .map(|i| generate_image(config, seed, split, i))
        .collect()
}
