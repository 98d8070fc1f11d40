//! Ground-truth extraction and the annotations/detections interchange format.
//!
//! Both ground truth and detections use one JSON layout:
//!
//! ```json
//! {"schema_version": "1",
//!  "images": [{"id", "file_name", "width", "height"}],
//!  "annotations": [{"id", "image_id", "particle_id", "category_id": 1,
//!                   "rle": [...], "bbox": [x, y, w, h],
//!                   "visible_fraction", "max_feret"}],
//!  "categories": [{"id": 1, "name": "primary_particle"}]}
//! ```
//!
//! Detection files add `"score"` to every annotation and may omit
//! `particle_id` and `visible_fraction`. Ground truth may carry
//! `circle_diameter`, the projected sphere diameter. Either file may carry a
//! top-level `"timing"` object.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, rasterize_hull, Pixel};
use crate::io;
use crate::mask::{BBox, Mask};
use crate::metrics::max_feret;
use crate::render::RenderMaps;
use crate::scene::Scene;

pub const SCHEMA_VERSION: &str = "1";
pub const CATEGORY_ID: u32 = 1;
pub const CATEGORY_NAME: &str = "primary_particle";
pub const DEFAULT_MIN_VISIBLE_FRACTION: f64 = 0.01;

/// One particle's ground truth within an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRecord {
    pub particle_id: u32,
    pub mask: Mask,
    pub bbox: BBox,
    /// Visible pixels over unoccluded footprint pixels, capped at 1.
    pub visible_fraction: f64,
    pub max_feret: f64,
    /// Projected diameter of the generating sphere, when known.
    pub circle_diameter: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub convexify: bool,
    pub min_visible_fraction: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            convexify: true,
            min_visible_fraction: DEFAULT_MIN_VISIBLE_FRACTION,
        }
    }
}

/// Per-particle masks from the instance map, ordered by particle id.
///
/// The visible mask of a particle is the set of pixels it wins. With
/// `convexify`, it is replaced by the pixels whose centers fall in the convex
/// hull of the visible pixel centers. Particles without visible pixels or
/// below `min_visible_fraction` are dropped.
pub fn extract_masks(
    maps: &RenderMaps,
    convexify: bool,
    min_visible_fraction: f64,
) -> Vec<ParticleRecord> {
    let (w, h) = (maps.width, maps.height);
    let mut pixels: BTreeMap<u32, Vec<Pixel>> = BTreeMap::new();
    for x in 0..w {
        for y in 0..h {
            if let Some(id) = maps.instance_at(x, y) {
                pixels.entry(id).or_default().push((x as i64, y as i64));
            }
        }
    }
    let groups: Vec<(u32, Vec<Pixel>)> = pixels.into_iter().collect();
    groups
        .into_par_iter()
        .filter_map(|(particle_id, visible)| {
            let footprint = maps.footprint.get(&particle_id).copied().unwrap_or(0);
            let visible_fraction = if footprint == 0 {
                1.0
            } else {
                (visible.len() as f64 / footprint as f64).min(1.0)
            };
            if visible_fraction < min_visible_fraction {
                return None;
            }
            let mask = if convexify {
                Mask::from_pixels(w, h, &rasterize_hull(&convex_hull(&visible)))
            } else {
                Mask::from_pixels(w, h, &visible)
            };
            Some(ParticleRecord {
                particle_id,
                bbox: mask.bbox().expect("nonempty mask"),
                max_feret: max_feret(&mask).expect("nonempty mask"),
                mask,
                visible_fraction,
                circle_diameter: None,
            })
        })
        .collect()
}

/// [`extract_masks`] plus the projected sphere diameter of each particle.
pub fn annotate_scene(
    scene: &Scene,
    maps: &RenderMaps,
    opts: &ExtractOptions,
) -> Vec<ParticleRecord> {
    let mut records = extract_masks(maps, opts.convexify, opts.min_visible_fraction);
    for r in &mut records {
        r.circle_diameter = scene.sphere(r.particle_id).map(|s| 2.0 * s.radius);
    }
    records
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: u64,
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particle_id: Option<u32>,
    pub category_id: u32,
    pub rle: Vec<u32>,
    pub bbox: [u32; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_fraction: Option<f64>,
    pub max_feret: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle_diameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl AnnotationEntry {
    pub fn ground_truth(id: u64, image_id: u64, r: &ParticleRecord) -> AnnotationEntry {
        AnnotationEntry {
            id,
            image_id,
            particle_id: Some(r.particle_id),
            category_id: CATEGORY_ID,
            rle: r.mask.runs.clone(),
            bbox: r.bbox.to_array(),
            visible_fraction: Some(r.visible_fraction),
            max_feret: r.max_feret,
            circle_diameter: r.circle_diameter,
            score: None,
        }
    }

    /// A scored detection; the box and Feret diameter are derived from the
    /// mask (zero for an empty mask).
    pub fn detection(id: u64, image_id: u64, mask: &Mask, score: f64) -> AnnotationEntry {
        AnnotationEntry {
            id,
            image_id,
            particle_id: None,
            category_id: CATEGORY_ID,
            rle: mask.runs.clone(),
            bbox: mask.bbox().map_or([0; 4], BBox::to_array),
            visible_fraction: None,
            max_feret: max_feret(mask).unwrap_or(0.0),
            circle_diameter: None,
            score: Some(score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

impl Category {
    pub fn primary_particle() -> Category {
        Category {
            id: CATEGORY_ID,
            name: CATEGORY_NAME.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: String,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
    pub categories: Vec<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Value>,
}

impl AnnotationFile {
    pub fn new(images: Vec<ImageEntry>, annotations: Vec<AnnotationEntry>) -> AnnotationFile {
        AnnotationFile {
            schema_version: SCHEMA_VERSION.into(),
            images,
            annotations,
            categories: vec![Category::primary_particle()],
            timing: None,
        }
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Decoded masks, one per annotation, in annotation order.
    pub fn masks(&self) -> Result<Vec<Mask>> {
        let dims: BTreeMap<u64, (u32, u32)> = self
            .images
            .iter()
            .map(|i| (i.id, (i.width, i.height)))
            .collect();
        self.annotations
            .iter()
            .map(|a| {
                let &(w, h) = dims.get(&a.image_id).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "annotation {} refers to unknown image {}",
                        a.id, a.image_id
                    ))
                })?;
                Mask::from_runs(w, h, a.rle.clone())
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Reads and validates a file of the given kind.
    pub fn read(path: &Path, kind: FileKind) -> Result<AnnotationFile> {
        let value = io::read_json_value(path)?;
        validate(&value, kind).map_err(|e| match e {
            Error::Schema { path: p, message } => Error::Schema {
                path: p,
                message: format!("{message} (in {})", path.display()),
            },
            other => other,
        })?;
        serde_json::from_value(value).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    GroundTruth,
    Detections,
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn get<'a>(obj: &'a serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema_err(format!("{path}.{key}"), "missing required field"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| schema_err(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| schema_err(path, "expected an array"))
}

fn as_uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| schema_err(path, "expected a nonnegative integer"))
}

fn as_u32(v: &Value, path: &str) -> Result<u32> {
    u32::try_from(as_uint(v, path)?).map_err(|_| schema_err(path, "integer exceeds 32 bits"))
}

fn as_number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| schema_err(path, "expected a number"))
}

/// Checks a parsed annotations or detections document, reporting the first
/// violation with its JSON path (for example `$.annotations[3].rle`).
pub fn validate(doc: &Value, kind: FileKind) -> Result<()> {
    let root = as_object(doc, "$")?;
    match get(root, "$", "schema_version")? {
        Value::String(s) if s == SCHEMA_VERSION => {}
        _ => {
            return Err(schema_err(
                "$.schema_version",
                format!("expected \"{SCHEMA_VERSION}\""),
            ))
        }
    }

    let mut dims: BTreeMap<u64, (u32, u32)> = BTreeMap::new();
    for (i, img) in as_array(get(root, "$", "images")?, "$.images")?
        .iter()
        .enumerate()
    {
        let p = format!("$.images[{i}]");
        let o = as_object(img, &p)?;
        let id = as_uint(get(o, &p, "id")?, &format!("{p}.id"))?;
        match get(o, &p, "file_name")? {
            Value::String(s) if !s.is_empty() => {}
            _ => {
                return Err(schema_err(
                    format!("{p}.file_name"),
                    "expected a nonempty string",
                ))
            }
        }
        let w = as_u32(get(o, &p, "width")?, &format!("{p}.width"))?;
        let h = as_u32(get(o, &p, "height")?, &format!("{p}.height"))?;
        if w == 0 || h == 0 {
            return Err(schema_err(
                format!("{p}.width"),
                "image dimensions must be positive",
            ));
        }
        if dims.insert(id, (w, h)).is_some() {
            return Err(schema_err(
                format!("{p}.id"),
                format!("duplicate image id {id}"),
            ));
        }
    }

    let mut ids = BTreeSet::new();
    for (i, ann) in as_array(get(root, "$", "annotations")?, "$.annotations")?
        .iter()
        .enumerate()
    {
        let p = format!("$.annotations[{i}]");
        let o = as_object(ann, &p)?;
        let field = |k: &str| format!("{p}.{k}");
        let id = as_uint(get(o, &p, "id")?, &field("id"))?;
        if !ids.insert(id) {
            return Err(schema_err(
                field("id"),
                format!("duplicate annotation id {id}"),
            ));
        }
        let image_id = as_uint(get(o, &p, "image_id")?, &field("image_id"))?;
        let &(w, h) = dims
            .get(&image_id)
            .ok_or_else(|| schema_err(field("image_id"), format!("unknown image id {image_id}")))?;
        if as_uint(get(o, &p, "category_id")?, &field("category_id"))? != CATEGORY_ID as u64 {
            return Err(schema_err(
                field("category_id"),
                format!("expected {CATEGORY_ID}"),
            ));
        }
        let runs = as_array(get(o, &p, "rle")?, &field("rle"))?
            .iter()
            .enumerate()
            .map(|(j, r)| as_u32(r, &format!("{p}.rle[{j}]")))
            .collect::<Result<Vec<u32>>>()?;
        let mask =
            Mask::from_runs(w, h, runs).map_err(|e| schema_err(field("rle"), e.to_string()))?;
        let bbox_v = as_array(get(o, &p, "bbox")?, &field("bbox"))?;
        if bbox_v.len() != 4 {
            return Err(schema_err(field("bbox"), "expected [x, y, w, h]"));
        }
        let bbox = bbox_v
            .iter()
            .enumerate()
            .map(|(j, v)| as_u32(v, &format!("{p}.bbox[{j}]")))
            .collect::<Result<Vec<u32>>>()?;
        let tight = mask.bbox().map_or([0; 4], BBox::to_array);
        if bbox[..] != tight[..] {
            return Err(schema_err(
                field("bbox"),
                format!("not the tight box of the mask, expected {tight:?}"),
            ));
        }
        let feret = as_number(get(o, &p, "max_feret")?, &field("max_feret"))?;
        if !(feret >= 0.0) {
            return Err(schema_err(field("max_feret"), "must be >= 0"));
        }
        let optional = |k: &str| o.get(k).filter(|v| !v.is_null());
        match (kind, optional("particle_id")) {
            (_, Some(v)) => {
                as_u32(v, &field("particle_id"))?;
            }
            (FileKind::GroundTruth, None) => {
                return Err(schema_err(field("particle_id"), "missing required field"))
            }
            (FileKind::Detections, None) => {}
        }
        match (kind, optional("visible_fraction")) {
            (_, Some(v)) => {
                let f = as_number(v, &field("visible_fraction"))?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(schema_err(field("visible_fraction"), "must lie in (0, 1]"));
                }
            }
            (FileKind::GroundTruth, None) => {
                return Err(schema_err(
                    field("visible_fraction"),
                    "missing required field",
                ))
            }
            (FileKind::Detections, None) => {}
        }
        if let Some(v) = optional("circle_diameter") {
            if !(as_number(v, &field("circle_diameter"))? > 0.0) {
                return Err(schema_err(field("circle_diameter"), "must be > 0"));
            }
        }
        match (kind, optional("score")) {
            (_, Some(v)) => {
                let s = as_number(v, &field("score"))?;
                if !(0.0..=1.0).contains(&s) {
                    return Err(schema_err(field("score"), "must lie in [0, 1]"));
                }
            }
            (FileKind::Detections, None) => {
                return Err(schema_err(field("score"), "missing required field"))
            }
            (FileKind::GroundTruth, None) => {}
        }
    }

    let cats = as_array(get(root, "$", "categories")?, "$.categories")?;
    let mut has_primary = false;
    for (i, c) in cats.iter().enumerate() {
        let p = format!("$.categories[{i}]");
        let o = as_object(c, &p)?;
        let id = as_uint(get(o, &p, "id")?, &format!("{p}.id"))?;
        let name = get(o, &p, "name")?
            .as_str()
            .ok_or_else(|| schema_err(format!("{p}.name"), "expected a string"))?;
        has_primary |= id == CATEGORY_ID as u64 && name == CATEGORY_NAME;
    }
    if !has_primary {
        return Err(schema_err(
            "$.categories",
            format!("must contain {{\"id\": {CATEGORY_ID}, \"name\": \"{CATEGORY_NAME}\"}}"),
        ));
    }
    if let Some(t) = root.get("timing") {
        as_object(t, "$.timing")?;
    }
    Ok(())
}

/// Guesses the kind of a document from its first annotation.
pub fn detect_kind(doc: &Value) -> FileKind {
    let scored = doc["annotations"]
        .as_array()
        .and_then(|a| a.first())
        .is_some_and(|a| a.get("score").is_some());
    if scored {
        FileKind::Detections
    } else {
        FileKind::GroundTruth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidInput(format!(
                "unknown split {s:?}, expected train|val|test"
            ))),
        }
    }
}

/// A rendered image with its ground truth.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image_id: u64,
    pub image: GrayImage,
    pub particles: Vec<ParticleRecord>,
}

impl AnnotatedImage {
    pub fn file_name(&self) -> String {
        format!("images/img_{:05}.png", self.image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub file_name: String,
    pub particles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub schema_version: String,
    pub generator_version: String,
    pub seed: u64,
    pub images: Vec<ManifestEntry>,
}

/// Ground-truth document for a set of images; annotation ids run from 1 in
/// image order.
pub fn annotation_file(images: &[AnnotatedImage]) -> AnnotationFile {
    let mut file = AnnotationFile::new(Vec::new(), Vec::new());
    for img in images {
        push_image(&mut file, img);
    }
    file
}

fn push_image(file: &mut AnnotationFile, img: &AnnotatedImage) {
    file.images.push(ImageEntry {
        id: img.image_id,
        file_name: img.file_name(),
        width: img.image.width(),
        height: img.image.height(),
    });
    for r in &img.particles {
        let id = file.annotations.len() as u64 + 1;
        file.annotations
            .push(AnnotationEntry::ground_truth(id, img.image_id, r));
    }
}

/// Directory of one split inside a dataset root.
pub fn split_dir(out_dir: &Path, split: Split) -> PathBuf {
    out_dir.join(split.as_str())
}

/// Streams images of one split to `<out_dir>/<split>/`: PNGs under
/// `images/` as they arrive, then `annotations.json` and `manifest.json` on
/// [`finish`](DatasetWriter::finish).
pub struct DatasetWriter {
    dir: PathBuf,
    file: AnnotationFile,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn new(out_dir: &Path, name: &str, split: Split, seed: u64) -> Result<DatasetWriter> {
        let dir = split_dir(out_dir, split);
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        Ok(DatasetWriter {
            dir,
            file: AnnotationFile::new(Vec::new(), Vec::new()),
            manifest: DatasetManifest {
                name: name.into(),
                split,
                schema_version: SCHEMA_VERSION.into(),
                generator_version: crate::GENERATOR_VERSION.into(),
                seed,
                images: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a batch of images; PNG encoding runs in parallel.
    pub fn add_all(&mut self, images: &[AnnotatedImage]) -> Result<()> {
        let encoded: Vec<Vec<u8>> = images.par_iter().map(|i| io::png_bytes(&i.image)).collect();
        for (img, bytes) in images.iter().zip(&encoded) {
            if self.manifest.images.iter().any(|e| e.id == img.image_id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate image id {}",
                    img.image_id
                )));
            }
            io::write_atomic(&self.dir.join(img.file_name()), bytes)?;
            push_image(&mut self.file, img);
            self.manifest.images.push(ManifestEntry {
                id: img.image_id,
                file_name: img.file_name(),
                particles: img.particles.len(),
            });
        }
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetManifest> {
        self.file.write(&self.dir.join("annotations.json"))?;
        io::write_json(&self.dir.join("manifest.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}

/// Writes `<out_dir>/<split>/images/*.png`, `annotations.json` and
/// `manifest.json`.
pub fn export_dataset(
    images: &[AnnotatedImage],
    out_dir: &Path,
    name: &str,
    split: Split,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut writer = DatasetWriter::new(out_dir, name, split, seed)?;
    writer.add_all(images)?;
    writer.finish()
}

/// Reads a split written by [`export_dataset`].
pub fn import_dataset(out_dir: &Path, split: Split) -> Result<Vec<AnnotatedImage>> {
    let dir = split_dir(out_dir, split);
    let file = AnnotationFile::read(&dir.join("annotations.json"), FileKind::GroundTruth)?;
    let masks = file.masks()?;
    let mut images: Vec<AnnotatedImage> = file
        .images
        .iter()
        .map(|e| {
            Ok(AnnotatedImage {
                image_id: e.id,
                image: io::read_gray(&dir.join(&e.file_name))?,
                particles: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    let index: BTreeMap<u64, usize> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id, i))
        .collect();
    for (a, mask) in file.annotations.iter().zip(masks) {
        let [x, y, w, h] = a.bbox;
        images[index[&a.image_id]].particles.push(ParticleRecord {
            particle_id: a.particle_id.expect("validated"),
            mask,
            bbox: BBox { x, y, w, h },
            visible_fraction: a.visible_fraction.expect("validated"),
            max_feret: a.max_feret,
            circle_diameter: a.circle_diameter,
        });
    }
    Ok(images)
}
