//! Detector evaluation against ground truth: AP family, size statistics,
//! percentage errors and the per-sample report rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationFile;
use crate::error::{Error, Result};
use crate::mask::{decode_rle, Mask, Raster};
use crate::metrics::{
    self, component_solidities, mape, match_and_ap, percentage_error, DetRef, GtRef, PsdStats,
};

/// Which ground-truth diameter the detected sizes are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceDiameter {
    /// Max Feret diameter of the ground-truth mask.
    #[default]
    Feret,
    /// Projected diameter of the generating sphere.
    Circle,
}

/// Wall-clock timing of a detector run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub images: u64,
    pub particles: u64,
    pub repetitions: u32,
    pub seconds_mean: f64,
    pub seconds_std: f64,
    pub images_per_second: f64,
    pub particles_per_second: f64,
}

impl Timing {
    /// Summarizes repeated wall-clock measurements of one full run
    /// (population standard deviation).
    pub fn from_runs(images: u64, particles: u64, seconds: &[f64]) -> Timing {
        let n = seconds.len().max(1) as f64;
        let mean = seconds.iter().sum::<f64>() / n;
        let var = seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let rate = |count: u64| if mean > 0.0 { count as f64 / mean } else { 0.0 };
        Timing {
            images,
            particles,
            repetitions: seconds.len() as u32,
            seconds_mean: mean,
            seconds_std: var.sqrt(),
            images_per_second: rate(images),
            particles_per_second: rate(particles),
        }
    }
}

/// One report row; size statistics are those of the detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    /// Mean solidity of the ground-truth agglomerates (connected components
    /// of the union of ground-truth masks).
    pub mean_solidity: Option<f64>,
    pub d_g: Option<f64>,
    pub sigma_g: Option<f64>,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "ε_dg")]
    pub eps_dg: Option<f64>,
    #[serde(rename = "ε_sg")]
    pub eps_sg: Option<f64>,
    #[serde(rename = "ε_N")]
    pub eps_n: Option<f64>,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDetail {
    pub sample_id: String,
    pub reference: Option<PsdStats>,
    pub detected: Option<PsdStats>,
    pub ap_report: metrics::ApReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mapes {
    pub d_g: Option<f64>,
    pub sigma_g: Option<f64>,
    #[serde(rename = "N")]
    pub n: Option<f64>,
    /// Samples entering each MAPE.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub reference_diameter: ReferenceDiameter,
    pub rows: Vec<SampleRow>,
    pub mape: Mapes,
    pub details: Vec<SampleDetail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

pub const CSV_HEADER: [&str; 11] = [
    "sample_id",
    "mean_solidity",
    "d_g",
    "sigma_g",
    "N",
    "ε_dg",
    "ε_sg",
    "ε_N",
    "ap",
    "ap50",
    "ap75",
];

impl EvalReport {
    /// One CSV row per sample; missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells = [
                csv_escape(&r.sample_id),
                opt(r.mean_solidity),
                opt(r.d_g),
                opt(r.sigma_g),
                r.n.to_string(),
                opt(r.eps_dg),
                opt(r.eps_sg),
                opt(r.eps_n),
                r.ap.to_string(),
                r.ap50.to_string(),
                r.ap75.to_string(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// How annotations are grouped into samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// All images form one sample.
    #[default]
    WholeSet,
    /// Every image is its own sample.
    PerImage,
}

struct Sample<'a> {
    id: String,
    image_ids: Vec<u64>,
    gt: Vec<(u64, &'a crate::annotation::AnnotationEntry, Mask)>,
    det: Vec<(u64, &'a crate::annotation::AnnotationEntry, Mask)>,
}

/// Evaluates detections against ground truth. Both files must describe the
/// same images (matched by id, with equal dimensions).
pub fn evaluate(
    gt: &AnnotationFile,
    det: &AnnotationFile,
    sample_id: &str,
    grouping: Grouping,
    reference: ReferenceDiameter,
) -> Result<EvalReport> {
    for img in &det.images {
        match gt.image(img.id) {
            Some(g) if (g.width, g.height) == (img.width, img.height) => {}
            Some(_) => {
                return Err(Error::InvalidInput(format!(
                    "image {} has different dimensions in ground truth and detections",
                    img.id
                )))
            }
            None => {
                return Err(Error::InvalidInput(format!(
                    "detections refer to unknown image {}",
                    img.id
                )))
            }
        }
    }
    let gt_masks = gt.masks()?;
    let det_masks = det.masks()?;
    let gt_items: Vec<_> = gt
        .annotations
        .iter()
        .zip(gt_masks)
        .map(|(a, m)| (a.image_id, a, m))
        .collect();
    let det_items: Vec<_> = det
        .annotations
        .iter()
        .zip(det_masks)
        .map(|(a, m)| (a.image_id, a, m))
        .collect();

    let samples: Vec<Sample> = match grouping {
        Grouping::WholeSet => vec![Sample {
            id: sample_id.to_string(),
            image_ids: gt.images.iter().map(|i| i.id).collect(),
            gt: gt_items,
            det: det_items,
        }],
        Grouping::PerImage => {
            let mut by_image: BTreeMap<u64, Sample> = gt
                .images
                .iter()
                .map(|i| {
                    (
                        i.id,
                        Sample {
                            id: format!("{sample_id}/{}", i.file_name),
                            image_ids: vec![i.id],
                            gt: Vec::new(),
                            det: Vec::new(),
                        },
                    )
                })
                .collect();
            for item in gt_items {
                by_image
                    .get_mut(&item.0)
                    .expect("validated image id")
                    .gt
                    .push(item);
            }
            for item in det_items {
                by_image
                    .get_mut(&item.0)
                    .expect("validated image id")
                    .det
                    .push(item);
            }
            by_image.into_values().collect()
        }
    };

    let mut rows = Vec::new();
    let mut details = Vec::new();
    for s in &samples {
        let (row, detail) = evaluate_sample(gt, s, reference)?;
        rows.push(row);
        details.push(detail);
    }
    let column = |f: fn(&SampleRow) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (v.len() == rows.len() && !v.is_empty()).then(|| mape(&v).expect("nonempty"))
    };
    let mapes = Mapes {
        d_g: column(|r| r.eps_dg),
        sigma_g: column(|r| r.eps_sg),
        n: column(|r| r.eps_n),
        samples: rows.len(),
    };
    let timing = det
        .timing
        .as_ref()
        .and_then(|t| serde_json::from_value::<Timing>(t.clone()).ok());
    Ok(EvalReport {
        reference_diameter: reference,
        rows,
        mape: mapes,
        details,
        timing,
    })
}

fn evaluate_sample(
    gt_file: &AnnotationFile,
    s: &Sample<'_>,
    reference: ReferenceDiameter,
) -> Result<(SampleRow, SampleDetail)> {
    let gt_refs: Vec<GtRef> =
        s.gt.iter()
            .map(|(img, _, m)| GtRef {
                image_id: *img,
                mask: m,
            })
            .collect();
    let det_refs: Vec<DetRef> = s
        .det
        .iter()
        .map(|(img, a, m)| DetRef {
            image_id: *img,
            id: a.id,
            mask: m,
            score: a.score,
        })
        .collect();
    let ap_report = match_and_ap(&gt_refs, &det_refs)?;

    let reference_d: Vec<f64> =
        s.gt.iter()
            .map(|(_, a, _)| match reference {
                ReferenceDiameter::Feret => Ok(a.max_feret),
                ReferenceDiameter::Circle => a.circle_diameter.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "ground-truth annotation {} has no circle_diameter",
                        a.id
                    ))
                }),
            })
            .collect::<Result<_>>()?;
    let detected_d: Vec<f64> = s
        .det
        .iter()
        .filter(|(_, a, _)| a.max_feret > 0.0)
        .map(|(_, a, _)| a.max_feret)
        .collect();
    let ref_stats = (!reference_d.is_empty())
        .then(|| metrics::psd_stats(&reference_d))
        .transpose()?;
    let det_stats = (!detected_d.is_empty())
        .then(|| metrics::psd_stats(&detected_d))
        .transpose()?;

    let mut solidities = Vec::new();
    for &image_id in &s.image_ids {
        let img = gt_file.image(image_id).expect("sample image exists");
        let mut union = Raster::new(img.width, img.height);
        for (_, _, m) in s.gt.iter().filter(|(i, _, _)| *i == image_id) {
            for (x, y) in decode_rle(m)?.pixels() {
                union.set(x as u32, y as u32, true);
            }
        }
        solidities.extend(component_solidities(&union));
    }
    let mean_solidity =
        (!solidities.is_empty()).then(|| solidities.iter().sum::<f64>() / solidities.len() as f64);

    let eps = |f: fn(&PsdStats) -> f64| -> Result<Option<f64>> {
        match (&det_stats, &ref_stats) {
            (Some(d), Some(r)) => percentage_error(f(d), f(r)).map(Some),
            _ => Ok(None),
        }
    };
    let eps_n = match &ref_stats {
        Some(r) => Some(percentage_error(
            detected_d.len() as f64,
            r.n_particles as f64,
        )?),
        None => None,
    };
    let row = SampleRow {
        sample_id: s.id.clone(),
        mean_solidity,
        d_g: det_stats.map(|d| d.d_g),
        sigma_g: det_stats.map(|d| d.sigma_g),
        n: detected_d.len() as u64,
        eps_dg: eps(|p| p.d_g)?,
        eps_sg: eps(|p| p.sigma_g)?,
        eps_n,
        ap: ap_report.ap,
        ap50: ap_report.ap50,
        ap75: ap_report.ap75,
    };
    let detail = SampleDetail {
        sample_id: s.id.clone(),
        reference: ref_stats,
        detected: det_stats,
        ap_report,
    };
    Ok((row, detail))
}

/// Ground truth restated as detections with unit score.
pub fn as_detections(gt: &AnnotationFile) -> Result<AnnotationFile> {
    let masks = gt.masks()?;
    let annotations = gt
        .annotations
        .iter()
        .zip(&masks)
        .map(|(a, m)| crate::annotation::AnnotationEntry::detection(a.id, a.image_id, m, 1.0))
        .collect();
    Ok(AnnotationFile::new(gt.images.clone(), annotations))
}
