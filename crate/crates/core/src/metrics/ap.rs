use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::Mask;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Intersection over union; 0 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::InvalidInput(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GtRef<'a> {
    pub image_id: u64,
    pub mask: &'a Mask,
}

#[derive(Debug, Clone, Copy)]
pub struct DetRef<'a> {
    pub image_id: u64,
    pub id: u64,
    pub mask: &'a Mask,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCurve {
    pub iou_threshold: f64,
    pub ap: f64,
    /// Cumulative precision and recall after each detection in rank order.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub curves: Vec<ThresholdCurve>,
}

struct ImageCase {
    /// Detection ranks (indices into the global ranking) in rank order.
    ranks: Vec<usize>,
    /// IoU of each ranked detection against each ground truth of the image.
    ious: Vec<Vec<f64>>,
}

/// True-positive flag for every detection of one image at threshold `t`:
/// detections in rank order take the unmatched ground truth with the
/// highest IoU >= t, ties going to the lower ground-truth index.
fn greedy_match(ious: &[Vec<f64>], n_gt: usize, t: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (g, &v) in row.iter().enumerate() {
                if !taken[g] && v >= t && best.is_none_or(|b| v > row[b]) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// 101-point interpolated area under a precision-recall sequence.
fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        while k < recall.len() && recall[k] < r {
            k += 1;
        }
        if k < recall.len() {
            sum += envelope[k];
        }
    }
    sum / 101.0
}

/// Matches detections to ground truth at every threshold in
/// [`IOU_THRESHOLDS`] and reports AP, AP50, AP75 and the PR curves.
///
/// Detections are ranked globally by descending score, ties by ascending id.
/// With no ground truth at all, AP is 1 when there are no detections and 0
/// otherwise.
pub fn match_and_ap(gt: &[GtRef<'_>], det: &[DetRef<'_>]) -> Result<ApReport> {
    if let Some(d) = det.iter().find(|d| d.score.is_none_or(|s| !s.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "detection {} has no valid score",
            d.id
        )));
    }
    let mut order: Vec<usize> = (0..det.len()).collect();
    order.sort_by(|&a, &b| {
        det[b]
            .score
            .unwrap()
            .total_cmp(&det[a].score.unwrap())
            .then(det[a].id.cmp(&det[b].id))
    });

    let mut gt_by_image: BTreeMap<u64, Vec<&Mask>> = BTreeMap::new();
    for g in gt {
        gt_by_image.entry(g.image_id).or_default().push(g.mask);
    }
    let mut ranks_by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        ranks_by_image
            .entry(det[i].image_id)
            .or_default()
            .push(rank);
    }
    let empty: Vec<&Mask> = Vec::new();
    let images: Vec<(u64, Vec<usize>)> = ranks_by_image.into_iter().collect();
    let cases: Vec<(usize, ImageCase)> = images
        .par_iter()
        .map(|(image_id, ranks)| {
            let gts = gt_by_image.get(image_id).unwrap_or(&empty);
            let ious = ranks
                .iter()
                .map(|&r| {
                    gts.iter()
                        .map(|g| iou(det[order[r]].mask, g))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                gts.len(),
                ImageCase {
                    ranks: ranks.clone(),
                    ious,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let total_gt = gt.len();
    let curves: Vec<ThresholdCurve> = IOU_THRESHOLDS
        .iter()
        .map(|&t| {
            let mut tp = vec![false; det.len()];
            for (n_gt, case) in &cases {
                for (flag, &rank) in greedy_match(&case.ious, *n_gt, t)
                    .into_iter()
                    .zip(&case.ranks)
                {
                    tp[rank] = flag;
                }
            }
            let (mut precision, mut recall) =
                (Vec::with_capacity(tp.len()), Vec::with_capacity(tp.len()));
            let mut hits = 0usize;
            for (k, &flag) in tp.iter().enumerate() {
                hits += flag as usize;
                precision.push(hits as f64 / (k + 1) as f64);
                recall.push(if total_gt == 0 {
                    0.0
                } else {
                    hits as f64 / total_gt as f64
                });
            }
            let ap = if total_gt == 0 {
                if det.is_empty() {
                    1.0
                } else {
                    0.0
                }
            } else {
                interpolated_ap(&precision, &recall)
            };
            ThresholdCurve {
                iou_threshold: t,
                ap,
                precision,
                recall,
            }
        })
        .collect();

    Ok(ApReport {
        ap: curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64,
        ap50: curves[0].ap,
        ap75: curves[5].ap,
        curves,
    })
}
