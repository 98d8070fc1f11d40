//! Independent reference implementations shared by the metric tests.

use pf_core::mask::{encode_rle, Mask, Raster};
use pf_core::metrics::{iou, match_and_ap, DetRef, GtRef, IOU_THRESHOLDS};
use pf_core::rng;
use rand::Rng;

pub fn rect(w: u32, h: u32, x0: u32, y0: u32, rw: u32, rh: u32) -> Mask {
    encode_rle(&Raster::from_fn(w, h, |x, y| {
        x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh
    }))
}

/// Largest pixel-center distance over all foreground pairs, plus one.
pub fn brute_feret(m: &Mask) -> f64 {
    let px = m.pixels();
    let mut best = 0i64;
    for a in &px {
        for b in &px {
            best = best.max((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2));
        }
    }
    (best as f64).sqrt() + 1.0
}

/// AP reference implementation: exhaustive search over assignments, then a
/// direct 101-point interpolation.
pub mod ap {
    use super::*;

    pub struct Obj {
        pub image: u64,
        pub mask: Mask,
    }

    pub struct Det {
        pub image: u64,
        pub id: u64,
        pub score: f64,
        pub mask: Mask,
    }

    /// Best assignment in rank order under the key `(iou, -gt_index)`: the
    /// lexicographically largest key sequence over every injective partial
    /// assignment honoring the threshold and image grouping.
    /// Matched ground-truth index per ranked detection.
    type Assignment = Vec<Option<usize>>;

    fn best_assignment(ranked: &[&Det], gts: &[Obj], t: f64) -> Vec<Option<usize>> {
        fn rec(
            k: usize,
            ranked: &[&Det],
            gts: &[Obj],
            t: f64,
            used: &mut Vec<bool>,
            cur: &mut Vec<Option<usize>>,
            best: &mut Option<(Vec<(f64, i64)>, Assignment)>,
        ) {
            if k == ranked.len() {
                let key: Vec<(f64, i64)> = cur
                    .iter()
                    .zip(ranked)
                    .map(|(g, d)| match g {
                        Some(g) => (iou(&d.mask, &gts[*g].mask).unwrap(), -(*g as i64)),
                        None => (-1.0, i64::MIN),
                    })
                    .collect();
                let better = match best {
                    None => true,
                    Some((bk, _)) => key
                        .iter()
                        .zip(bk.iter())
                        .find(|(a, b)| a != b)
                        .is_some_and(|(a, b)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)),
                };
                if better {
                    *best = Some((key, cur.clone()));
                }
                return;
            }
            cur.push(None);
            rec(k + 1, ranked, gts, t, used, cur, best);
            cur.pop();
            for g in 0..gts.len() {
                if used[g] || gts[g].image != ranked[k].image {
                    continue;
                }
                if iou(&ranked[k].mask, &gts[g].mask).unwrap() >= t {
                    used[g] = true;
                    cur.push(Some(g));
                    rec(k + 1, ranked, gts, t, used, cur, best);
                    cur.pop();
                    used[g] = false;
                }
            }
        }
        let mut best = None;
        rec(
            0,
            ranked,
            gts,
            t,
            &mut vec![false; gts.len()],
            &mut Vec::new(),
            &mut best,
        );
        best.unwrap().1
    }

    pub fn ap(gts: &[Obj], dets: &[Det], t: f64) -> f64 {
        if gts.is_empty() {
            return if dets.is_empty() { 1.0 } else { 0.0 };
        }
        let mut ranked: Vec<&Det> = dets.iter().collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        let assignment = best_assignment(&ranked, gts, t);
        let mut points = Vec::new();
        let mut tp = 0;
        for (k, a) in assignment.iter().enumerate() {
            tp += a.is_some() as usize;
            points.push((tp as f64 / gts.len() as f64, tp as f64 / (k + 1) as f64));
        }
        (0..=100)
            .map(|i| {
                let r = i as f64 / 100.0;
                points
                    .iter()
                    .filter(|p| p.0 >= r)
                    .map(|p| p.1)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 101.0
    }

    fn random_rect<R: Rng>(r: &mut R, size: u32) -> Mask {
        let (x, y) = (r.random_range(0..size - 2), r.random_range(0..size - 2));
        let (w, h) = (r.random_range(1..=size - x), r.random_range(1..=size - y));
        rect(size, size, x, y, w.min(6), h.min(6))
    }

    /// One or two 10×10 images with at most four objects and four
    /// detections each; detections often shadow a ground-truth box.
    pub fn random_instance<R: Rng>(r: &mut R) -> (Vec<Obj>, Vec<Det>) {
        let images = r.random_range(1..=2u64);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for image in 1..=images {
            for _ in 0..r.random_range(0..=4) {
                gts.push(Obj {
                    image,
                    mask: random_rect(r, 10),
                });
            }
            for _ in 0..r.random_range(0..=4) {
                let mask = match gts.iter().rfind(|g| g.image == image) {
                    Some(g) if r.random_bool(0.6) => {
                        let m = g.mask.bbox().unwrap();
                        let dx = r.random_range(0..=1);
                        rect(10, 10, (m.x + dx).min(9), m.y, m.w, m.h)
                    }
                    _ => random_rect(r, 10),
                };
                dets.push(Det {
                    image,
                    id: dets.len() as u64 + 1,
                    // Coarse scores so ties occur.
                    score: r.random_range(0..4) as f64 / 4.0,
                    mask,
                });
            }
        }
        (gts, dets)
    }

    /// Checks `match_and_ap` against the exhaustive oracle at every IoU
    /// threshold on `cases` random instances; returns the number checked.
    pub fn compare_random_instances(seed: u64, cases: usize) -> Result<usize, String> {
        let mut r = rng::substream(seed, &[]);
        for case in 0..cases {
            let (gts, dets) = random_instance(&mut r);
            let g: Vec<GtRef> = gts
                .iter()
                .map(|o| GtRef {
                    image_id: o.image,
                    mask: &o.mask,
                })
                .collect();
            let d: Vec<DetRef> = dets
                .iter()
                .map(|o| DetRef {
                    image_id: o.image,
                    id: o.id,
                    mask: &o.mask,
                    score: Some(o.score),
                })
                .collect();
            let report = match_and_ap(&g, &d).map_err(|e| e.to_string())?;
            for (curve, &t) in report.curves.iter().zip(IOU_THRESHOLDS.iter()) {
                let expected = ap(&gts, &dets, t);
                if (curve.ap - expected).abs() >= 1e-9 {
                    return Err(format!(
                        "case {case} at IoU {t}: {} vs {expected}",
                        curve.ap
                    ));
                }
            }
            if report.ap > report.ap50 + 1e-12 || report.ap75 > report.ap50 + 1e-12 {
                return Err(format!("case {case}: AP summary out of order"));
            }
        }
        Ok(cases)
    }
}
