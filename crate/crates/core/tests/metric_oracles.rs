use pf_core::mask::{encode_rle, Mask, Raster};
use pf_core::metrics::{
    iou, kl_divergence, kl_report, match_and_ap, max_feret, psd_stats, solidity, DetRef, GtRef,
    Histogram,
};
use pf_core::rng;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, LogNormal};

#[path = "support/oracles.rs"]
mod oracles;

use oracles::{brute_feret, rect};

#[test]
fn shifted_squares_iou_is_one_third() {
    let a = rect(30, 20, 2, 2, 10, 10);
    let b = rect(30, 20, 7, 2, 10, 10);
    assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
}

#[test]
fn rectangle_feret_matches_brute_force() {
    let m = rect(12, 12, 1, 2, 3, 7);
    let f = max_feret(&m).unwrap();
    assert!((f - brute_feret(&m)).abs() < 0.01);
    assert!((f - (40f64.sqrt() + 1.0)).abs() < 0.01);
}

fn disk(size: u32, r: f64) -> Mask {
    let c = size as f64 / 2.0;
    encode_rle(&Raster::from_fn(size, size, |x, y| {
        (x as f64 + 0.5 - c).hypot(y as f64 + 0.5 - c) <= r
    }))
}

#[test]
fn disk_feret_and_solidity() {
    let m = disk(128, 50.0);
    assert!((max_feret(&m).unwrap() - 100.0).abs() <= 1.5);
    assert!(solidity(&m).unwrap().solidity >= 0.98);
}

#[test]
fn l_tromino_solidity() {
    // Unit cells (0,0), (0,1), (1,1) scaled by 40.
    let raster = Raster::from_fn(80, 80, |x, y| !(x >= 40 && y < 40));
    let m = solidity(&encode_rle(&raster)).unwrap();
    assert_eq!(m.area, 4800);
    assert!((m.solidity - 6.0 / 7.0).abs() < 0.01, "{}", m.solidity);
    // Rasterized hull oracle: pixel centers inside the hull of the extreme centers.
    let inside = |x: f64, y: f64| {
        x >= 0.5 && y >= 0.5 && x <= 79.5 && y <= 79.5 && (y - 0.5) >= (x - 39.5) - 1e-9
    };
    let oracle = (0..80)
        .flat_map(|x| (0..80).map(move |y| (x as f64 + 0.5, y as f64 + 0.5)))
        .filter(|&(x, y)| inside(x, y))
        .count() as u64;
    assert_eq!(m.convex_area, oracle);
}

#[test]
fn psd_hand_cases() {
    let s = psd_stats(&[10.0, 10.0, 10.0]).unwrap();
    assert!((s.d_g - 10.0).abs() < 1e-12);
    assert_eq!((s.sigma_g, s.n_particles), (1.0, 3));
    let e = std::f64::consts::E;
    let s = psd_stats(&[e, e.powi(3)]).unwrap();
    assert!((s.d_g - e * e).abs() < 1e-12);
    assert!((s.sigma_g - e).abs() < 1e-12);
}

#[test]
fn kl_hand_case() {
    let edges = vec![0.0, 1.0, 2.0, 3.0];
    let p = Histogram::new(edges.clone(), vec![0.5, 0.25, 0.25]).unwrap();
    let q = Histogram::new(edges, vec![0.25, 0.5, 0.25]).unwrap();
    assert!((kl_divergence(&p, &q).unwrap() - 0.25 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
}

fn binned(cdf: impl Fn(f64) -> f64, edges: &[f64]) -> Vec<f64> {
    let mass: Vec<f64> = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

#[test]
fn broad_mixture_against_narrow_lognormal() {
    let edges = Histogram::uniform_edges(5.0, 125.0, 64);
    let a = LogNormal::new(20f64.ln(), 1.4f64.ln()).unwrap();
    let b = LogNormal::new(40f64.ln(), 1.3f64.ln()).unwrap();
    let c = LogNormal::new(30f64.ln(), 1.3f64.ln()).unwrap();
    let p = Histogram::new(
        edges.clone(),
        binned(|x| 0.5 * a.cdf(x) + 0.5 * b.cdf(x), &edges),
    )
    .unwrap();
    let q = Histogram::new(edges.clone(), binned(|x| c.cdf(x), &edges)).unwrap();
    let report = kl_report(&p, &q).unwrap();
    // Independently computed with scipy.stats.lognorm on the same bins.
    assert!(
        (report.value - 0.517_364_803_898_145_2).abs() < 1e-6,
        "{}",
        report.value
    );
    assert!((0.4..=0.9).contains(&report.value));
    assert_eq!(report.excluded_bins, 0);
}

#[test]
fn mismatched_edges_are_rejected() {
    let p = Histogram::new(vec![0.0, 1.0], vec![1.0]).unwrap();
    let q = Histogram::new(vec![0.0, 2.0], vec![1.0]).unwrap();
    assert!(kl_divergence(&p, &q).is_err());
}

#[test]
fn greedy_ap_equals_exhaustive_oracle() {
    assert_eq!(oracles::ap::compare_random_instances(314, 400), Ok(400));
}

#[test]
fn perfect_plus_miss_on_two_objects() {
    let gts = [rect(20, 20, 0, 0, 5, 5), rect(20, 20, 10, 10, 5, 5)];
    let dets = [rect(20, 20, 0, 0, 5, 5), rect(20, 20, 0, 14, 3, 3)];
    let g: Vec<GtRef> = gts
        .iter()
        .map(|m| GtRef {
            image_id: 1,
            mask: m,
        })
        .collect();
    let d: Vec<DetRef> = dets
        .iter()
        .zip([0.9, 0.1])
        .enumerate()
        .map(|(i, (m, s))| DetRef {
            image_id: 1,
            id: i as u64,
            mask: m,
            score: Some(s),
        })
        .collect();
    let report = match_and_ap(&g, &d).unwrap();
    assert!((report.ap50 - 51.0 / 101.0).abs() < 1e-12);
}

#[test]
fn single_detection_at_iou_point_six() {
    let gt = rect(20, 20, 0, 0, 10, 6);
    let det = rect(20, 20, 0, 0, 6, 6);
    assert!((iou(&gt, &det).unwrap() - 0.6).abs() < 1e-15);
    let report = match_and_ap(
        &[GtRef {
            image_id: 1,
            mask: &gt,
        }],
        &[DetRef {
            image_id: 1,
            id: 1,
            mask: &det,
            score: Some(0.5),
        }],
    )
    .unwrap();
    assert_eq!((report.ap50, report.ap75), (1.0, 0.0));
    assert!((report.ap - 0.3).abs() < 1e-12);
}

/// 4-neighbour erosion; pixels outside the frame count as background.
fn erode(m: &Mask) -> Mask {
    let r = pf_core::mask::decode_rle(m).unwrap();
    let (w, h) = (r.width(), r.height());
    let on = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && r.get(x as u32, y as u32)
    };
    encode_rle(&Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        on(x, y) && on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1)
    }))
}

fn ap_curve(gts: &[Mask], dets: &[(Mask, f64)]) -> Vec<f64> {
    let g: Vec<GtRef> = gts
        .iter()
        .map(|m| GtRef {
            image_id: 1,
            mask: m,
        })
        .collect();
    let d: Vec<DetRef> = dets
        .iter()
        .enumerate()
        .map(|(i, (m, s))| DetRef {
            image_id: 1,
            id: i as u64,
            mask: m,
            score: Some(*s),
        })
        .collect();
    match_and_ap(&g, &d)
        .unwrap()
        .curves
        .iter()
        .map(|c| c.ap)
        .collect()
}

#[test]
fn erosion_can_raise_iou_of_oversized_detections() {
    let gt = rect(16, 16, 5, 5, 6, 6);
    let det = rect(16, 16, 3, 3, 10, 10);
    assert!(ap_curve(std::slice::from_ref(&gt), &[(det.clone(), 1.0)])[0] == 0.0);
    assert!(ap_curve(&[gt], &[(erode(&det), 1.0)])[0] == 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn erosion_never_raises_ap_of_contained_detections(seed in any::<u64>()) {
        let mut r = rng::substream(seed, &[]);
        // Disjoint ground truth in separate 10x10 cells of a 40x10 strip.
        let gts: Vec<Mask> = (0..4)
            .map(|k| rect(40, 10, 10 * k + r.random_range(0..2), r.random_range(0..2), r.random_range(5..9), r.random_range(5..9)))
            .collect();
        let dets: Vec<(Mask, f64)> = (0..r.random_range(1..6))
            .map(|_| {
                let g = gts[r.random_range(0..4)].bbox().unwrap();
                let (w, h) = (r.random_range(3..=g.w), r.random_range(3..=g.h));
                let (x, y) = (g.x + r.random_range(0..=g.w - w), g.y + r.random_range(0..=g.h - h));
                (rect(40, 10, x, y, w, h), r.random_range(0..5) as f64 / 5.0)
            })
            .collect();
        let before = ap_curve(&gts, &dets);
        let eroded: Vec<(Mask, f64)> = dets.iter().map(|(m, s)| (erode(m), *s)).collect();
        let after = ap_curve(&gts, &eroded);
        for (a, b) in after.iter().zip(&before) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut r = rng::substream(seed, &[]);
        let bits: Vec<bool> = (0..216).map(|_| r.random_bool(0.4)).collect();
        let a = encode_rle(&Raster::from_fn(12, 9, |x, y| bits[(y * 12 + x) as usize]));
        let b = encode_rle(&Raster::from_fn(12, 9, |x, y| bits[108 + (y * 12 + x) as usize]));
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if !a.is_empty() {
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn psd_is_scale_equivariant(d in prop::collection::vec(0.5f64..200.0, 1..60), lambda in 0.01f64..100.0) {
        let s = psd_stats(&d).unwrap();
        let scaled: Vec<f64> = d.iter().map(|x| x * lambda).collect();
        let t = psd_stats(&scaled).unwrap();
        prop_assert!((t.d_g / (s.d_g * lambda) - 1.0).abs() < 1e-12);
        prop_assert!((t.sigma_g - s.sigma_g).abs() < 1e-12 * s.sigma_g.max(1.0) * 10.0);
        prop_assert_eq!(t.n_particles, s.n_particles);
    }

    #[test]
    fn kl_is_nonnegative_without_exclusions(
        a in prop::collection::vec(0.01f64..1.0, 2..20),
        seed in any::<u64>(),
    ) {
        let mut r = rng::substream(seed, &[]);
        let b: Vec<f64> = a.iter().map(|_| r.random_range(0.01..1.0)).collect();
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let edges: Vec<f64> = (0..=a.len()).map(|i| i as f64).collect();
        let p = Histogram::new(edges.clone(), norm(&a)).unwrap();
        let q = Histogram::new(edges, norm(&b)).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn solidity_survives_translation_and_quarter_turns(seed in any::<u64>(), dx in 0u32..6, dy in 0u32..6) {
        let mut r = rng::substream(seed, &[]);
        let cells: Vec<bool> = (0..100).map(|_| r.random_bool(0.5)).collect();
        let cell = |x: u32, y: u32| x < 10 && y < 10 && cells[(y * 10 + x) as usize];
        prop_assume!(cells.iter().any(|&c| c));
        let base = solidity(&encode_rle(&Raster::from_fn(16, 16, cell))).unwrap();
        let shifted = solidity(&encode_rle(&Raster::from_fn(16, 16, |x, y| {
            x >= dx && y >= dy && cell(x - dx, y - dy)
        })))
        .unwrap();
        let turned = solidity(&encode_rle(&Raster::from_fn(16, 16, |x, y| y < 10 && cell(y, 9u32.wrapping_sub(x))))).unwrap();
        prop_assert_eq!(base, shifted);
        prop_assert_eq!(base, turned);
    }
}
