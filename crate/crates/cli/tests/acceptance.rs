//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pf_core::annotation::{export_dataset, extract_masks, import_dataset, AnnotatedImage, Split};
use pf_core::lr::{fit_lr_range, triangular_lr, CyclicSchedule, LossCurve, LossKind};
use pf_core::mask::{decode_rle, encode_rle, Mask, Raster};
use pf_core::metrics::{
    iou, kl_divergence, match_and_ap, max_feret, psd_stats, solidity, DetRef, GtRef, Histogram,
};
use pf_core::rng;
use pf_core::synth::{generate_batch, SceneConfig};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use oracles::{brute_feret, rect};

type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracle_suite() -> Outcome {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    let third =
        iou(&rect(30, 20, 2, 2, 10, 10), &rect(30, 20, 7, 2, 10, 10)).map_err(|e| e.to_string())?;
    if third != 1.0 / 3.0 {
        failures.push(format!("shifted squares IoU {third}"));
    }

    let edges = vec![0.0, 1.0, 2.0, 3.0];
    let p = Histogram::new(edges.clone(), vec![0.5, 0.25, 0.25]).map_err(|e| e.to_string())?;
    let q = Histogram::new(edges, vec![0.25, 0.5, 0.25]).map_err(|e| e.to_string())?;
    let kl = kl_divergence(&p, &q).map_err(|e| e.to_string())?;
    if (kl - 0.25 * 2f64.ln()).abs() >= 1e-12 {
        failures.push(format!("KL hand case {kl}"));
    }

    let tromino = solidity(&encode_rle(&Raster::from_fn(80, 80, |x, y| {
        !(x >= 40 && y < 40)
    })))
    .map_err(|e| e.to_string())?
    .solidity;
    if (tromino - 6.0 / 7.0).abs() >= 0.01 {
        failures.push(format!("L-tromino solidity {tromino}"));
    }

    let bar = rect(12, 12, 1, 2, 3, 7);
    let feret = max_feret(&bar).map_err(|e| e.to_string())?;
    if (feret - brute_feret(&bar)).abs() >= 0.01 {
        failures.push(format!("rectangle Feret {feret} vs {}", brute_feret(&bar)));
    }

    let (gt, det) = (rect(20, 20, 0, 0, 10, 6), rect(20, 20, 0, 0, 6, 6));
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
    .map_err(|e| e.to_string())?;
    if (report.ap50, report.ap75, report.ap) != (1.0, 0.0, 0.3) {
        failures.push(format!(
            "IoU 0.6 case ({}, {}, {})",
            report.ap50, report.ap75, report.ap
        ));
    }

    let cases = oracles::ap::compare_random_instances(314, 1000).unwrap_or_else(|e| {
        failures.push(format!("greedy vs exhaustive AP: {e}"));
        0
    });
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1} s"));
    }
    if failures.is_empty() {
        Ok(format!(
            "6 oracles agree, {cases} exhaustive AP instances, {secs:.1} s"
        ))
    } else {
        Err(failures.join("; "))
    }
}

/// Single-particle scenes: every agglomerate is one sphere.
const ISOLATED_SCENE: &str = r#"{
  "image_size": [1024, 1024],
  "agglomerates": [
    {"count_range": [1, 1], "d_g": 30.0, "sigma_g": 1.4, "d_min": 2.0, "d_max": 400.0, "count": 25}
  ],
  "neck_blend": 2.0,
  "blur_sigma": 0.8
}"#;

fn psd_recovery() -> Outcome {
    let t0 = Instant::now();
    let config = SceneConfig::from_json(ISOLATED_SCENE).map_err(|e| e.to_string())?;
    let images = generate_batch(&config, 1729, Split::Test, 0..40).map_err(|e| e.to_string())?;
    let warnings: u32 = images.iter().map(|g| g.placement_warnings).sum();
    let ferets: Vec<f64> = images
        .iter()
        .flat_map(|g| g.annotated.particles.iter().map(|p| p.max_feret))
        .collect();
    let stats = psd_stats(&ferets).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let (e_dg, e_sg) = (
        (stats.d_g / 30.0 - 1.0).abs(),
        (stats.sigma_g / 1.4 - 1.0).abs(),
    );
    check(
        ferets.len() == 1000 && warnings == 0 && e_dg <= 0.05 && e_sg <= 0.05 && secs < 120.0,
        format!(
            "{} particles, d_g {:.3} ({:.2}%), sigma_g {:.4} ({:.2}%), {secs:.1} s",
            ferets.len(),
            stats.d_g,
            100.0 * e_dg,
            stats.sigma_g,
            100.0 * e_sg
        ),
    )
}

fn pf(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pf"))
        .args(args)
        .env("PF_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!(
            "pf {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// PNGs and annotation files below `root`, keyed by relative path.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.json") {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (name, threads) in [("t1", "1"), ("t8", "8"), ("t1b", "1")] {
        let out = tmp.path().join(name);
        pf(&[
            "synth",
            "--count",
            "6",
            "--split",
            "train",
            "--seed",
            "4242",
            "--threads",
            threads,
            "--out",
            s(&out),
        ])?;
        trees.push(artifacts(&out));
    }
    let pngs = trees[0]
        .keys()
        .filter(|k| k.extension().is_some_and(|e| e == "png"))
        .count();
    check(
        pngs == 6 && trees[0] == trees[1] && trees[0] == trees[2],
        format!(
            "{} files ({pngs} PNGs), threads 1 vs 8 {}, rerun {}",
            trees[0].len(),
            if trees[0] == trees[1] {
                "identical"
            } else {
                "differ"
            },
            if trees[0] == trees[2] {
                "identical"
            } else {
                "differs"
            }
        ),
    )
}

fn rle_round_trip() -> Outcome {
    let mut r = rng::substream(8080, &[]);
    for case in 0..1000 {
        let (w, h) = (r.random_range(1..40u32), r.random_range(1..40u32));
        let density = r.random_range(0.0..1.0);
        let bits: Vec<bool> = (0..w * h).map(|_| r.random_bool(density)).collect();
        let raster = Raster::from_fn(w, h, |x, y| bits[(y * w + x) as usize]);
        let mask = encode_rle(&raster);
        let back = decode_rle(&mask).map_err(|e| e.to_string())?;
        let checked = Mask::from_runs(w, h, mask.runs.clone()).map_err(|e| e.to_string())?;
        if back != raster || checked != mask {
            return Err(format!("raster {case} ({w}x{h}) did not round-trip"));
        }
    }

    let config = SceneConfig::preset("default").map_err(|e| e.to_string())?;
    let images: Vec<AnnotatedImage> = generate_batch(&config, 5, Split::Val, 0..3)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|g| g.annotated)
        .collect();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    export_dataset(&images, tmp.path(), "roundtrip", Split::Val, 5).map_err(|e| e.to_string())?;
    let back = import_dataset(tmp.path(), Split::Val).map_err(|e| e.to_string())?;
    let particles: usize = images.iter().map(|i| i.particles.len()).sum();
    let same = back.len() == images.len()
        && images.iter().zip(&back).all(|(a, b)| {
            a.image_id == b.image_id && a.image == b.image && a.particles == b.particles
        });
    check(
        same,
        format!(
            "1000 rasters, {} images / {particles} particles re-imported bit-exact",
            images.len()
        ),
    )
}

/// Nine isolated disks per image.
const DISK_SCENE: &str = r#"{
  "image_size": [384, 384],
  "agglomerates": [
    {"count_range": [1, 1], "d_g": 40.0, "sigma_g": 1.15, "d_min": 24.0, "d_max": 64.0, "count": 9}
  ],
  "neck_blend": 2.0,
  "blur_sigma": 0.8,
  "light_direction": [-0.25, -0.35, -0.9]
}"#;

/// One agglomerate of eight particles sintered at s = 0.4.
const SINTERED_SCENE: &str = r#"{
  "image_size": [384, 384],
  "agglomerates": [
    {"count_range": [8, 8], "d_g": 40.0, "sigma_g": 1.15, "d_min": 24.0, "d_max": 64.0,
     "sintering_degree": 0.4, "mode": "uniform-random", "count": 1}
  ],
  "neck_blend": 2.0,
  "blur_sigma": 0.8,
  "light_direction": [-0.25, -0.35, -0.9]
}"#;

fn hough_ap50(dir: &Path, name: &str, scene: &str) -> Result<f64, String> {
    let cfg = dir.join(format!("{name}.json"));
    std::fs::write(&cfg, scene).map_err(|e| e.to_string())?;
    let data = dir.join(name);
    pf(&[
        "synth",
        "--config",
        s(&cfg),
        "--count",
        "10",
        "--split",
        "test",
        "--seed",
        "11",
        "--out",
        s(&data),
    ])?;
    let det = dir.join(format!("{name}-hough/detections.json"));
    pf(&[
        "detect-hough",
        "--dataset",
        s(&data.join("test")),
        "--out",
        s(&det),
        "--repeat",
        "1",
    ])?;
    let report: serde_json::Value = serde_json::from_slice(&pf(&[
        "evaluate",
        "--gt",
        s(&data.join("test")),
        "--det",
        s(&det),
    ])?)
    .map_err(|e| e.to_string())?;
    report["rows"][0]["ap50"]
        .as_f64()
        .ok_or_else(|| "report without ap50".to_string())
}

fn hough_end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let disks = hough_ap50(tmp.path(), "disks", DISK_SCENE)?;
    let sintered = hough_ap50(tmp.path(), "sintered", SINTERED_SCENE)?;
    check(
        disks >= 0.9 && sintered < disks,
        format!("AP50 isolated disks {disks:.3}, sintered agglomerate {sintered:.3}"),
    )
}

fn piecewise(a: f64) -> f64 {
    (-2.0 * a + 1.0).max(0.2)
}

fn lr_fit() -> Outcome {
    let alphas: Vec<f64> = (1..=12).map(|i| 0.05 * i as f64).collect();
    let clean = LossCurve::new(
        alphas.iter().map(|&a| (a, piecewise(a))).collect(),
        LossKind::Training,
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_lr_range(&clean, 0.05).map_err(|e| e.to_string())?;
    let noiseless = (fit.alpha_max - 0.4).abs();

    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut r = rng::substream(2718, &[]);
    let mut hits = 0;
    for _ in 0..100 {
        let pts = alphas
            .iter()
            .map(|&a| (a, piecewise(a) + noise.sample(&mut r)))
            .collect();
        let curve = LossCurve::new(pts, LossKind::Training).map_err(|e| e.to_string())?;
        let fit = fit_lr_range(&curve, 0.05).map_err(|e| e.to_string())?;
        hits += ((fit.alpha_max / 0.4 - 1.0).abs() <= 0.05) as u32;
    }

    let sched = CyclicSchedule::final_training();
    let vertices = (
        triangular_lr(0, &sched),
        triangular_lr(200, &sched),
        triangular_lr(400, &sched),
    );
    check(
        noiseless < 1e-9 && hits >= 95 && sched.cycle_length == 400 && vertices == (0.0005, 0.0037, 0.0005),
        format!(
            "noiseless error {noiseless:.1e}, noisy {hits}/100 within 5%, vertices {:?} over cycle {}",
            vertices, sched.cycle_length
        ),
    )
}

fn occlusion_partition() -> Outcome {
    let config = SceneConfig::preset("default").map_err(|e| e.to_string())?;
    let mut pixels = 0usize;
    let mut masks = 0usize;
    for chunk in 0..5u64 {
        let batch = generate_batch(&config, 606, Split::Test, chunk * 10..chunk * 10 + 10)
            .map_err(|e| e.to_string())?;
        for g in batch {
            let maps = &g.maps;
            let records = extract_masks(maps, false, 0.0);
            let mut owner = vec![None; (maps.width * maps.height) as usize];
            for rec in &records {
                for (x, y) in rec.mask.pixels() {
                    let i = maps.index(x as u32, y as u32);
                    if owner[i].is_some() {
                        return Err(format!(
                            "image {}: pixel ({x},{y}) claimed twice",
                            g.annotated.image_id
                        ));
                    }
                    owner[i] = Some(rec.particle_id);
                }
            }
            if owner != maps.instance_id {
                return Err(format!(
                    "image {}: masks do not tile the instance map",
                    g.annotated.image_id
                ));
            }
            pixels += owner.iter().filter(|o| o.is_some()).count();
            masks += records.len();
        }
    }
    Ok(format!(
        "50 scenes, {masks} masks tiling {pixels} foreground pixels"
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("metric oracle suite", metric_oracle_suite),
        ("PSD recovery", psd_recovery),
        ("determinism", determinism),
        ("RLE + dataset round-trip", rle_round_trip),
        ("Hough end-to-end", hough_end_to_end),
        ("LR fit", lr_fit),
        ("occlusion partition", occlusion_partition),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
