use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pf_core::annotation::{
    self, AnnotationEntry, AnnotationFile, DatasetWriter, FileKind, ImageEntry, Split,
};
use pf_core::eval::{self, Grouping, ReferenceDiameter, Timing};
use pf_core::hough::{hough_detect, HoughParams};
use pf_core::lr::{self, LossCurve, LossKind};
use pf_core::mask::{decode_rle, encode_rle, Mask};
use pf_core::metrics::{kl_report, psd_stats, Histogram};
use pf_core::synth::{generate_batch, SceneConfig};
use pf_core::{io, render};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{Cli, Command, Format, Kind, Reference, RleCommand};

/// Images generated and held in memory at a time.
const SYNTH_CHUNK: u64 = 32;

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(pf_core::Error::InvalidInput(
                "--threads must be >= 1".into()
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::DetectHough(a) => detect_hough(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Psd(a) => psd(cli, a),
        Command::Kl(a) => kl(cli, a),
        Command::LrFit(a) => lr_fit(cli, a),
        Command::EarlyStop(a) => early_stop(cli, a),
        Command::Rle(c) => rle(cli, c),
        Command::Validate(a) => validate(cli, a),
    }
}

/// Writes `run.json` next to a command's outputs.
fn write_run(dir: &Path, cli: &Cli, command: &str, resolved: Value) -> Result<()> {
    let doc = json!({
        "tool": "pf",
        "version": env!("CARGO_PKG_VERSION"),
        "generator_version": pf_core::GENERATOR_VERSION,
        "command": command,
        "seed": cli.seed,
        "threads": cli.threads,
        "config": resolved,
    });
    io::write_json(&dir.join("run.json"), &doc)?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Prints a summary: pretty JSON, or CSV with `header` and one line per row.
fn emit<T: Serialize>(cli: &Cli, value: &T, header: &[&str], rows: Vec<Vec<String>>) {
    match cli.format {
        Format::Json => print!("{}", String::from_utf8_lossy(&io::to_json_bytes(value))),
        Format::Csv => {
            println!("{}", header.join(","));
            for r in rows {
                println!("{}", r.join(","));
            }
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn synth(cli: &Cli, a: &crate::SynthArgs) -> Result<()> {
    let mut config = match (&a.config, &a.preset) {
        (Some(path), _) => SceneConfig::load(path)?,
        (None, Some(name)) => SceneConfig::preset(name)?,
        (None, None) => SceneConfig::preset("default")?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let seed = config.seed;
    let plan: Vec<(Split, u32)> = match a.count {
        Some(n) => vec![(a.split.parse::<Split>()?, n)],
        None => config.splits.iter().map(|(&s, &n)| (s, n)).collect(),
    };
    if plan.is_empty() {
        bail!(pf_core::Error::InvalidInput(
            "no image count: pass --count or list splits in the config".into()
        ));
    }
    std::fs::create_dir_all(&a.out)
        .map_err(|e| anyhow::Error::new(e).context(format!("{}", a.out.display())))?;

    #[derive(Serialize)]
    struct SplitSummary {
        split: Split,
        images: u32,
        particles: usize,
        placement_warnings: u32,
    }
    let mut summary = Vec::new();
    for &(split, count) in &plan {
        let mut writer = DatasetWriter::new(&a.out, &a.name, split, seed)?;
        let maps_dir = writer.dir().join("maps");
        let (mut particles, mut warnings) = (0, 0);
        let mut start = 0u64;
        while start < count as u64 {
            let end = (start + SYNTH_CHUNK).min(count as u64);
            let batch = generate_batch(&config, seed, split, start..end)?;
            if a.dump_maps {
                for g in &batch {
                    let name = format!("img_{:05}.pfmaps", g.annotated.image_id);
                    io::write_atomic(&maps_dir.join(name), &render::encode_maps(&g.maps))?;
                }
            }
            particles += batch
                .iter()
                .map(|g| g.annotated.particles.len())
                .sum::<usize>();
            warnings += batch.iter().map(|g| g.placement_warnings).sum::<u32>();
            let annotated: Vec<_> = batch.into_iter().map(|g| g.annotated).collect();
            writer.add_all(&annotated)?;
            start = end;
        }
        writer.finish()?;
        log::info!("{}: {count} images, {particles} particles", split.as_str());
        summary.push(SplitSummary {
            split,
            images: count,
            particles,
            placement_warnings: warnings,
        });
    }
    write_run(
        &a.out,
        cli,
        "synth",
        json!({
            "scene": config,
            "name": a.name,
            "plan": plan.iter().map(|(s, n)| json!({"split": s, "count": n})).collect::<Vec<_>>(),
            "dump_maps": a.dump_maps,
        }),
    )?;
    let rows = summary
        .iter()
        .map(|s| {
            vec![
                s.split.as_str().to_string(),
                s.images.to_string(),
                s.particles.to_string(),
                s.placement_warnings.to_string(),
            ]
        })
        .collect();
    emit(
        cli,
        &summary,
        &["split", "images", "particles", "placement_warnings"],
        rows,
    );
    Ok(())
}

/// Resolves a dataset argument to its annotations file.
fn annotations_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("annotations.json")
    } else {
        p.to_path_buf()
    }
}

fn read_any(path: &Path) -> Result<(AnnotationFile, FileKind)> {
    let value = io::read_json_value(path)?;
    let kind = annotation::detect_kind(&value);
    Ok((AnnotationFile::read(path, kind)?, kind))
}

fn detect_hough(cli: &Cli, a: &crate::HoughArgs) -> Result<()> {
    let mut params: HoughParams = match &a.params {
        Some(p) => io::read_json(p)?,
        None => HoughParams::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { params.$field = v; })* };
    }
    apply!(
        r_min,
        r_max,
        accumulator_threshold,
        edge_threshold,
        nms_distance_factor,
        max_circles
    );
    if a.repeat == 0 {
        bail!(pf_core::Error::InvalidInput("--repeat must be >= 1".into()));
    }

    let ann_path = annotations_path(&a.dataset);
    let (dataset, _) = read_any(&ann_path)?;
    let root = parent_dir(&ann_path);
    let images = dataset
        .images
        .iter()
        .map(|e| {
            let img = io::read_gray(&root.join(&e.file_name))?;
            if (img.width(), img.height()) != (e.width, e.height) {
                bail!(pf_core::Error::InvalidInput(format!(
                    "{}: image is {}x{}, annotations say {}x{}",
                    e.file_name,
                    img.width(),
                    img.height(),
                    e.width,
                    e.height
                )));
            }
            params.validate(e.width, e.height)?;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut seconds = Vec::with_capacity(a.repeat as usize);
    let mut detections = Vec::new();
    for _ in 0..a.repeat {
        let t0 = Instant::now();
        detections = images
            .iter()
            .map(|img| hough_detect(img, &params))
            .collect::<pf_core::Result<Vec<_>>>()?;
        seconds.push(t0.elapsed().as_secs_f64());
    }

    let mut annotations = Vec::new();
    for (entry, circles) in dataset.images.iter().zip(&detections) {
        for c in circles {
            let mask: Mask = c.mask(entry.width, entry.height);
            let id = annotations.len() as u64 + 1;
            annotations.push(AnnotationEntry::detection(
                id,
                entry.id,
                &mask,
                c.score.clamp(0.0, 1.0),
            ));
        }
    }
    let images_out: Vec<ImageEntry> = dataset.images.clone();
    let mut out = AnnotationFile::new(images_out, annotations);
    let timing = Timing::from_runs(
        images.len() as u64,
        dataset.annotations.len() as u64,
        &seconds,
    );
    out.timing = Some(serde_json::to_value(timing)?);
    out.write(&a.out)?;
    write_run(
        &parent_dir(&a.out),
        cli,
        "detect-hough",
        json!({"dataset": ann_path, "params": params, "repeat": a.repeat}),
    )?;
    let summary = json!({
        "images": images.len(),
        "detections": out.annotations.len(),
        "timing": timing,
    });
    let row = vec![
        images.len().to_string(),
        out.annotations.len().to_string(),
        timing.seconds_mean.to_string(),
        timing.seconds_std.to_string(),
        timing.images_per_second.to_string(),
        timing.particles_per_second.to_string(),
    ];
    emit(
        cli,
        &summary,
        &[
            "images",
            "detections",
            "seconds_mean",
            "seconds_std",
            "images_per_second",
            "particles_per_second",
        ],
        vec![row],
    );
    Ok(())
}

fn reference(r: Reference) -> ReferenceDiameter {
    match r {
        Reference::Feret => ReferenceDiameter::Feret,
        Reference::Circle => ReferenceDiameter::Circle,
    }
}

fn evaluate(cli: &Cli, a: &crate::EvaluateArgs) -> Result<()> {
    let gt_path = annotations_path(&a.gt);
    let gt = AnnotationFile::read(&gt_path, FileKind::GroundTruth)?;
    let det = match read_any(&annotations_path(&a.det))? {
        (file, FileKind::Detections) => file,
        (file, FileKind::GroundTruth) => eval::as_detections(&file)?,
    };
    let sample_id = a.sample_id.clone().unwrap_or_else(|| {
        parent_dir(&gt_path)
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "sample".into())
    });
    let grouping = if a.per_image {
        Grouping::PerImage
    } else {
        Grouping::WholeSet
    };
    let report = eval::evaluate(&gt, &det, &sample_id, grouping, reference(a.reference))?;
    let csv = report.to_csv();
    if let Some(dir) = &a.out {
        io::write_json(&dir.join("report.json"), &report)?;
        io::write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
        write_run(
            dir,
            cli,
            "evaluate",
            json!({
                "gt": a.gt,
                "det": a.det,
                "per_image": a.per_image,
                "reference": report.reference_diameter,
                "sample_id": sample_id,
            }),
        )?;
    }
    match cli.format {
        Format::Json => {
            let summary =
                json!({"rows": report.rows, "mape": report.mape, "timing": report.timing});
            print!("{}", String::from_utf8_lossy(&io::to_json_bytes(&summary)));
        }
        Format::Csv => print!("{csv}"),
    }
    Ok(())
}

fn psd(cli: &Cli, a: &crate::PsdArgs) -> Result<()> {
    let (file, _) = read_any(&annotations_path(&a.annotations))?;
    let diameters = file
        .annotations
        .iter()
        .map(|e| match a.diameter {
            Reference::Feret => Ok(e.max_feret),
            Reference::Circle => e.circle_diameter.ok_or_else(|| {
                anyhow::Error::new(pf_core::Error::InvalidInput(format!(
                    "annotation {} has no circle_diameter",
                    e.id
                )))
            }),
        })
        .collect::<Result<Vec<f64>>>()?;
    let diameters: Vec<f64> = diameters.into_iter().filter(|&d| d > 0.0).collect();
    let stats = psd_stats(&diameters)?;
    let (lo, hi) = match &a.range {
        Some(r) => (r[0], r[1]),
        None => (0.0, diameters.iter().copied().fold(0.0, f64::max)),
    };
    if a.bins == 0 || !(hi > lo) {
        bail!(pf_core::Error::InvalidInput(format!(
            "need bins >= 1 and a nonempty range, got {} bins on [{lo}, {hi}]",
            a.bins
        )));
    }
    let edges = Histogram::uniform_edges(lo, hi, a.bins);
    let counts = Histogram::counts(&diameters, &edges)?;
    let hist = Histogram::from_samples(&diameters, edges)?;
    if let Some(dir) = &a.out {
        io::write_atomic(
            &dir.join("histogram.csv"),
            hist.to_csv(Some(&counts)).as_bytes(),
        )?;
        io::write_json(
            &dir.join("psd.json"),
            &json!({"stats": stats, "histogram": hist}),
        )?;
        write_run(
            dir,
            cli,
            "psd",
            json!({"annotations": a.annotations, "diameter": format!("{:?}", a.diameter).to_lowercase(), "bins": a.bins, "range": [lo, hi]}),
        )?;
    }
    emit(
        cli,
        &stats,
        &["d_g", "sigma_g", "n_particles"],
        vec![vec![
            stats.d_g.to_string(),
            stats.sigma_g.to_string(),
            stats.n_particles.to_string(),
        ]],
    );
    Ok(())
}

fn read_histogram(path: &Path) -> Result<Histogram> {
    let bytes = io::read_bytes(path)?;
    Histogram::from_csv_reader(bytes.as_slice()).with_context(|| path.display().to_string())
}

fn kl(cli: &Cli, a: &crate::KlArgs) -> Result<()> {
    let report = kl_report(&read_histogram(&a.p)?, &read_histogram(&a.q)?)?;
    if report.flagged {
        log::warn!(
            "{:.1}% / {:.1}% of the mass lies in bins where only one histogram is nonzero",
            100.0 * report.excluded_mass_p,
            100.0 * report.excluded_mass_q
        );
    }
    emit(
        cli,
        &report,
        &[
            "value",
            "log_base",
            "excluded_bins",
            "excluded_mass_p",
            "excluded_mass_q",
            "flagged",
        ],
        vec![vec![
            report.value.to_string(),
            report.log_base.to_string(),
            report.excluded_bins.to_string(),
            report.excluded_mass_p.to_string(),
            report.excluded_mass_q.to_string(),
            report.flagged.to_string(),
        ]],
    );
    Ok(())
}

fn lr_fit(cli: &Cli, a: &crate::LrFitArgs) -> Result<()> {
    let mut curve = LossCurve::from_csv(&a.curve, LossKind::Training)?;
    if a.median {
        let smooth = lr::median_filter(&curve.points.iter().map(|p| p.1).collect::<Vec<_>>(), 5);
        for (p, s) in curve.points.iter_mut().zip(smooth) {
            p.1 = s;
        }
    }
    let alpha_min = match a.alpha_min {
        Some(v) => v,
        None => lr::detect_alpha_min(&curve)?,
    };
    let fit = lr::fit_lr_range(&curve, alpha_min)?;
    io::write_json(&a.out, &fit)?;
    write_run(
        &parent_dir(&a.out),
        cli,
        "lr-fit",
        json!({"curve": a.curve, "alpha_min": alpha_min, "alpha_min_detected": a.alpha_min.is_none(), "median": a.median}),
    )?;
    emit(
        cli,
        &fit,
        &["m", "b", "c", "alpha_min", "alpha_max", "rms_residual"],
        vec![[
            fit.m,
            fit.b,
            fit.c,
            fit.alpha_min,
            fit.alpha_max,
            fit.rms_residual,
        ]
        .iter()
        .map(f64::to_string)
        .collect()],
    );
    Ok(())
}

fn early_stop(cli: &Cli, a: &crate::EarlyStopArgs) -> Result<()> {
    let rows = lr::read_loss_history(&a.history)?;
    let losses: Vec<f64> = rows.iter().map(|r| r.val_loss).collect();
    let outcome = lr::replay_early_stopping(&losses, a.patience)?;
    emit(
        cli,
        &outcome,
        &["stopped_at", "best_epoch", "best_loss"],
        vec![vec![
            opt(outcome.stopped_at.map(f64::from)),
            outcome.best_epoch.to_string(),
            outcome.best_loss.to_string(),
        ]],
    );
    Ok(())
}

fn rle(cli: &Cli, c: &RleCommand) -> Result<()> {
    match c {
        RleCommand::Encode { image, out } => {
            let mask = encode_rle(&io::read_mask_png(image)?);
            match out {
                Some(path) => io::write_json(path, &mask)?,
                None => emit(
                    cli,
                    &mask,
                    &["width", "height", "area", "runs"],
                    vec![vec![
                        mask.width.to_string(),
                        mask.height.to_string(),
                        mask.area().to_string(),
                        mask.runs
                            .iter()
                            .map(u32::to_string)
                            .collect::<Vec<_>>()
                            .join(" "),
                    ]],
                ),
            }
        }
        RleCommand::Decode { rle, out } => {
            let raw: Mask = io::read_json(rle)?;
            let mask = Mask::from_runs(raw.width, raw.height, raw.runs)?;
            io::write_mask_png(out, &decode_rle(&mask)?)?;
        }
    }
    Ok(())
}

fn validate(cli: &Cli, a: &crate::ValidateArgs) -> Result<()> {
    let path = annotations_path(&a.file);
    let value = io::read_json_value(&path)?;
    let kind = match a.kind {
        Kind::Auto => annotation::detect_kind(&value),
        Kind::Gt => FileKind::GroundTruth,
        Kind::Det => FileKind::Detections,
    };
    annotation::validate(&value, kind).with_context(|| path.display().to_string())?;
    let kind_name = match kind {
        FileKind::GroundTruth => "ground_truth",
        FileKind::Detections => "detections",
    };
    let images = value["images"].as_array().map_or(0, Vec::len);
    let annotations = value["annotations"].as_array().map_or(0, Vec::len);
    emit(
        cli,
        &json!({"valid": true, "kind": kind_name, "images": images, "annotations": annotations}),
        &["valid", "kind", "images", "annotations"],
        vec![vec![
            "true".into(),
            kind_name.into(),
            images.to_string(),
            annotations.to_string(),
        ]],
    );
    Ok(())
}
