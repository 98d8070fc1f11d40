use std::collections::BTreeSet;

use pf_core::annotation::{
    annotation_file, export_dataset, extract_masks, import_dataset, AnnotatedImage, FileKind, Split,
};
use pf_core::geometry::Vec3;
use pf_core::mask::{decode_rle, encode_rle, Mask, Raster};
use pf_core::metrics::solidity;
use pf_core::render::render_maps;
use pf_core::rng;
use pf_core::scene::{
    compose_scene, Agglomerate, AgglomerateSpec, AttachmentMode, Population, PsdSpec, Scene,
    SceneParams, Sphere,
};
use pf_core::synth::{generate_image, SceneConfig};
use proptest::prelude::*;
use rand::Rng;

fn lone_sphere_scene(size: u32, r: f64) -> Scene {
    let mut scene = Scene::empty(size, size);
    let agg = Agglomerate {
        spheres: vec![Sphere {
            center: Vec3::ZERO,
            radius: r,
            particle_id: 0,
        }],
        attachments: Vec::new(),
        sintering_degree: 0.0,
    };
    scene.push_agglomerate(&agg, Vec3::new(size as f64 / 2.0, size as f64 / 2.0, 0.0));
    scene
}

fn random_scene(seed: u64) -> Scene {
    scene_with(seed, 18.0, (160, 120))
}

fn scene_with(seed: u64, d_g: f64, size: (u32, u32)) -> Scene {
    let spec = AgglomerateSpec {
        particle_count_range: (3, 12),
        psd: PsdSpec::new(d_g, 1.3),
        sintering_degree: 0.25,
        mode: AttachmentMode::Compact,
    };
    let params = SceneParams {
        neck_blend: 2.0,
        ..SceneParams::default()
    };
    let mut r = rng::substream(seed, &[]);
    compose_scene(
        &Population::Counts(vec![(spec, 4)]),
        size,
        &params,
        seed,
        &mut r,
    )
    .unwrap()
    .scene
}

#[test]
fn isolated_sphere_mask_is_its_disk() {
    let maps = render_maps(&lone_sphere_scene(128, 30.0));
    let plain = extract_masks(&maps, false, 0.01);
    assert_eq!(plain.len(), 1);
    assert_eq!(plain[0].visible_fraction, 1.0);
    assert_eq!(plain[0].mask.area() as usize, maps.foreground_count());
    let convex = extract_masks(&maps, true, 0.01);
    let (a, b) = (plain[0].mask.area() as f64, convex[0].mask.area() as f64);
    assert!((b - a).abs() / a < 0.005, "{a} -> {b}");
}

#[test]
fn hidden_sphere_is_not_annotated() {
    let mut scene = Scene::empty(64, 64);
    let agg = Agglomerate {
        spheres: vec![
            Sphere {
                center: Vec3::ZERO,
                radius: 20.0,
                particle_id: 0,
            },
            Sphere {
                center: Vec3::new(0.0, 0.0, 40.0),
                radius: 10.0,
                particle_id: 0,
            },
        ],
        attachments: Vec::new(),
        sintering_degree: 0.0,
    };
    scene.push_agglomerate(&agg, Vec3::new(32.0, 32.0, 0.0));
    let records = extract_masks(&render_maps(&scene), true, 0.01);
    assert_eq!(
        records.iter().map(|r| r.particle_id).collect::<Vec<_>>(),
        vec![1]
    );
}

#[test]
fn visible_masks_partition_the_instance_map() {
    for seed in 0..12 {
        let maps = render_maps(&random_scene(seed));
        let records = extract_masks(&maps, false, 0.0);
        let mut owner = vec![None; (maps.width * maps.height) as usize];
        for r in &records {
            for (x, y) in r.mask.pixels() {
                let i = maps.index(x as u32, y as u32);
                assert!(owner[i].is_none(), "pixel ({x},{y}) claimed twice");
                owner[i] = Some(r.particle_id);
            }
        }
        assert_eq!(owner, maps.instance_id);
    }
}

#[test]
fn boxes_are_tight() {
    for seed in 0..6 {
        let maps = render_maps(&random_scene(seed));
        for convexify in [false, true] {
            for r in extract_masks(&maps, convexify, 0.01) {
                let raster = decode_rle(&r.mask).unwrap();
                let b = r.bbox;
                let col = |x: u32| (b.y..b.y + b.h).any(|y| raster.get(x, y));
                let row = |y: u32| (b.x..b.x + b.w).any(|x| raster.get(x, y));
                assert!(col(b.x) && col(b.x + b.w - 1) && row(b.y) && row(b.y + b.h - 1));
                assert_eq!(r.mask.bbox(), Some(b));
            }
        }
    }
}

#[test]
fn convexified_masks_are_solid() {
    let mut checked = 0;
    for seed in 0..4 {
        let maps = render_maps(&scene_with(seed, 34.0, (360, 280)));
        for r in extract_masks(&maps, true, 0.01) {
            if r.mask.area() >= 500 {
                let s = solidity(&r.mask).unwrap().solidity;
                assert!(s >= 0.99, "solidity {s}");
                checked += 1;
            }
        }
    }
    assert!(checked > 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rle_round_trip_16x16(bits in prop::collection::vec(any::<bool>(), 256)) {
        let raster = Raster::from_fn(16, 16, |x, y| bits[(y * 16 + x) as usize]);
        let mask = encode_rle(&raster);
        prop_assert_eq!(mask.runs.iter().map(|&r| r as u64).sum::<u64>(), 256);
        prop_assert_eq!(decode_rle(&mask).unwrap(), raster.clone());
        prop_assert_eq!(Mask::from_pixels(16, 16, &raster.pixels()), mask);
    }
}

#[test]
fn empty_export_is_a_valid_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_dataset(&[], dir.path(), "empty", Split::Val, 3).unwrap();
    assert!(manifest.images.is_empty());
    let doc = pf_core::io::read_json_value(&dir.path().join("val/annotations.json")).unwrap();
    pf_core::annotation::validate(&doc, FileKind::GroundTruth).unwrap();
    assert!(import_dataset(dir.path(), Split::Val).unwrap().is_empty());
}

fn tiny_image(id: u64, n: usize, seed: u64) -> AnnotatedImage {
    let mut r = rng::substream(seed, &[id]);
    let particles = (0..n)
        .map(|k| {
            let raster = Raster::from_fn(24, 16, |x, y| {
                let cx = 3.0 + 5.0 * k as f64;
                (x as f64 - cx).hypot(y as f64 - 8.0) < 2.5
            });
            let mask = encode_rle(&raster);
            pf_core::annotation::ParticleRecord {
                particle_id: k as u32 + 1,
                bbox: mask.bbox().unwrap(),
                max_feret: pf_core::metrics::max_feret(&mask).unwrap(),
                mask,
                visible_fraction: r.random_range(0.5..1.0),
                circle_diameter: Some(5.0),
            }
        })
        .collect();
    AnnotatedImage {
        image_id: id,
        image: image::GrayImage::from_fn(24, 16, |x, y| image::Luma([(x * 7 + y * 3) as u8])),
        particles,
    }
}

#[test]
fn two_images_five_particles() {
    let dir = tempfile::tempdir().unwrap();
    let images = vec![tiny_image(1, 2, 0), tiny_image(2, 3, 0)];
    export_dataset(&images, dir.path(), "t", Split::Train, 0).unwrap();
    let file = pf_core::annotation::AnnotationFile::read(
        &dir.path().join("train/annotations.json"),
        FileKind::GroundTruth,
    )
    .unwrap();
    assert_eq!(file.annotations.len(), 5);
    let ids: BTreeSet<u64> = file.annotations.iter().map(|a| a.id).collect();
    assert_eq!(ids.len(), 5);
    assert_eq!(file, annotation_file(&images));
}

#[test]
fn synthetic_split_round_trips_bit_exact() {
    let config = SceneConfig::preset("default").unwrap();
    let images: Vec<AnnotatedImage> = (0..2)
        .map(|i| {
            generate_image(&config, 21, Split::Test, i)
                .unwrap()
                .annotated
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&images, dir.path(), "rt", Split::Test, 21).unwrap();
    let back = import_dataset(dir.path(), Split::Test).unwrap();
    assert_eq!(back.len(), images.len());
    for (a, b) in images.iter().zip(&back) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.image, b.image);
        assert_eq!(a.particles, b.particles);
    }
}
