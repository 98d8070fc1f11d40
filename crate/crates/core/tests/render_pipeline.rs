use pf_core::render::{
    composite, degrade, gaussian_blur, render_maps, CompositeSpec, GrayF, Jitter, Noise,
};
use pf_core::rng;
use pf_core::scene::{
    compose_scene, AgglomerateSpec, AttachmentMode, Population, PsdSpec, SceneParams,
};
use pf_core::synth::SceneConfig;

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
}

#[test]
fn rendering_and_compositing_ignore_the_schedule() {
    let spec = AgglomerateSpec {
        particle_count_range: (2, 9),
        psd: PsdSpec::new(22.0, 1.25),
        sintering_degree: 0.3,
        mode: AttachmentMode::ChainBiased,
    };
    let params = SceneParams {
        neck_blend: 3.0,
        ..SceneParams::default()
    };
    let mut r = rng::substream(8, &[]);
    let scene = compose_scene(
        &Population::Counts(vec![(spec, 5)]),
        (200, 150),
        &params,
        8,
        &mut r,
    )
    .unwrap()
    .scene;
    let cspec = SceneConfig::preset("default").unwrap().composite_spec();
    let run = || {
        let maps = render_maps(&scene);
        let img = composite(&maps, &cspec, 41);
        let out = degrade(&img, &cspec, 42);
        (maps, img, out)
    };
    let (m1, i1, o1) = pool(1).install(run);
    let (m4, i4, o4) = pool(4).install(run);
    assert_eq!(m1, m4);
    assert_eq!(
        i1.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        i4.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(o1, o4);
}

#[test]
fn gaussian_noise_moments() {
    let spec = CompositeSpec {
        noise: Noise {
            gaussian: 0.05,
            poisson_scale: 0.0,
        },
        ..CompositeSpec::clean()
    };
    let img = GrayF::filled(1000, 1000, 0.5);
    let out = degrade(&img, &spec, 1234);
    let v: Vec<f64> = out.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - 127.5 / 255.0).abs() < 0.005, "mean {mean}");
    assert!((std / 0.05 - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn shot_noise_scales_with_intensity() {
    let spec = CompositeSpec {
        noise: Noise {
            gaussian: 0.0,
            poisson_scale: 100.0,
        },
        ..CompositeSpec::clean()
    };
    let std_at = |level: f64| {
        let out = degrade(&GrayF::filled(400, 400, level), &spec, 7);
        let v: Vec<f64> = out.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    // Variance v / lambda.
    for level in [0.16, 0.64] {
        let expected = (level / 100.0f64).sqrt();
        assert!((std_at(level) / expected - 1.0).abs() < 0.05);
    }
}

#[test]
fn blur_conserves_mass_and_keeps_the_peak() {
    let mut img = GrayF::filled(41, 41, 0.0);
    img.data[20 * 41 + 20] = 1.0;
    let out = gaussian_blur(&img, 2.0);
    let mass: f64 = out.data.iter().sum();
    assert!((mass - 1.0).abs() < 0.01);
    let peak = out
        .data
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(peak, 20 * 41 + 20);
}

#[test]
fn identity_jitter_draws_nothing() {
    let base = CompositeSpec {
        jitter: Jitter::NONE,
        ..CompositeSpec::clean()
    };
    let img = GrayF::filled(8, 8, 0.3);
    assert_eq!(degrade(&img, &base, 1), degrade(&img, &base, 2));
}
