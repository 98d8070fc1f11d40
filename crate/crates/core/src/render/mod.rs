//! Rendering: scene → feature maps → composited, degraded 8-bit image.

mod composite;
mod maps;

pub use composite::{
    composite, degrade, gaussian_blur, gaussian_kernel, quantize, value_noise, Background,
    CompositeSpec, GrayF, Jitter, Noise, Weights,
};
pub use maps::{render_maps, smooth_min, RenderMaps, MAX_OCCLUDERS, NORMAL_STEP, SHADOW_FACTOR};

use crate::error::{Error, Result};

/// Magic bytes opening a feature-map dump.
pub const MAPS_MAGIC: &[u8; 8] = b"PFMAPS01";

/// Serializes the maps as a 16-byte header (magic, little-endian u32 width
/// and height) followed by four little-endian f32 planes, each row-major:
/// depth (+inf on background), instance id (-1 on background), diffuse,
/// shadow.
pub fn encode_maps(maps: &RenderMaps) -> Vec<u8> {
    let n = maps.width as usize * maps.height as usize;
    let mut out = Vec::with_capacity(16 + 16 * n);
    out.extend_from_slice(MAPS_MAGIC);
    out.extend_from_slice(&maps.width.to_le_bytes());
    out.extend_from_slice(&maps.height.to_le_bytes());
    let planes: [Box<dyn Fn(usize) -> f32 + '_>; 4] = [
        Box::new(|i| maps.depth[i]),
        Box::new(|i| maps.instance_id[i].map_or(-1.0, |id| id as f32)),
        Box::new(|i| maps.diffuse[i]),
        Box::new(|i| maps.shadow[i]),
    ];
    for plane in &planes {
        for i in 0..n {
            out.extend_from_slice(&plane(i).to_le_bytes());
        }
    }
    out
}

/// Parses a dump written by [`encode_maps`]. Footprints are not stored and
/// come back empty. Instance ids must be exactly representable in f32.
pub fn decode_maps(bytes: &[u8]) -> Result<RenderMaps> {
    let bad = |m: &str| Error::InvalidInput(format!("feature-map dump: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAPS_MAGIC {
        return Err(bad("missing PFMAPS01 header"));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let n = width as usize * height as usize;
    if bytes.len() != 16 + 16 * n {
        return Err(bad("payload length does not match dimensions"));
    }
    let plane = |k: usize| -> Vec<f32> {
        bytes[16 + 4 * n * k..16 + 4 * n * (k + 1)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mut maps = RenderMaps::background(width, height);
    maps.depth = plane(0);
    maps.instance_id = plane(1)
        .into_iter()
        .map(|v| (v >= 0.0).then_some(v as u32))
        .collect();
    maps.diffuse = plane(2);
    maps.shadow = plane(3);
    Ok(maps)
}
