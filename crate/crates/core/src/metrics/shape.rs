use crate::error::{Error, Result};
use crate::geometry::{convex_hull, hull_diameter_sq, rasterize_hull, Pixel};
use crate::mask::{Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MaskMetrics {
    pub area: u64,
    pub convex_area: u64,
    pub solidity: f64,
    pub max_feret: f64,
}

/// First and last foreground pixel of every column. Their hull equals the
/// hull of the whole mask.
fn column_extremes(mask: &Mask) -> Vec<Pixel> {
    let h = mask.height as u64;
    let mut cols: Vec<(i64, i64, i64)> = Vec::new();
    for (s, e) in mask.intervals() {
        let mut i = s;
        while i < e {
            let col = i / h;
            let end = ((col + 1) * h).min(e);
            let (x, y0, y1) = (col as i64, (i % h) as i64, ((end - 1) % h) as i64);
            match cols.last_mut() {
                Some(last) if last.0 == x => last.2 = y1,
                _ => cols.push((x, y0, y1)),
            }
            i = end;
        }
    }
    cols.into_iter()
        .flat_map(|(x, y0, y1)| {
            let top = std::iter::once((x, y0));
            let bottom = (y1 != y0).then_some((x, y1));
            top.chain(bottom)
        })
        .collect()
}

fn hull_of(mask: &Mask) -> Result<Vec<Pixel>> {
    let pts = column_extremes(mask);
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(convex_hull(&pts))
}

/// Largest distance between foreground pixel centers plus 1 px.
pub fn max_feret(mask: &Mask) -> Result<f64> {
    let hull = hull_of(mask)?;
    Ok((hull_diameter_sq(&hull) as f64).sqrt() + 1.0)
}

/// Area, rasterized convex-hull area, their ratio and the max Feret diameter.
pub fn solidity(mask: &Mask) -> Result<MaskMetrics> {
    let hull = hull_of(mask)?;
    let area = mask.area();
    let convex_area = rasterize_hull(&hull).len() as u64;
    Ok(MaskMetrics {
        area,
        convex_area,
        solidity: area as f64 / convex_area as f64,
        max_feret: (hull_diameter_sq(&hull) as f64).sqrt() + 1.0,
    })
}

/// Solidity of every 8-connected foreground component, in order of the
/// component's first pixel (column-major).
pub fn component_solidities(raster: &Raster) -> Vec<f64> {
    let (w, h) = (raster.width() as i64, raster.height() as i64);
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for x in 0..w {
        for y in 0..h {
            let idx = (y * w + x) as usize;
            if seen[idx] || !raster.get(x as u32, y as u32) {
                continue;
            }
            seen[idx] = true;
            let mut stack = vec![(x, y)];
            let mut pixels = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                pixels.push((cx, cy));
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let n = (ny * w + nx) as usize;
                        if !seen[n] && raster.get(nx as u32, ny as u32) {
                            seen[n] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            let mask = Mask::from_pixels(raster.width(), raster.height(), &pixels);
            out.push(solidity(&mask).expect("component is nonempty").solidity);
        }
    }
    out
}
