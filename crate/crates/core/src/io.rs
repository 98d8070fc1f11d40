//! File helpers. Every output goes through a sibling temp file and a rename,
//! so readers never observe a partially written file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_json_value(path: &Path) -> Result<serde_json::Value> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes an 8-bit grayscale image as PNG bytes.
pub fn png_bytes(img: &image::GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out
}

pub fn write_png(path: &Path, img: &image::GrayImage) -> Result<()> {
    write_atomic(path, &png_bytes(img))
}

/// Loads any supported image as 8-bit grayscale.
pub fn read_gray(path: &Path) -> Result<image::GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

/// Binary mask as an 8-bit PNG: foreground 255, background 0.
pub fn write_mask_png(path: &Path, raster: &crate::mask::Raster) -> Result<()> {
    let img = image::GrayImage::from_fn(raster.width(), raster.height(), |x, y| {
        image::Luma([if raster.get(x, y) { 255 } else { 0 }])
    });
    write_png(path, &img)
}

/// Reads an image as a binary mask: any nonzero pixel is foreground.
pub fn read_mask_png(path: &Path) -> Result<crate::mask::Raster> {
    let img = read_gray(path)?;
    Ok(crate::mask::Raster::from_fn(
        img.width(),
        img.height(),
        |x, y| img.get_pixel(x, y).0[0] != 0,
    ))
}
