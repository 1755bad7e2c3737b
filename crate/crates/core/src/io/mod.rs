//! On-disk formats: frame archives, the external LINEMOD layout and the
//! binary forest container. Byte layouts and grammars are in `docs/formats.md`.

mod archive;
mod linemod;
mod model;

use std::io::Write;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

pub use archive::{parse_gt, format_gt, FrameArchive, FrameEntry, GtEntry, CAMERA_FILE};
pub use linemod::{load_linemod_layout, linemod_kinect_intrinsics};
pub use model::{load_model, model_to_bytes, model_from_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn encode_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    encode_png(path, width, height, rgb, ExtendedColorType::Rgb8)
}

/// 16-bit single-channel PNG. The encoder takes native-endian samples.
pub fn encode_gray16_png(path: &Path, width: u32, height: u32, data: &[u16]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_ne_bytes()).collect();
    encode_png(path, width, height, &bytes, ExtendedColorType::L16)
}

fn encode_png(path: &Path, width: u32, height: u32, data: &[u8], color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, width, height, color)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(out)
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    write_atomic(path, &encode_rgb_png(path, width, height, rgb)?)
}

pub fn write_gray16_png(path: &Path, width: u32, height: u32, data: &[u16]) -> Result<()> {
    write_atomic(path, &encode_gray16_png(path, width, height, data)?)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit RGB PNG as `(width, height, pixels)`.
pub fn read_rgb_png(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = open_image(path)?.into_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}

/// Reads a 16-bit single-channel PNG; other pixel formats are rejected.
pub fn read_gray16_png(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    match open_image(path)? {
        image::DynamicImage::ImageLuma16(img) => Ok((img.width(), img.height(), img.into_raw())),
        other => Err(Error::parse(
            path,
            format!("expected 16-bit single-channel PNG, found {:?}", other.color()),
        )),
    }
}
