//! PNG reading/writing and the raw `HMAP` heatmap sidecar.
//!
//! `HMAP` layout (all integers little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `HMAP`                              |
//! | 1     | version, currently `1`                    |
//! | 4     | width (`u32`)                             |
//! | 4     | height (`u32`)                            |
//! | 4·w·h | row-major IEEE-754 `f32` values           |

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::{AttributionMap, Image, PerturbMask, Plane, Provenance, CHANNELS};
use crate::error::{AttribError, Result};

const HMAP_MAGIC: &[u8; 4] = b"HMAP";
const HMAP_VERSION: u8 = 1;
const HMAP_HEADER: usize = 13;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open_png(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| AttribError::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| AttribError::io(path, e))?;
    reader.decode().map_err(|source| AttribError::Codec {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit RGB or grayscale PNG into `[0, 1]` intensities.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = open_png(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    w.checked_mul(h)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or_else(|| AttribError::format(path, "image dimensions overflow"))?;
    let rgb: Vec<u8> = match decoded {
        DynamicImage::ImageRgb8(img) => img.into_raw(),
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().flat_map(|v| [v, v, v]).collect(),
        other => {
            return Err(AttribError::format(
                path,
                format!("expected 8-bit RGB or grayscale PNG, got {:?}", other.color()),
            ))
        }
    };
    let data = rgb.into_iter().map(|v| v as f64 / 255.0).collect();
    Image::new(h, w, data)
}

/// Writes an 8-bit RGB PNG.
pub fn write_image(x: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = x.data().iter().map(|v| to_u8(*v)).collect();
    let img = RgbImage::from_raw(x.width() as u32, x.height() as u32, raw)
        .ok_or_else(|| AttribError::Shape("image buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| AttribError::Codec {
            path: path.to_path_buf(),
            source,
        })
}

/// Min-max normalizes to 8-bit grayscale; a constant plane renders black.
pub fn render_heatmap_gray(plane: &Plane) -> Vec<u8> {
    plane.min_max_normalized().data().iter().map(|v| to_u8(*v)).collect()
}

pub fn write_plane_png(plane: &Plane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(plane.width() as u32, plane.height() as u32, render_heatmap_gray(plane))
        .ok_or_else(|| AttribError::Shape("plane buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| AttribError::Codec {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes the viewable PNG and the lossless `HMAP` sidecar.
pub fn write_heatmap(map: &AttributionMap, png_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<()> {
    write_plane_png(map.plane(), png_path)?;
    write_hmap(map, raw_path)
}

pub fn encode_hmap(plane: &Plane) -> Vec<u8> {
    let mut out = Vec::with_capacity(HMAP_HEADER + plane.len() * 4);
    out.extend_from_slice(HMAP_MAGIC);
    out.push(HMAP_VERSION);
    out.extend_from_slice(&(plane.width() as u32).to_le_bytes());
    out.extend_from_slice(&(plane.height() as u32).to_le_bytes());
    for v in plane.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_hmap(bytes: &[u8], path: &Path) -> Result<Plane> {
    if bytes.len() < HMAP_HEADER || &bytes[..4] != HMAP_MAGIC {
        return Err(AttribError::format(path, "missing HMAP magic"));
    }
    if bytes[4] != HMAP_VERSION {
        return Err(AttribError::format(path, format!("unsupported HMAP version {}", bytes[4])));
    }
    let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| AttribError::format(path, "dimension overflow"))?;
    let payload = &bytes[HMAP_HEADER..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(AttribError::format(
            path,
            format!("expected {} payload bytes, found {}", count * 4, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Plane::new(height, width, data)
}

pub fn write_hmap(map: &AttributionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hmap(map.plane())).map_err(|e| AttribError::io(path, e))
}

pub fn read_hmap(path: impl AsRef<Path>) -> Result<AttributionMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AttribError::io(path, e))?;
    let plane = decode_hmap(&bytes, path)?;
    AttributionMap::new(plane, Provenance::new("hmap", serde_json::json!({ "path": path })))
}

/// 8-bit grayscale mask: 255 where the mask is set, 0 elsewhere.
pub fn write_mask_png(mask: &PerturbMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = mask
        .plane()
        .data()
        .iter()
        .map(|v| if *v >= 0.5 { 255u8 } else { 0 })
        .collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| AttribError::Shape("mask buffer size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| AttribError::Codec {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a grayscale mask PNG; values `>= 128` are set.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<PerturbMask> {
    let path = path.as_ref();
    let decoded = open_png(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let luma = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw(),
        DynamicImage::ImageRgb8(img) => img.into_raw().chunks_exact(3).map(|p| p[0]).collect(),
        other => {
            return Err(AttribError::format(
                path,
                format!("expected 8-bit mask PNG, got {:?}", other.color()),
            ))
        }
    };
    let data = luma.into_iter().map(|v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    PerturbMask::binary(Plane::new(h, w, data)?)
}
