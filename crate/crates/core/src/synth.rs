//! Synthetic "bright square vs. bright disk" dataset with ground-truth boxes
//! and object masks, small enough to train and evaluate on a laptop.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AttribError, Result};
use crate::eval::Annotation;
use crate::imgcore::{gaussian_blur_plane, write_image, write_mask_png, BoundingBox, Image, PerturbMask, Plane};

/// Class ids of the two shapes.
pub const SQUARE: usize = 0;
pub const DISK: usize = 1;
pub const DEFAULT_SIDE: usize = 32;

#[derive(Clone, Debug)]
pub struct ShapeSample {
    pub name: String,
    pub image: Image,
    pub label: usize,
    pub bbox: BoundingBox,
    pub mask: PerturbMask,
}

/// Smooth dim background texture in roughly `[0.05, 0.4]`.
fn background(side: usize, rng: &mut ChaCha8Rng) -> Result<[Plane; 3]> {
    let mut chan = || -> Result<Plane> {
        let noise = Plane::from_fn(side, side, |_, _| rng.gen());
        Ok(gaussian_blur_plane(&noise, 1.5)?.min_max_normalized())
    };
    let (a, b) = (chan()?, chan()?);
    let tint: [f64; 3] = [rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.15)];
    Ok([0, 1, 2].map(|ch| {
        Plane::from_fn(side, side, |r, c| {
            let v = if ch == 1 { b.get(r, c) } else { a.get(r, c) };
            tint[ch] + 0.25 * v
        })
    }))
}

/// One sample. Even indices are squares, odd indices disks.
pub fn shape_sample(index: usize, side: usize, seed: u64) -> Result<ShapeSample> {
    if side < 16 {
        return Err(AttribError::Parameter(format!("fixture side {side} < 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let label = index % 2;
    let bg = background(side, &mut rng)?;
    let extent = rng.gen_range(side / 4..=side / 2 - 2);
    let r0 = rng.gen_range(1..side - extent);
    let c0 = rng.gen_range(1..side - extent);
    let color: [f64; 3] = [rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0)];
    let center = (r0 as f64 + (extent as f64 - 1.0) / 2.0, c0 as f64 + (extent as f64 - 1.0) / 2.0);
    let radius = extent as f64 / 2.0;
    let inside = |r: usize, c: usize| {
        if label == SQUARE {
            (r0..r0 + extent).contains(&r) && (c0..c0 + extent).contains(&c)
        } else {
            let (dy, dx) = (r as f64 - center.0, c as f64 - center.1);
            dy * dy + dx * dx <= radius * radius
        }
    };
    let mut pixels = Vec::new();
    let image = Image::from_fn(side, side, |r, c| {
        if inside(r, c) {
            pixels.push(r * side + c);
            color
        } else {
            [bg[0].get(r, c), bg[1].get(r, c), bg[2].get(r, c)]
        }
    });
    let rows = pixels.iter().map(|p| p / side);
    let cols = pixels.iter().map(|p| p % side);
    let bbox = BoundingBox::new(
        cols.clone().min().unwrap_or(0),
        rows.clone().min().unwrap_or(0),
        cols.max().unwrap_or(0),
        rows.max().unwrap_or(0),
    )?;
    Ok(ShapeSample {
        name: format!("{index:04}"),
        image,
        label,
        bbox,
        mask: PerturbMask::from_pixels(side, side, pixels),
    })
}

/// Samples `start..start + count` of the stream for `seed`.
pub fn shapes_dataset(start: usize, count: usize, side: usize, seed: u64) -> Result<Vec<ShapeSample>> {
    (start..start + count).map(|i| shape_sample(i, side, seed)).collect()
}

/// Writes a training folder `<dir>/<class>/<name>.png`.
pub fn write_training_set(samples: &[ShapeSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for s in samples {
        let class_dir = dir.join(s.label.to_string());
        fs::create_dir_all(&class_dir).map_err(|e| AttribError::io(&class_dir, e))?;
        write_image(&s.image, class_dir.join(format!("{}.png", s.name)))?;
    }
    Ok(())
}

/// Writes an evaluation folder: `<name>.png`, `<name>.mask.png` and
/// `annotations.txt`.
pub fn write_eval_set(samples: &[ShapeSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| AttribError::io(dir, e))?;
    let mut annotations = Vec::with_capacity(samples.len());
    for s in samples {
        let file = format!("{}.png", s.name);
        write_image(&s.image, dir.join(&file))?;
        write_mask_png(&s.mask, dir.join(format!("{}.mask.png", s.name)))?;
        annotations.push(Annotation { file, class: s.label, boxes: vec![s.bbox] });
    }
    crate::eval::write_annotations(&annotations, dir.join("annotations.txt"))
}
