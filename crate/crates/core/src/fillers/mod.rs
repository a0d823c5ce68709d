//! Filler images: the content composited into a masked region.
//!
//! Every strategy returns a full-size image; callers always re-composite with
//! the mask, so unmasked pixels of a perturbation sample are exact copies of
//! the input regardless of what the filler produced there.

mod external;
mod inpaint;

pub use external::ExternalInpainter;
pub use inpaint::{harmonic_inpaint, InpaintReport};

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{AttribError, Result};
use crate::imgcore::{gaussian_blur, Image, PerturbMask, Plane, CHANNELS};

/// Dataset-mean color used by the gray filler.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const DEFAULT_BLUR_SIGMA: f64 = 10.0;
pub const DEFAULT_INPAINT_ITERATIONS: usize = 5000;
pub const DEFAULT_INPAINT_TOLERANCE: f64 = 1e-5;

/// Produces the filler image for a given input and mask.
pub trait Filler: Send + Sync {
    fn fill(&self, x: &Image, m: &PerturbMask) -> Result<Image>;

    /// False when the output ignores the mask, so one fill can be reused for
    /// every mask on the same image.
    fn depends_on_mask(&self) -> bool;

    /// Short human-readable name for provenance records.
    fn describe(&self) -> String;
}

/// The built-in strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FillStrategy {
    Gray { color: [f64; 3] },
    Noise { seed: u64 },
    Blur { sigma: f64 },
    Inpaint { iterations: usize, tolerance: f64 },
    InpaintExternal(ExternalInpainter),
}

impl FillStrategy {
    pub fn gray() -> Self {
        FillStrategy::Gray { color: IMAGENET_MEAN }
    }

    pub fn noise(seed: u64) -> Self {
        FillStrategy::Noise { seed }
    }

    pub fn blur() -> Self {
        FillStrategy::Blur { sigma: DEFAULT_BLUR_SIGMA }
    }

    pub fn inpaint() -> Self {
        FillStrategy::Inpaint {
            iterations: DEFAULT_INPAINT_ITERATIONS,
            tolerance: DEFAULT_INPAINT_TOLERANCE,
        }
    }

    /// Inpainting strategies only see the binarized mask and leave unmasked
    /// pixels untouched.
    pub fn is_inpainter(&self) -> bool {
        matches!(self, FillStrategy::Inpaint { .. } | FillStrategy::InpaintExternal(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FillStrategy::Gray { color } if color.iter().any(|c| !(0.0..=1.0).contains(c)) => {
                Err(AttribError::Parameter(format!("gray color {color:?} outside [0, 1]")))
            }
            FillStrategy::Blur { sigma } if !(*sigma > 0.0) => {
                Err(AttribError::Parameter(format!("blur sigma must be > 0, got {sigma}")))
            }
            FillStrategy::Inpaint { iterations, tolerance } if *iterations == 0 || !(*tolerance > 0.0) => Err(
                AttribError::Parameter("inpainting needs iterations >= 1 and tolerance > 0".into()),
            ),
            FillStrategy::InpaintExternal(ext) => ext.validate(),
            _ => Ok(()),
        }
    }
}

impl Filler for FillStrategy {
    fn fill(&self, x: &Image, m: &PerturbMask) -> Result<Image> {
        if (m.height(), m.width()) != (x.height(), x.width()) {
            return Err(AttribError::Shape(format!(
                "filler mask {}x{} vs image {}x{}",
                m.height(),
                m.width(),
                x.height(),
                x.width()
            )));
        }
        match self {
            FillStrategy::Gray { color } => Ok(Image::filled(x.height(), x.width(), *color)),
            FillStrategy::Noise { seed } => Ok(noise_image(x.height(), x.width(), *seed)),
            FillStrategy::Blur { sigma } => gaussian_blur(x, *sigma),
            FillStrategy::Inpaint { iterations, tolerance } => {
                Ok(harmonic_inpaint(x, &m.binarized(0.5), *iterations, *tolerance)?.0)
            }
            FillStrategy::InpaintExternal(ext) => ext.inpaint(x, &m.binarized(0.5)),
        }
    }

    fn depends_on_mask(&self) -> bool {
        self.is_inpainter()
    }

    fn describe(&self) -> String {
        match self {
            FillStrategy::Gray { .. } => "gray".into(),
            FillStrategy::Noise { .. } => "noise".into(),
            FillStrategy::Blur { .. } => "blur".into(),
            FillStrategy::Inpaint { .. } => "inpaint".into(),
            FillStrategy::InpaintExternal(e) => format!("inpaint-ext:{}", e.command),
        }
    }
}

impl fmt::Display for FillStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Counter-based uniform sample in `[0, 1)` for one flat index: a splitmix64
/// finalizer over `seed + (index + 1)·φ`, keeping the top 24 bits.
pub fn noise_value(seed: u64, index: u64) -> f64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f64 / (1u64 << 24) as f64
}

pub fn noise_image(height: usize, width: usize, seed: u64) -> Image {
    let data = (0..height * width * CHANNELS).map(|i| noise_value(seed, i as u64)).collect();
    Image::from_vec_unchecked(height, width, data)
}

fn hash_f64s(data: &[f64], h: &mut DefaultHasher) {
    data.len().hash(h);
    for v in data {
        v.to_bits().hash(h);
    }
}

/// Memoizes a mask-dependent filler by (image, mask) content hash.
pub struct CachedFiller<F> {
    inner: F,
    cache: Mutex<HashMap<(u64, u64), Arc<Image>>>,
    capacity: usize,
}

impl<F: Filler> CachedFiller<F> {
    pub fn new(inner: F, capacity: usize) -> Self {
        CachedFiller { inner, cache: Mutex::new(HashMap::new()), capacity }
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(x: &Image, m: &PerturbMask) -> (u64, u64) {
        let mut hx = DefaultHasher::new();
        (x.height(), x.width()).hash(&mut hx);
        hash_f64s(x.data(), &mut hx);
        let mut hm = DefaultHasher::new();
        (m.height(), m.width()).hash(&mut hm);
        hash_f64s(m.plane().data(), &mut hm);
        (hx.finish(), hm.finish())
    }
}

impl<F: Filler> Filler for CachedFiller<F> {
    fn fill(&self, x: &Image, m: &PerturbMask) -> Result<Image> {
        let key = Self::key(x, m);
        if let Some(hit) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok((**hit).clone());
        }
        let out = self.inner.fill(x, m)?;
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        if cache.len() >= self.capacity {
            cache.clear();
        }
        cache.insert(key, Arc::new(out.clone()));
        Ok(out)
    }

    fn depends_on_mask(&self) -> bool {
        self.inner.depends_on_mask()
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

impl<T: Filler + ?Sized> Filler for &T {
    fn fill(&self, x: &Image, m: &PerturbMask) -> Result<Image> {
        (**self).fill(x, m)
    }
    fn depends_on_mask(&self) -> bool {
        (**self).depends_on_mask()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: Filler + ?Sized> Filler for Box<T> {
    fn fill(&self, x: &Image, m: &PerturbMask) -> Result<Image> {
        (**self).fill(x, m)
    }
    fn depends_on_mask(&self) -> bool {
        (**self).depends_on_mask()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Filler used to linearize a mask-dependent (inpainting) filler around the
/// binary mask `mb`.
///
/// An inpainter returns `x` outside `mb`, which would make `f − x` vanish on
/// every candidate pixel. Instead, each pixel outside `mb` takes the value an
/// inpainter predicts for it when it is hidden: two complementary
/// checkerboards of `cell`-sized squares are inpainted together with `mb`, and
/// each pixel reads from the probe that hid it. Pixels inside `mb` take
/// `fill(x, mb)`. Mask-independent fillers are returned unchanged.
pub fn gradient_fill(filler: &dyn Filler, x: &Image, mb: &PerturbMask, cell: usize) -> Result<Image> {
    let base = filler.fill(x, mb)?;
    if !filler.depends_on_mask() {
        return Ok(base);
    }
    let cell = cell.max(1);
    let (h, w) = (x.height(), x.width());
    let inside = |r: usize, c: usize| mb.plane().get(r, c) >= 0.5;
    let parity = |r: usize, c: usize| (r / cell + c / cell) % 2;
    let probe = |p: usize| -> Result<Image> {
        let m = Plane::from_fn(h, w, |r, c| if inside(r, c) || parity(r, c) == p { 1.0 } else { 0.0 });
        let m = PerturbMask::binary(m)?;
        if m.is_all_ones() {
            return Ok(base.clone());
        }
        filler.fill(x, &m)
    };
    let probes = [probe(0)?, probe(1)?];
    let mut data = base.data().to_vec();
    for r in 0..h {
        for c in 0..w {
            if !inside(r, c) {
                let i = (r * w + c) * CHANNELS;
                data[i..i + CHANNELS].copy_from_slice(&probes[parity(r, c)].data()[i..i + CHANNELS]);
            }
        }
    }
    Ok(Image::from_vec_unchecked(h, w, data))
}
