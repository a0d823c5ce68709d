//! Image, mask and heatmap types plus the shared image operators.
//!
//! All images are `H×W×3` with intensities in `[0, 1]`, stored row-major with
//! the three channels interleaved. Masks and heatmaps are single-channel
//! [`Plane`]s of the same spatial layout.

mod io;
mod ops;

pub use io::{
    decode_hmap, encode_hmap, read_hmap, read_image, read_mask_png, render_heatmap_gray,
    write_heatmap, write_hmap, write_image, write_mask_png, write_plane_png,
};
pub use ops::{
    bilinear_resize, composite, gaussian_blur, gaussian_blur_plane, gaussian_kernel, jitter,
    resize_image, BilinearResize, JitterDirection, JITTER_MAX,
};
pub(crate) use ops::{composite_into, jitter_adjoint_into, jitter_into};

use serde::{Deserialize, Serialize};

use crate::error::{AttribError, Result};

/// Number of color channels of every [`Image`].
pub const CHANNELS: usize = 3;

/// A single-channel real field, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(AttribError::Shape(format!(
                "plane {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Affine rescale to `[0, 1]`; a constant plane maps to all zeros.
    pub fn min_max_normalized(&self) -> Plane {
        let (lo, hi) = (self.min(), self.max());
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &Plane, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(AttribError::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

/// An `H×W×3` color image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB data, rejecting non-finite or
    /// out-of-range intensities.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(AttribError::Shape(format!(
                "image {}x{}x3 needs {} values, got {}",
                height,
                width,
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AttribError::InvalidData(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// Skips the range check. Only for finite-difference probes, which step
    /// a coordinate slightly outside `[0, 1]`.
    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Image {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        let color = color.map(|v| v.clamp(0.0, 1.0));
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// Builds an image pixel by pixel; values are clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                data.extend(px.iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn from_channels(channels: [&Plane; 3]) -> Result<Self> {
        let (h, w) = (channels[0].height(), channels[0].width());
        for p in &channels[1..] {
            channels[0].check_same_shape(p, "channel planes")?;
        }
        let mut data = Vec::with_capacity(h * w * CHANNELS);
        for i in 0..h * w {
            for p in &channels {
                data.push(p.data()[i]);
            }
        }
        Image::new(h, w, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Mutable access for in-place perturbation; callers keep values in range.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, ch: usize) -> Plane {
        let data = self.data.iter().skip(ch).step_by(CHANNELS).copied().collect();
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Plane {
        let data = self
            .data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<Image> {
        bbox.check_within(self.height, self.width)?;
        let mut data = Vec::with_capacity(bbox.area() * CHANNELS);
        for r in bbox.y_min..=bbox.y_max {
            let start = (r * self.width + bbox.x_min) * CHANNELS;
            let end = (r * self.width + bbox.x_max + 1) * CHANNELS;
            data.extend_from_slice(&self.data[start..end]);
        }
        Ok(Image {
            height: bbox.height(),
            width: bbox.width(),
            data,
        })
    }

    /// Returns a copy with the listed pixels set to `color`.
    pub fn with_pixels_set(&self, pixels: &[usize], color: [f64; 3]) -> Image {
        let mut out = self.clone();
        for &p in pixels {
            out.data[p * CHANNELS..p * CHANNELS + CHANNELS].copy_from_slice(&color);
        }
        out
    }
}

/// Whether a mask is continuous in `[0, 1]` or strictly binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Continuous,
    Binary,
}

/// A perturbation mask: 1 marks pixels replaced by the filler.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbMask {
    plane: Plane,
    kind: MaskKind,
}

impl PerturbMask {
    pub fn continuous(plane: Plane) -> Result<Self> {
        if let Some(v) = plane.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AttribError::InvalidData(format!("mask value {v} outside [0, 1]")));
        }
        Ok(PerturbMask {
            plane,
            kind: MaskKind::Continuous,
        })
    }

    pub fn binary(plane: Plane) -> Result<Self> {
        if let Some(v) = plane.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(AttribError::InvalidData(format!("binary mask value {v}")));
        }
        Ok(PerturbMask {
            plane,
            kind: MaskKind::Binary,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        PerturbMask {
            plane: Plane::zeros(height, width),
            kind: MaskKind::Binary,
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        PerturbMask {
            plane: Plane::filled(height, width, 1.0),
            kind: MaskKind::Binary,
        }
    }

    /// Binary mask from an explicit list of flat pixel indices.
    pub fn from_pixels(height: usize, width: usize, pixels: impl IntoIterator<Item = usize>) -> Self {
        let mut plane = Plane::zeros(height, width);
        for p in pixels {
            plane.data_mut()[p] = 1.0;
        }
        PerturbMask {
            plane,
            kind: MaskKind::Binary,
        }
    }

    /// Binary mask that is 1 inside `bbox`.
    pub fn from_box(height: usize, width: usize, bbox: &BoundingBox) -> Self {
        let plane = Plane::from_fn(height, width, |r, c| if bbox.contains(r, c) { 1.0 } else { 0.0 });
        PerturbMask {
            plane,
            kind: MaskKind::Binary,
        }
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    /// Values `>= threshold` become 1, the rest 0.
    pub fn binarized(&self, threshold: f64) -> PerturbMask {
        if self.kind == MaskKind::Binary {
            return self.clone();
        }
        let data = self
            .plane
            .data()
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect();
        PerturbMask {
            plane: Plane {
                height: self.plane.height,
                width: self.plane.width,
                data,
            },
            kind: MaskKind::Binary,
        }
    }

    /// `1 - m`, keeping the kind.
    pub fn complement(&self) -> PerturbMask {
        let data = self.plane.data().iter().map(|v| 1.0 - v).collect();
        PerturbMask {
            plane: Plane {
                height: self.plane.height,
                width: self.plane.width,
                data,
            },
            kind: self.kind,
        }
    }

    pub fn count_ones(&self) -> usize {
        self.plane.data().iter().filter(|v| **v >= 0.5).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.plane.data().iter().all(|v| *v >= 0.5)
    }

    pub fn is_all_zeros(&self) -> bool {
        self.plane.data().iter().all(|v| *v < 0.5)
    }
}

/// Method name and hyperparameters that produced a heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub params: serde_json::Value,
}

impl Provenance {
    pub fn new(method: impl Into<String>, params: serde_json::Value) -> Self {
        Provenance {
            method: method.into(),
            params,
        }
    }

    pub fn unknown() -> Self {
        Provenance::new("unknown", serde_json::Value::Null)
    }
}

/// Raw real-valued heatmap. Normalization is always a derived view.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    plane: Plane,
    pub provenance: Provenance,
}

impl AttributionMap {
    pub fn new(plane: Plane, provenance: Provenance) -> Result<Self> {
        if plane.data().iter().any(|v| !v.is_finite()) {
            return Err(AttribError::InvalidData("attribution map has non-finite values".into()));
        }
        Ok(AttributionMap { plane, provenance })
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        Self::new(plane, Provenance::unknown())
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    /// Scaled by the maximum absolute value into `[-1, 1]`; an all-zero map
    /// stays all-zero.
    pub fn normalized(&self) -> Plane {
        let peak = self.plane.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Plane::zeros(self.plane.height(), self.plane.width());
        }
        let data = self.plane.data().iter().map(|v| v / peak).collect();
        Plane {
            height: self.plane.height(),
            width: self.plane.width(),
            data,
        }
    }
}

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(AttribError::Parameter(format!(
                "bounding box ({x_min},{y_min},{x_max},{y_max}) has min > max"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: width.saturating_sub(1),
            y_max: height.saturating_sub(1),
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.y_min && row <= self.y_max && col >= self.x_min && col <= self.x_max
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.x_max >= width || self.y_max >= height {
            return Err(AttribError::Shape(format!(
                "box ({},{},{},{}) outside {}x{} image",
                self.x_min, self.y_min, self.x_max, self.y_max, height, width
            )));
        }
        Ok(())
    }
}
