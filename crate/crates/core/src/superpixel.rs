//! SLIC superpixels in scaled RGB space with enforced 4-connectivity.
//!
//! Label dump (`SEGM`, little-endian): magic, version byte `1`, `u32` width,
//! `u32` height, then `u32` labels row-major.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use image::RgbImage;

use crate::error::{AttribError, Result};
use crate::fillers::noise_value;
use crate::imgcore::{Image, PerturbMask, Plane, CHANNELS};

const SEGM_MAGIC: &[u8; 4] = b"SEGM";
const SEGM_VERSION: u8 = 1;

/// Intensities are scaled to `[0, 100]` so the compactness weight has the
/// same meaning as for CIELAB lightness.
const COLOR_SCALE: f64 = 100.0;

pub const DEFAULT_SEGMENTS: usize = 50;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_SLIC_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    pixels: Vec<Vec<usize>>,
}

impl Segmentation {
    /// Builds a segmentation from a label grid whose ids must be `0..S`, each
    /// used at least once.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(AttribError::Shape(format!("{} labels for a {height}x{width} grid", labels.len())));
        }
        let count = *labels.iter().max().unwrap() as usize + 1;
        let mut pixels = vec![Vec::new(); count];
        for (p, &l) in labels.iter().enumerate() {
            pixels[l as usize].push(p);
        }
        if pixels.iter().any(|v| v.is_empty()) {
            return Err(AttribError::InvalidData("superpixel labels are not contiguous".into()));
        }
        Ok(Segmentation { height, width, labels, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.pixels.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col] as usize
    }

    /// Flat pixel indices of superpixel `k`, ascending.
    pub fn pixels(&self, k: usize) -> &[usize] {
        &self.pixels[k]
    }

    pub fn area(&self, k: usize) -> usize {
        self.pixels[k].len()
    }

    /// Binary mask that is 1 on every pixel of the listed superpixels.
    pub fn mask(&self, subset: impl IntoIterator<Item = usize>) -> Result<PerturbMask> {
        let mut data = vec![0.0; self.height * self.width];
        for k in subset {
            if k >= self.count() {
                return Err(AttribError::Parameter(format!("superpixel {k} out of range ({})", self.count())));
            }
            for &p in &self.pixels[k] {
                data[p] = 1.0;
            }
        }
        PerturbMask::binary(Plane::new(self.height, self.width, data)?)
    }

    /// Full-resolution plane painting `values[k]` onto superpixel `k`.
    pub fn paint(&self, values: &[f64]) -> Result<Plane> {
        if values.len() != self.count() {
            return Err(AttribError::Shape(format!("{} values for {} superpixels", values.len(), self.count())));
        }
        let data = self.labels.iter().map(|&l| values[l as usize]).collect();
        Plane::new(self.height, self.width, data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.labels.len() * 4);
        out.extend_from_slice(SEGM_MAGIC);
        out.push(SEGM_VERSION);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..4] != SEGM_MAGIC {
            return Err(AttribError::format(path, "missing SEGM magic"));
        }
        if bytes[4] != SEGM_VERSION {
            return Err(AttribError::format(path, format!("unsupported SEGM version {}", bytes[4])));
        }
        let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let payload = &bytes[13..];
        if width.checked_mul(height).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
            return Err(AttribError::format(path, "label payload size does not match dimensions"));
        }
        let labels = payload.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        Segmentation::from_labels(height, width, labels).map_err(|e| AttribError::format(path, e.to_string()))
    }

    /// Writes a color-coded PNG and the raw label sidecar.
    pub fn write(&self, png_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<()> {
        let png_path = png_path.as_ref();
        let raw: Vec<u8> = self
            .labels
            .iter()
            .flat_map(|&l| (0..3).map(move |c| (noise_value(0x5E6, l as u64 * 3 + c) * 255.0) as u8))
            .collect();
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized from labels");
        img.save_with_format(png_path, image::ImageFormat::Png)
            .map_err(|source| AttribError::Codec { path: png_path.to_path_buf(), source })?;
        let raw_path = raw_path.as_ref();
        fs::write(raw_path, self.encode()).map_err(|e| AttribError::io(raw_path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| AttribError::io(path, e))?;
        Segmentation::decode(&bytes, path)
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    r: f64,
    c: f64,
    color: [f64; 3],
}

/// Segments `x` into roughly `n_segments` superpixels. The produced count
/// may differ; labels are renumbered `0..count` in first-appearance order.
pub fn slic(x: &Image, n_segments: usize, compactness: f64, iterations: usize) -> Result<Segmentation> {
    let (h, w) = (x.height(), x.width());
    if n_segments < 2 || n_segments > h * w {
        return Err(AttribError::Parameter(format!(
            "superpixel count must be in [2, {}], got {n_segments}",
            h * w
        )));
    }
    if !(compactness > 0.0) {
        return Err(AttribError::Parameter(format!("compactness must be > 0, got {compactness}")));
    }
    let color = |p: usize| -> [f64; 3] {
        let d = &x.data()[p * CHANNELS..(p + 1) * CHANNELS];
        [d[0] * COLOR_SCALE, d[1] * COLOR_SCALE, d[2] * COLOR_SCALE]
    };
    let step = ((h * w) as f64 / n_segments as f64).sqrt();
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let (sy, sx) = (h as f64 / ny as f64, w as f64 / nx as f64);

    let grad = |r: usize, c: usize| -> f64 {
        let at = |rr: usize, cc: usize| color(rr * w + cc);
        let (up, down) = (at(r.saturating_sub(1), c), at((r + 1).min(h - 1), c));
        let (left, right) = (at(r, c.saturating_sub(1)), at(r, (c + 1).min(w - 1)));
        (0..3).map(|k| (down[k] - up[k]).powi(2) + (right[k] - left[k]).powi(2)).sum()
    };

    let mut centers = Vec::with_capacity(ny * nx);
    for j in 0..ny {
        for i in 0..nx {
            let r0 = (((j as f64 + 0.5) * sy) as usize).min(h - 1);
            let c0 = (((i as f64 + 0.5) * sx) as usize).min(w - 1);
            let (mut best, mut best_g) = ((r0, c0), grad(r0, c0));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
                    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                        continue;
                    }
                    let g = grad(r as usize, c as usize);
                    if g < best_g {
                        best = (r as usize, c as usize);
                        best_g = g;
                    }
                }
            }
            centers.push(Center { r: best.0 as f64, c: best.1 as f64, color: color(best.0 * w + best.1) });
        }
    }

    // Start from the seeding grid so every pixel has a label even if no
    // window reaches it.
    let mut labels: Vec<u32> = (0..h * w)
        .map(|p| {
            let (j, i) = (((p / w) as f64 / sy) as usize, ((p % w) as f64 / sx) as usize);
            (j.min(ny - 1) * nx + i.min(nx - 1)) as u32
        })
        .collect();
    let reach = step.ceil() as i64;
    let spatial = (compactness / step).powi(2);
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, ctr) in centers.iter().enumerate() {
            let (cr, cc) = (ctr.r.round() as i64, ctr.c.round() as i64);
            let (r0, r1) = ((cr - reach).max(0) as usize, ((cr + reach).min(h as i64 - 1)) as usize);
            let (c0, c1) = ((cc - reach).max(0) as usize, ((cc + reach).min(w as i64 - 1)) as usize);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = r * w + c;
                    let px = color(p);
                    let dc: f64 = (0..3).map(|i| (px[i] - ctr.color[i]).powi(2)).sum();
                    let ds = (r as f64 - ctr.r).powi(2) + (c as f64 - ctr.c).powi(2);
                    let d = dc + ds * spatial;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            let px = color(p);
            s[0] += (p / w) as f64;
            s[1] += (p % w) as f64;
            s[2] += px[0];
            s[3] += px[1];
            s[4] += px[2];
            s[5] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                *ctr = Center { r: s[0] / s[5], c: s[1] / s[5], color: [s[2] / s[5], s[3] / s[5], s[4] / s[5]] };
            }
        }
    }
    enforce_connectivity(h, w, &mut labels);
    Segmentation::from_labels(h, w, labels)
}

/// Merges every non-largest 4-connected piece of a label into the largest
/// adjacent superpixel that already owns a main piece, then renumbers labels
/// by first appearance.
fn enforce_connectivity(h: usize, w: usize, labels: &mut [u32]) {
    let n = h * w;
    let nbrs = |p: usize| {
        let (r, c) = (p / w, p % w);
        [
            (r > 0).then(|| p - w),
            (r + 1 < h).then(|| p + w),
            (c > 0).then(|| p - 1),
            (c + 1 < w).then(|| p + 1),
        ]
    };
    // Connected components in row-major discovery order.
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for q in nbrs(p).into_iter().flatten() {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        comp_label.push(labels[start]);
        comp_size.push(size);
    }
    let ncomp = comp_label.len();
    let max_label = *comp_label.iter().max().unwrap_or(&0) as usize;
    let mut main_of_label = vec![usize::MAX; max_label + 1];
    for k in 0..ncomp {
        let l = comp_label[k] as usize;
        if main_of_label[l] == usize::MAX || comp_size[k] > comp_size[main_of_label[l]] {
            main_of_label[l] = k;
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
    for p in 0..n {
        for q in nbrs(p).into_iter().flatten() {
            if comp[p] != comp[q] {
                adj[comp[p]].insert(comp[q]);
            }
        }
    }
    // owner[k]: the label component k finally belongs to, once attached.
    let mut owner: Vec<Option<u32>> = (0..ncomp)
        .map(|k| (main_of_label[comp_label[k] as usize] == k).then_some(comp_label[k]))
        .collect();
    let mut label_area = vec![0usize; max_label + 1];
    for k in 0..ncomp {
        if let Some(l) = owner[k] {
            label_area[l as usize] += comp_size[k];
        }
    }
    loop {
        let mut changed = false;
        let mut pending = false;
        for k in 0..ncomp {
            if owner[k].is_some() {
                continue;
            }
            let target = adj[k]
                .iter()
                .filter_map(|&j| owner[j])
                .max_by(|a, b| label_area[*a as usize].cmp(&label_area[*b as usize]).then(b.cmp(a)));
            match target {
                Some(l) => {
                    owner[k] = Some(l);
                    label_area[l as usize] += comp_size[k];
                    changed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !changed {
            break;
        }
    }
    let mut remap = vec![u32::MAX; max_label + 1];
    let mut next = 0u32;
    for p in 0..n {
        let l = owner[comp[p]].expect("every component reaches a main piece") as usize;
        if remap[l] == u32::MAX {
            remap[l] = next;
            next += 1;
        }
        labels[p] = remap[l];
    }
}

/// True when every superpixel is a single 4-connected region.
pub fn is_connected(seg: &Segmentation) -> bool {
    let (h, w) = (seg.height(), seg.width());
    (0..seg.count()).all(|k| {
        let pix = seg.pixels(k);
        let mut seen = vec![false; h * w];
        let mut stack = vec![pix[0]];
        seen[pix[0]] = true;
        let mut count = 0;
        while let Some(p) = stack.pop() {
            count += 1;
            let (r, c) = (p / w, p % w);
            let cand = [
                (r > 0).then(|| p - w),
                (r + 1 < h).then(|| p + w),
                (c > 0).then(|| p - 1),
                (c + 1 < w).then(|| p + 1),
            ];
            for q in cand.into_iter().flatten() {
                if !seen[q] && seg.labels()[q] as usize == k {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        count == pix.len()
    })
}
