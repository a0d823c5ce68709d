//! Heatmap similarity metrics and hyperparameter sweeps.
//!
//! A sweep reruns one method over `k` values of a single hyperparameter and
//! scores all `k(k−1)/2` heatmap pairs per image with SSIM, the Pearson
//! correlation of HOG descriptors, and Spearman rank correlation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrib::MethodConfig;
use crate::error::{AttribError, Result};
use crate::fillers::FillStrategy;
use crate::imgcore::{Image, Plane};
use crate::model::ClassifierOracle;

/// Averaging window for SSIM statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SsimWindow {
    /// Box window with sample (N−1) covariance.
    Uniform { size: usize },
    /// Gaussian window with weighted (population) covariance.
    Gaussian { size: usize, sigma: f64 },
}

impl SsimWindow {
    fn size(&self) -> usize {
        match *self {
            SsimWindow::Uniform { size } | SsimWindow::Gaussian { size, .. } => size,
        }
    }

    fn shrunk_to(&self, side: usize) -> SsimWindow {
        let fit = |s: usize| if s <= side { s } else if side % 2 == 1 { side } else { side.saturating_sub(1).max(1) };
        match *self {
            SsimWindow::Uniform { size } => SsimWindow::Uniform { size: fit(size) },
            SsimWindow::Gaussian { size, sigma } => SsimWindow::Gaussian { size: fit(size), sigma },
        }
    }

    /// Separable 1-D taps summing to 1.
    fn taps(&self) -> Vec<f64> {
        match *self {
            SsimWindow::Uniform { size } => vec![1.0 / size as f64; size],
            SsimWindow::Gaussian { size, sigma } => {
                let c = (size as f64 - 1.0) / 2.0;
                let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: SsimWindow,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: SsimWindow::Uniform { size: 7 }, k1: 0.01, k2: 0.03 }
    }
}

/// Mean SSIM and mean contrast-structure term over all valid windows.
/// The window shrinks to the largest odd size that fits a small image.
fn ssim_components(a: &Plane, b: &Plane, params: &SsimParams, data_range: f64) -> (f64, f64) {
    let (h, w) = (a.height(), a.width());
    let window = params.window.shrunk_to(h.min(w));
    let n = window.size();
    let taps = window.taps();
    let (oh, ow) = (h - n + 1, w - n + 1);
    // Separable weighted sums of a, b, a², b², ab.
    let fields = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                rows[r * ow + c] = (0..n).map(|k| taps[k] * f(a.get(r, c + k), b.get(r, c + k))).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..n).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
            }
        }
        out
    };
    let ma = fields(&|x, _| x);
    let mb = fields(&|_, y| y);
    let maa = fields(&|x, _| x * x);
    let mbb = fields(&|_, y| y * y);
    let mab = fields(&|x, y| x * y);
    let cov_scale = match window {
        SsimWindow::Uniform { size } if size * size > 1 => {
            let np = (size * size) as f64;
            np / (np - 1.0)
        }
        _ => 1.0,
    };
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..oh * ow {
        let va = cov_scale * (maa[i] - ma[i] * ma[i]);
        let vb = cov_scale * (mbb[i] - mb[i] * mb[i]);
        let cov = cov_scale * (mab[i] - ma[i] * mb[i]);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    let count = (oh * ow) as f64;
    (ssim_sum / count, cs_sum / count)
}

/// SSIM with a 7×7 uniform window, `K1 = 0.01`, `K2 = 0.03` and the joint
/// value range of both inputs as data range.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default(), None)
}

/// SSIM with explicit parameters; `data_range` defaults to the joint range.
/// A zero data range yields 1 for identical inputs and 0 otherwise.
pub fn ssim_with(a: &Plane, b: &Plane, params: &SsimParams, data_range: Option<f64>) -> Result<f64> {
    a.check_same_shape(b, "SSIM inputs")?;
    if a.is_empty() {
        return Err(AttribError::Shape("SSIM of empty planes".into()));
    }
    let range = data_range.unwrap_or_else(|| a.max().max(b.max()) - a.min().min(b.min()));
    if !(range > 0.0) {
        log::warn!("SSIM on constant inputs; defined by equality");
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok(ssim_components(a, b, params, range).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams {
    pub weights: Vec<f64>,
    pub window: SsimWindow,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        MsSsimParams {
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
            window: SsimWindow::Gaussian { size: 11, sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn downsample2(p: &Plane) -> Plane {
    let (h, w) = ((p.height() / 2).max(1), (p.width() / 2).max(1));
    Plane::from_fn(h, w, |r, c| {
        let (r0, c0) = (2 * r, 2 * c);
        let r1 = (r0 + 1).min(p.height() - 1);
        let c1 = (c0 + 1).min(p.width() - 1);
        0.25 * (p.get(r0, c0) + p.get(r0, c1) + p.get(r1, c0) + p.get(r1, c1))
    })
}

/// Multi-scale SSIM of two planes: contrast-structure terms at the coarser
/// scales, full SSIM at the last, combined as a weighted geometric mean.
/// Negative terms are clipped to zero. Scales stop shrinking at 1×1.
pub fn ms_ssim_plane(a: &Plane, b: &Plane, params: &MsSsimParams) -> Result<f64> {
    a.check_same_shape(b, "MS-SSIM inputs")?;
    if params.weights.is_empty() || a.is_empty() {
        return Err(AttribError::Parameter("MS-SSIM needs at least one scale and a non-empty image".into()));
    }
    let sp = SsimParams { window: params.window, k1: params.k1, k2: params.k2 };
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut total = 1.0;
    let last = params.weights.len() - 1;
    for (i, wgt) in params.weights.iter().enumerate() {
        let (s, cs) = ssim_components(&x, &y, &sp, params.data_range);
        let term = if i == last { s } else { cs };
        total *= term.max(0.0).powf(*wgt);
        if i < last {
            x = downsample2(&x);
            y = downsample2(&y);
        }
    }
    Ok(total)
}

/// Five-scale MS-SSIM on color images, averaged over channels.
pub fn ms_ssim(x: &Image, y: &Image) -> Result<f64> {
    ms_ssim_with(x, y, &MsSsimParams::default())
}

pub fn ms_ssim_with(x: &Image, y: &Image, params: &MsSsimParams) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(AttribError::Shape("MS-SSIM inputs differ in size".into()));
    }
    let mut sum = 0.0;
    for ch in 0..3 {
        sum += ms_ssim_plane(&x.channel(ch), &y.channel(ch), params)?;
    }
    Ok(sum / 3.0)
}

/// HOG layout: 9 unsigned orientation bins over [0°, 180°), 8×8-pixel cells,
/// 2×2-cell blocks with stride one cell, L2 block normalization
/// `v / sqrt(‖v‖² + ε²)` with ε = 1e−5. Gradients are central differences
/// (zero on the border rows/columns); each pixel votes its magnitude into one
/// bin; cell histograms are averaged over the cell area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HogParams {
    pub orientations: usize,
    pub cell: usize,
    pub block: usize,
    pub eps: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams { orientations: 9, cell: 8, block: 2, eps: 1e-5 }
    }
}

pub fn hog(p: &Plane, params: &HogParams) -> Result<Vec<f64>> {
    let (h, w) = (p.height(), p.width());
    let (cy, cx) = (h / params.cell, w / params.cell);
    if params.orientations == 0 || params.cell == 0 || params.block == 0 || cy < params.block || cx < params.block {
        return Err(AttribError::Parameter(format!(
            "{h}x{w} map is too small for {}px cells in {}x{} blocks",
            params.cell, params.block, params.block
        )));
    }
    let nb = params.orientations;
    let mut cells = vec![0.0; cy * cx * nb];
    let bin_width = 180.0 / nb as f64;
    for r in 0..cy * params.cell {
        for c in 0..cx * params.cell {
            let gy = if r > 0 && r + 1 < h { p.get(r + 1, c) - p.get(r - 1, c) } else { 0.0 };
            let gx = if c > 0 && c + 1 < w { p.get(r, c + 1) - p.get(r, c - 1) } else { 0.0 };
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((angle / bin_width) as usize).min(nb - 1);
            cells[((r / params.cell) * cx + c / params.cell) * nb + bin] += mag;
        }
    }
    let area = (params.cell * params.cell) as f64;
    cells.iter_mut().for_each(|v| *v /= area);
    let mut out = Vec::with_capacity((cy - params.block + 1) * (cx - params.block + 1) * params.block * params.block * nb);
    for by in 0..=cy - params.block {
        for bx in 0..=cx - params.block {
            let start = out.len();
            for r in by..by + params.block {
                for c in bx..bx + params.block {
                    out.extend_from_slice(&cells[(r * cx + c) * nb..(r * cx + c + 1) * nb]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + params.eps * params.eps).sqrt();
            out[start..].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

fn pearson_raw(a: &[f64], b: &[f64]) -> Option<f64> {
    if a == b {
        return a.iter().any(|v| *v != a[0]).then_some(1.0);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation; when either side has zero variance the result is 1
/// for equal vectors and 0 otherwise.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(AttribError::Shape("Pearson inputs must be equal-length and non-empty".into()));
    }
    Ok(pearson_raw(a, b).unwrap_or_else(|| {
        log::warn!("Pearson correlation of a zero-variance vector");
        if a == b { 1.0 } else { 0.0 }
    }))
}

/// Pearson correlation of the two maps' HOG descriptors.
pub fn hog_pearson(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_same_shape(b, "HOG inputs")?;
    let params = HogParams::default();
    pearson(&hog(a, &params)?, &hog(b, &params)?)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation over flattened maps; 0 when either is constant.
pub fn spearman(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_same_shape(b, "Spearman inputs")?;
    if a.is_empty() {
        return Err(AttribError::Shape("Spearman of empty planes".into()));
    }
    Ok(pearson_raw(&average_ranks(a.data()), &average_ranks(b.data())).unwrap_or_else(|| {
        log::warn!("Spearman correlation of a constant map; defined as 0");
        0.0
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Ssim,
    HogPearson,
    Spearman,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 3] = [SimilarityMetric::Ssim, SimilarityMetric::HogPearson, SimilarityMetric::Spearman];

    pub fn name(&self) -> &'static str {
        match self {
            SimilarityMetric::Ssim => "ssim",
            SimilarityMetric::HogPearson => "hog_pearson",
            SimilarityMetric::Spearman => "spearman",
        }
    }

    /// Scores two heatmaps; SSIM and HOG see min-max normalized copies.
    pub fn score(&self, a: &Plane, b: &Plane) -> Result<f64> {
        match self {
            SimilarityMetric::Ssim => ssim(&a.min_max_normalized(), &b.min_max_normalized()),
            SimilarityMetric::HogPearson => hog_pearson(&a.min_max_normalized(), &b.min_max_normalized()),
            SimilarityMetric::Spearman => spearman(a, b),
        }
    }
}

/// Number of unordered pairs among `k` items.
pub fn pair_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// The hyperparameter varied by a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// Axis label for output.
    pub name: String,
    /// Config field that takes each value.
    pub key: String,
    pub values: Vec<serde_json::Value>,
}

impl SweepAxis {
    pub fn patch_sizes(sizes: &[usize]) -> Self {
        SweepAxis { name: "patch-sizes".into(), key: "patch".into(), values: sizes.iter().map(|v| (*v).into()).collect() }
    }

    pub fn random_seeds(seeds: &[u64]) -> Self {
        SweepAxis { name: "random-seeds".into(), key: "seed".into(), values: seeds.iter().map(|v| (*v).into()).collect() }
    }

    pub fn mask_sizes(sizes: &[usize]) -> Self {
        SweepAxis { name: "mask-sizes".into(), key: "mask_size".into(), values: sizes.iter().map(|v| (*v).into()).collect() }
    }

    /// Any other config field, e.g. LIME's superpixel count.
    pub fn custom(key: &str, values: Vec<serde_json::Value>) -> Self {
        SweepAxis { name: key.to_string(), key: key.to_string(), values }
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Patch sizes swept for SP at 224 px.
pub const PATCH_SIZES: [usize; 5] = [5, 17, 29, 41, 53];
/// Coarse mask sizes swept for MP2 at 224 px.
pub const MASK_SIZES: [usize; 3] = [28, 56, 112];
/// Random batches drawn for the LIME axis and the samples per batch.
pub const RANDOM_BATCHES: usize = 5;
pub const RANDOM_BATCH_SAMPLES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: MethodConfig,
    pub axis: SweepAxis,
}

impl SweepSpec {
    /// Configs for each axis value. Named axes must match their method.
    pub fn configs(&self) -> Result<Vec<MethodConfig>> {
        if self.axis.k() < 2 {
            return Err(AttribError::Parameter("a sweep needs at least two axis values".into()));
        }
        let expected = match self.axis.name.as_str() {
            "patch-sizes" => Some("sp"),
            "random-seeds" => Some("lime"),
            "mask-sizes" => Some("mp2"),
            _ => None,
        };
        if let Some(m) = expected {
            if self.base.method() != m {
                return Err(AttribError::Parameter(format!(
                    "axis {} applies to {m}, not {}",
                    self.axis.name,
                    self.base.method()
                )));
            }
        }
        self.axis.values.iter().map(|v| self.base.with_field(&self.axis.key, v.clone())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: String,
    pub axis: String,
    pub k: usize,
    pub pairs: usize,
    pub images: usize,
    /// Mean pair score per image, per metric (in [`SimilarityMetric::ALL`] order).
    pub per_image: Vec<[f64; 3]>,
    pub summary: Vec<MetricSummary>,
}

impl SweepResult {
    pub fn mean_of(&self, metric: SimilarityMetric) -> f64 {
        self.summary.iter().find(|s| s.metric == metric.name()).map_or(f64::NAN, |s| s.mean)
    }

    /// CSV `method,metric,mean,std` preceded by `#` lines recording the sweep
    /// geometry and metric parameters.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| AttribError::io(path, e))?;
        let header = format!(
            "# axis={} k={} pairs={} images={}\n# ssim={}\n# hog={}\n",
            self.axis,
            self.k,
            self.pairs,
            self.images,
            serde_json::to_string(&SsimParams::default()).unwrap_or_default(),
            serde_json::to_string(&HogParams::default()).unwrap_or_default(),
        );
        file.write_all(header.as_bytes()).map_err(|e| AttribError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["method", "metric", "mean", "std"]).map_err(|e| crate::attrib::sp::csv_error(path, e))?;
        for s in &self.summary {
            w.write_record([self.method.clone(), s.metric.clone(), s.mean.to_string(), s.std.to_string()])
                .map_err(|e| crate::attrib::sp::csv_error(path, e))?;
        }
        w.flush().map_err(|e| AttribError::io(path, e))
    }
}

/// Mean and sample standard deviation, summed in sorted order so the result
/// does not depend on input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Mean pair score per metric over all unordered pairs of `maps`.
pub fn pairwise_scores(maps: &[Plane]) -> Result<[f64; 3]> {
    let pairs: Vec<(usize, usize)> = (0..maps.len()).flat_map(|i| (i + 1..maps.len()).map(move |j| (i, j))).collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut s = [0.0; 3];
            for (slot, m) in s.iter_mut().zip(SimilarityMetric::ALL) {
                *slot = m.score(&maps[i], &maps[j])?;
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = scores.iter().map(|s| s[k]).sum::<f64>() / scores.len() as f64;
    }
    Ok(out)
}

/// Runs a sweep over labelled images. `filler`, when given, overrides the
/// base config's filler.
pub fn run_sweep(
    images: &[(Image, usize)],
    spec: &SweepSpec,
    oracle: &dyn ClassifierOracle,
    filler: Option<&FillStrategy>,
) -> Result<SweepResult> {
    if images.is_empty() {
        return Err(AttribError::InvalidData("sweep over an empty image set".into()));
    }
    let mut spec = spec.clone();
    if let Some(f) = filler {
        spec.base.set_filler(f.clone())?;
    }
    let configs = spec.configs()?;
    let jobs: Vec<(usize, usize)> = (0..images.len()).flat_map(|i| (0..configs.len()).map(move |k| (i, k))).collect();
    let maps = jobs
        .par_iter()
        .map(|&(i, k)| {
            let (x, label) = &images[i];
            let mut cfg = configs[k].clone();
            cfg.set_target_class(*label);
            cfg.run(x, oracle)
                .map(|m| m.into_plane())
                .map_err(|e| e.context(format!("sweep image {i}, {} = {}", spec.axis.key, spec.axis.values[k])))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_image = maps
        .chunks(configs.len())
        .map(pairwise_scores)
        .collect::<Result<Vec<_>>>()?;
    let summary = SimilarityMetric::ALL
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let (mean, std) = mean_std(&per_image.iter().map(|s| s[k]).collect::<Vec<_>>());
            MetricSummary { metric: m.name().to_string(), mean, std }
        })
        .collect();
    Ok(SweepResult {
        method: spec.base.label(),
        axis: spec.axis.name.clone(),
        k: configs.len(),
        pairs: pair_count(configs.len()),
        images: images.len(),
        per_image,
        summary,
    })
}
