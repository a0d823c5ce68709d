//! LIME: fit a sparse linear model of the target score over superpixel
//! presence from randomly occluded samples.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sp::csv_error;
use super::{check_target, fill_or_gray, runtime_filler};
use crate::error::{AttribError, Result};
use crate::fillers::{FillStrategy, Filler};
use crate::imgcore::{composite, write_image, AttributionMap, Image, PerturbMask, Provenance};
use crate::model::ClassifierOracle;
use crate::superpixel::{slic, Segmentation, DEFAULT_COMPACTNESS, DEFAULT_SLIC_ITERATIONS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub segments: usize,
    pub samples: usize,
    /// Width of the exponential kernel on the normalized L2 distance.
    pub kernel_width: f64,
    pub lasso_lambda: f64,
    /// Full coordinate-descent cycles.
    pub fit_steps: usize,
    pub occlusion_prob: f64,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub seed: u64,
    pub filler: FillStrategy,
    pub target_class: usize,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            segments: 50,
            samples: 1000,
            kernel_width: 0.25,
            lasso_lambda: 0.01,
            fit_steps: 1000,
            occlusion_prob: 0.5,
            compactness: DEFAULT_COMPACTNESS,
            slic_iterations: DEFAULT_SLIC_ITERATIONS,
            seed: 0,
            filler: FillStrategy::gray(),
            target_class: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(AttribError::Parameter("LIME needs at least one sample".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(AttribError::Parameter("kernel width must be > 0".into()));
        }
        if !(self.lasso_lambda >= 0.0) {
            return Err(AttribError::Parameter("lasso lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(AttribError::Parameter("occlusion probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One perturbation sample. `presence[k]` is true when superpixel `k` kept
/// its original pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LimeSample {
    pub presence: Vec<bool>,
    pub score: f64,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct LimeOutput {
    pub map: AttributionMap,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub segmentation: Segmentation,
    pub samples: Vec<LimeSample>,
    /// Weighted LASSO objective after each coordinate-descent cycle.
    pub objective_trace: Vec<f64>,
}

/// Presence vectors for `n` samples; sample 0 keeps everything. Sample `i`
/// draws from its own RNG stream, so batches are reproducible in parallel.
pub fn draw_presence(segments: usize, n: usize, occlusion_prob: f64, seed: u64) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| {
            if i == 0 {
                return vec![true; segments];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..segments).map(|_| rng.gen::<f64>() >= occlusion_prob).collect()
        })
        .collect()
}

/// `x` with every absent superpixel replaced by filler content.
pub fn perturbed_image(x: &Image, seg: &Segmentation, presence: &[bool], filler: &dyn Filler) -> Result<Image> {
    let hidden: Vec<usize> = presence.iter().enumerate().filter(|(_, p)| !**p).map(|(k, _)| k).collect();
    if hidden.is_empty() {
        return Ok(x.clone());
    }
    let mask: PerturbMask = seg.mask(hidden)?;
    composite(x, &mask, &fill_or_gray(filler, x, &mask)?)
}

fn kernel_weight(x: &Image, xb: &Image, kernel_width: f64) -> (f64, f64) {
    let sq: f64 = x.data().iter().zip(xb.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = sq.sqrt() / (x.data().len() as f64).sqrt();
    (d, (-(d * d) / (kernel_width * kernel_width)).exp())
}

/// Draws and scores a batch of `cfg.samples` perturbations of `x`.
pub fn lime_sample_batch(
    x: &Image,
    seg: &Segmentation,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<Vec<LimeSample>> {
    cfg.validate()?;
    let presence = draw_presence(seg.count(), cfg.samples, cfg.occlusion_prob, seed);
    presence
        .into_par_iter()
        .enumerate()
        .map(|(i, z)| {
            let xb = perturbed_image(x, seg, &z, filler)?;
            let score = oracle
                .score(&xb, cfg.target_class)
                .map_err(|e| e.context(format!("LIME sample {i}")))?;
            let (distance, weight) = kernel_weight(x, &xb, cfg.kernel_width);
            Ok(LimeSample { presence: z, score, distance, weight })
        })
        .collect()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Result of [`fit_weighted_lasso`].
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

/// Minimizes `Σ wᵢ (yᵢ − a₀ − zᵢ·a)² + λ‖a‖₁` by cyclic coordinate descent
/// with soft-thresholding; the intercept is unpenalized and updated first in
/// each cycle.
pub fn fit_weighted_lasso(
    presence: &[Vec<bool>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
    cycles: usize,
) -> Result<LassoFit> {
    let n = presence.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(AttribError::Shape("LASSO inputs disagree in length".into()));
    }
    let s = presence[0].len();
    if presence.iter().any(|z| z.len() != s) {
        return Err(AttribError::Shape("presence vectors differ in length".into()));
    }
    if presence.iter().all(|z| *z == presence[0]) {
        return Err(AttribError::Degenerate("all samples share one presence pattern; nothing to fit".into()));
    }
    let columns: Vec<Vec<usize>> = (0..s).map(|k| (0..n).filter(|&i| presence[i][k]).collect()).collect();
    let denom: Vec<f64> = columns.iter().map(|col| col.iter().map(|&i| w[i]).sum()).collect();
    let wsum: f64 = w.iter().sum();
    let mut a = vec![0.0; s];
    let mut a0 = 0.0;
    let mut r: Vec<f64> = y.to_vec();
    let objective = |r: &[f64], a: &[f64]| {
        r.iter().zip(w).map(|(ri, wi)| wi * ri * ri).sum::<f64>() + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut trace = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let shift = r.iter().zip(w).map(|(ri, wi)| wi * ri).sum::<f64>() / wsum;
        a0 += shift;
        r.iter_mut().for_each(|ri| *ri -= shift);
        for k in 0..s {
            if denom[k] == 0.0 {
                continue;
            }
            let rho: f64 = columns[k].iter().map(|&i| w[i] * r[i]).sum::<f64>() + a[k] * denom[k];
            let updated = soft_threshold(rho, lambda / 2.0) / denom[k];
            let delta = updated - a[k];
            if delta != 0.0 {
                for &i in &columns[k] {
                    r[i] -= delta;
                }
                a[k] = updated;
            }
        }
        trace.push(objective(&r, &a));
    }
    Ok(LassoFit { intercept: a0, coefficients: a, objective_trace: trace })
}

/// LIME with the filler from `cfg`.
pub fn lime_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &LimeConfig) -> Result<LimeOutput> {
    let filler = runtime_filler(&cfg.filler)?;
    lime_attribute_with(x, oracle, filler.as_ref(), cfg)
}

pub fn lime_attribute_with(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &LimeConfig,
) -> Result<LimeOutput> {
    check_target(oracle, x, cfg.target_class)?;
    cfg.validate()?;
    let seg = slic(x, cfg.segments, cfg.compactness, cfg.slic_iterations)?;
    if seg.count() < 2 {
        return Err(AttribError::Degenerate(format!("segmentation produced {} superpixel", seg.count())));
    }
    let samples = lime_sample_batch(x, &seg, oracle, filler, cfg, cfg.seed)?;
    let presence: Vec<Vec<bool>> = samples.iter().map(|s| s.presence.clone()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let fit = fit_weighted_lasso(&presence, &y, &w, cfg.lasso_lambda, cfg.fit_steps)?;
    let plane = seg.paint(&fit.coefficients)?;
    let provenance = Provenance::new(
        "lime",
        serde_json::json!({
            "segments_requested": cfg.segments,
            "segments": seg.count(),
            "samples": cfg.samples,
            "kernel_width": cfg.kernel_width,
            "lasso_lambda": cfg.lasso_lambda,
            "fit_steps": cfg.fit_steps,
            "occlusion_prob": cfg.occlusion_prob,
            "compactness": cfg.compactness,
            "seed": cfg.seed,
            "filler": filler.describe(),
            "target_class": cfg.target_class,
        }),
    );
    Ok(LimeOutput {
        map: AttributionMap::new(plane, provenance)?,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        segmentation: seg,
        samples,
        objective_trace: fit.objective_trace,
    })
}

impl LimeOutput {
    /// Writes `index,presence,score,weight` per sample, presence as a 0/1 string.
    pub fn write_samples_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["index", "presence", "score", "weight"]).map_err(|e| csv_error(path, e))?;
        for (i, s) in self.samples.iter().enumerate() {
            let bits: String = s.presence.iter().map(|p| if *p { '1' } else { '0' }).collect();
            w.write_record([i.to_string(), bits, s.score.to_string(), s.weight.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| AttribError::io(path, e))
    }

    /// Renders the first `limit` samples as PNGs into `dir`.
    pub fn write_sample_images(&self, x: &Image, filler: &dyn Filler, dir: impl AsRef<Path>, limit: usize) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| AttribError::io(dir, e))?;
        for (i, s) in self.samples.iter().take(limit).enumerate() {
            let xb = perturbed_image(x, &self.segmentation, &s.presence, filler)?;
            write_image(&xb, dir.join(format!("sample_{i:04}.png")))?;
        }
        Ok(())
    }
}
