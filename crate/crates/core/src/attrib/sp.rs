//! Sliding-patch occlusion: hide a square patch at strided positions and
//! record how much the target probability drops.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_target, runtime_filler};
use crate::error::{AttribError, Result};
use crate::fillers::{FillStrategy, Filler};
use crate::imgcore::{bilinear_resize, AttributionMap, BoundingBox, Image, PerturbMask, Plane, Provenance, CHANNELS};
use crate::model::ClassifierOracle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpConfig {
    pub patch: usize,
    pub stride: usize,
    pub filler: FillStrategy,
    pub target_class: usize,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig { patch: 29, stride: 3, filler: FillStrategy::gray(), target_class: 0 }
    }
}

impl SpConfig {
    /// Number of patch positions along an axis of length `len`.
    pub fn positions(&self, len: usize) -> Result<usize> {
        if self.patch == 0 || self.stride == 0 {
            return Err(AttribError::Parameter("patch and stride must be >= 1".into()));
        }
        if self.patch > len {
            return Err(AttribError::Parameter(format!("patch {} larger than image side {len}", self.patch)));
        }
        Ok((len - self.patch) / self.stride + 1)
    }

    /// Pixel box of the patch at coarse cell `(row, col)`; its top-left
    /// corner is `(row·stride, col·stride)`.
    pub fn patch_box(&self, row: usize, col: usize) -> BoundingBox {
        let (y, x) = (row * self.stride, col * self.stride);
        BoundingBox { x_min: x, y_min: y, x_max: x + self.patch - 1, y_max: y + self.patch - 1 }
    }
}

#[derive(Clone, Debug)]
pub struct SpOutput {
    /// Full-resolution heatmap.
    pub map: AttributionMap,
    /// `s(x) − s(x̄)` per patch position.
    pub coarse: Plane,
    /// `s(x̄)` per patch position.
    pub probabilities: Plane,
    pub base_score: f64,
}

impl SpOutput {
    /// Writes `row,col,probability` for every patch position.
    pub fn write_positions_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["row", "col", "probability"]).map_err(|e| csv_error(path, e))?;
        for r in 0..self.probabilities.height() {
            for c in 0..self.probabilities.width() {
                w.write_record([r.to_string(), c.to_string(), format!("{}", self.probabilities.get(r, c))])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush().map_err(|e| AttribError::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> AttribError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AttribError::io(path, io),
        other => AttribError::format(path, format!("{other:?}")),
    }
}

/// Scores `x` with the patch at every listed coarse position replaced by
/// filler content. A shared fill is reused when the filler ignores the mask.
fn score_positions(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &SpConfig,
    positions: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let (h, w) = (x.height(), x.width());
    let shared = if filler.depends_on_mask() { None } else { Some(filler.fill(x, &PerturbMask::ones(h, w))?) };
    positions
        .par_iter()
        .map_init(
            || x.clone(),
            |buf, &(r, c)| {
                let bbox = cfg.patch_box(r, c);
                let owned;
                let f = match &shared {
                    Some(f) => f,
                    None => {
                        owned = filler.fill(x, &PerturbMask::from_box(h, w, &bbox))?;
                        &owned
                    }
                };
                let span = |row: usize| (row * w + bbox.x_min) * CHANNELS..(row * w + bbox.x_max + 1) * CHANNELS;
                for row in bbox.y_min..=bbox.y_max {
                    buf.data_mut()[span(row)].copy_from_slice(&f.data()[span(row)]);
                }
                let s = oracle.score(buf, cfg.target_class);
                for row in bbox.y_min..=bbox.y_max {
                    buf.data_mut()[span(row)].copy_from_slice(&x.data()[span(row)]);
                }
                s.map_err(|e| e.context(format!("patch at row {r}, col {c}")))
            },
        )
        .collect()
}

/// Sliding-patch attribution with the filler from `cfg`.
pub fn sp_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &SpConfig) -> Result<SpOutput> {
    let filler = runtime_filler(&cfg.filler)?;
    sp_attribute_with(x, oracle, filler.as_ref(), cfg)
}

/// Sliding-patch attribution with an explicit filler.
pub fn sp_attribute_with(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &SpConfig,
) -> Result<SpOutput> {
    check_target(oracle, x, cfg.target_class)?;
    let (nr, nc) = (cfg.positions(x.height())?, cfg.positions(x.width())?);
    let base_score = oracle.score(x, cfg.target_class)?;
    let positions: Vec<(usize, usize)> = (0..nr).flat_map(|r| (0..nc).map(move |c| (r, c))).collect();
    let probs = score_positions(x, oracle, filler, cfg, &positions)?;
    let probabilities = Plane::new(nr, nc, probs)?;
    let coarse = Plane::new(nr, nc, probabilities.data().iter().map(|p| base_score - p).collect())?;
    let full = bilinear_resize(&coarse, x.height(), x.width())?;
    let provenance = Provenance::new(
        "sp",
        serde_json::json!({
            "patch": cfg.patch,
            "stride": cfg.stride,
            "filler": filler.describe(),
            "target_class": cfg.target_class,
        }),
    );
    Ok(SpOutput { map: AttributionMap::new(full, provenance)?, coarse, probabilities, base_score })
}

/// `(col, s(x̄))` for every patch position along one coarse row.
pub fn sp_sample_trace(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    cfg: &SpConfig,
    row: usize,
) -> Result<Vec<(usize, f64)>> {
    check_target(oracle, x, cfg.target_class)?;
    let (nr, nc) = (cfg.positions(x.height())?, cfg.positions(x.width())?);
    if row >= nr {
        return Err(AttribError::Parameter(format!("trace row {row} out of range ({nr} rows)")));
    }
    let filler = runtime_filler(&cfg.filler)?;
    let positions: Vec<(usize, usize)> = (0..nc).map(|c| (row, c)).collect();
    let probs = score_positions(x, oracle, filler.as_ref(), cfg, &positions)?;
    Ok((0..nc).zip(probs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::composite;
    use crate::model::{ConstantOracle, RegionMeanOracle};

    #[test]
    fn geometry_matches_floor_rule() {
        let cfg = SpConfig::default();
        assert_eq!(cfg.positions(224).unwrap(), 66);
        assert_eq!(SpConfig { patch: 8, stride: 4, ..cfg.clone() }.positions(32).unwrap(), 7);
        assert!(SpConfig { patch: 33, ..cfg.clone() }.positions(32).is_err());
        assert!(SpConfig { stride: 0, ..cfg }.positions(32).is_err());
    }

    #[test]
    fn constant_oracle_gives_zero_map() {
        let x = Image::from_fn(16, 16, |r, c| [r as f64 / 15.0, c as f64 / 15.0, 0.5]);
        let cfg = SpConfig { patch: 5, stride: 2, ..SpConfig::default() };
        let out = sp_attribute(&x, &ConstantOracle::binary(0.7), &cfg).unwrap();
        assert!(out.map.plane().data().iter().all(|v| *v == 0.0));
        let trace = sp_sample_trace(&x, &ConstantOracle::binary(0.7), &cfg, 3).unwrap();
        assert_eq!(trace.len(), 6);
        assert!(trace.iter().all(|(_, p)| *p == 0.7));
        assert!(sp_sample_trace(&x, &ConstantOracle::binary(0.7), &cfg, 6).is_err());
    }

    #[test]
    fn matches_explicit_loop() {
        let x = Image::from_fn(32, 32, |r, c| {
            let inside = (10..16).contains(&r) && (12..18).contains(&c);
            if inside { [0.95, 0.9, 1.0] } else { [0.1 + 0.01 * (c % 5) as f64, 0.2, 0.15] }
        });
        let oracle = RegionMeanOracle::new(BoundingBox::new(12, 10, 17, 15).unwrap());
        let cfg = SpConfig { patch: 8, stride: 4, ..SpConfig::default() };
        let out = sp_attribute(&x, &oracle, &cfg).unwrap();
        let base = oracle.score(&x, 0).unwrap();
        let f = Image::filled(32, 32, crate::fillers::IMAGENET_MEAN);
        for r in 0..7 {
            for c in 0..7 {
                let m = PerturbMask::from_box(32, 32, &cfg.patch_box(r, c));
                let xb = composite(&x, &m, &f).unwrap();
                let expect = base - oracle.score(&xb, 0).unwrap();
                assert!((out.coarse.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inpaint_filler_uses_each_mask() {
        let x = Image::from_fn(12, 12, |r, c| [(r * c) as f64 / 121.0, 0.3, 0.6]);
        let oracle = RegionMeanOracle::new(BoundingBox::new(2, 2, 9, 9).unwrap());
        let cfg = SpConfig { patch: 4, stride: 4, filler: FillStrategy::inpaint(), target_class: 0 };
        let out = sp_attribute(&x, &oracle, &cfg).unwrap();
        let gray = sp_attribute(&x, &oracle, &SpConfig { filler: FillStrategy::gray(), ..cfg }).unwrap();
        assert_eq!(out.coarse.len(), 9);
        assert_ne!(out.coarse, gray.coarse);
    }

    #[test]
    fn csv_dump_lists_every_position() {
        let dir = tempfile::tempdir().unwrap();
        let x = Image::filled(10, 10, [0.5; 3]);
        let cfg = SpConfig { patch: 4, stride: 3, ..SpConfig::default() };
        let out = sp_attribute(&x, &ConstantOracle::binary(0.25), &cfg).unwrap();
        let path = dir.path().join("pos.csv");
        out.write_positions_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 1 + 9);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,0.25");
    }
}
