//! Evaluation of attribution maps: object localization, the deletion and
//! saliency metrics, filler comparison, and diagnostic analyses.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrib::{sp_attribute_with, SpConfig};
use crate::error::{AttribError, Result};
use crate::fillers::Filler;
use crate::imgcore::{composite, gaussian_blur, read_image, read_mask_png, resize_image, BoundingBox, Image, PerturbMask, Plane};
use crate::model::{argmax, ClassifierOracle};
use crate::sensitivity::ms_ssim;

/// IoU needed for a localization hit.
pub const HIT_IOU: f64 = 0.5;
/// Lower clamp on the area fraction in the saliency metric.
pub const SALIENCY_MIN_AREA: f64 = 0.05;
/// Floor on the crop score inside the saliency logarithm.
pub const SALIENCY_MIN_SCORE: f64 = 1e-12;
/// Rows removed per deletion step, in multiples of the image width.
pub const DELETION_ROWS_PER_STEP: usize = 8;
/// Patch size for the outside-box analysis at 224 px.
pub const OUTSIDE_BOX_PATCH: usize = 53;

/// `α ∈ {0, 0.05, …, 0.95}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

/// Tightest box around every pixel with `A ≥ α·max(A)`; the full image when
/// the map has no positive value.
pub fn derive_box(map: &Plane, alpha: f64) -> Result<BoundingBox> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(AttribError::Parameter(format!("alpha must be in [0, 1), got {alpha}")));
    }
    let full = BoundingBox::full(map.height(), map.width());
    let peak = map.max();
    if !(peak > 0.0) {
        return Ok(full);
    }
    let t = alpha * peak;
    let mut bbox: Option<BoundingBox> = None;
    for r in 0..map.height() {
        for c in 0..map.width() {
            if map.get(r, c) >= t {
                bbox = Some(match bbox {
                    None => BoundingBox { x_min: c, y_min: r, x_max: c, y_max: r },
                    Some(b) => BoundingBox {
                        x_min: b.x_min.min(c),
                        y_min: b.y_min.min(r),
                        x_max: b.x_max.max(c),
                        y_max: b.y_max.max(r),
                    },
                });
            }
        }
    }
    Ok(bbox.unwrap_or(full))
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub alpha: f64,
    pub derived_box: BoundingBox,
    /// Best IoU over the ground-truth boxes.
    pub iou: f64,
    pub hit: bool,
}

/// Localizes one map against its ground-truth boxes.
pub fn localize(map: &Plane, boxes: &[BoundingBox], alpha: f64) -> Result<LocalizationResult> {
    if boxes.is_empty() {
        return Err(AttribError::InvalidData("image has no ground-truth box".into()));
    }
    let derived_box = derive_box(map, alpha)?;
    let best = boxes.iter().map(|b| iou(&derived_box, b)).fold(0.0, f64::max);
    Ok(LocalizationResult { alpha, derived_box, iou: best, hit: best >= HIT_IOU })
}

/// A heatmap with the ground-truth boxes of its image.
#[derive(Clone, Debug)]
pub struct LocalizationCase {
    pub map: Plane,
    pub boxes: Vec<BoundingBox>,
}

/// Fraction of cases whose best IoU falls below 0.5.
pub fn localization_error(cases: &[LocalizationCase], alpha: f64) -> Result<f64> {
    if cases.is_empty() {
        return Err(AttribError::InvalidData("localization over an empty dataset".into()));
    }
    let hits = cases
        .par_iter()
        .map(|c| localize(&c.map, &c.boxes, alpha).map(|r| usize::from(r.hit)))
        .collect::<Result<Vec<_>>>()?;
    Ok(1.0 - hits.iter().sum::<usize>() as f64 / cases.len() as f64)
}

/// The grid α with the lowest error on held-out cases (ties to the smaller α),
/// and that error.
pub fn select_alpha(heldout: &[LocalizationCase], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(AttribError::Parameter("empty alpha grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], f64::INFINITY);
    for a in sorted {
        let e = localization_error(heldout, a)?;
        if e < best.1 {
            best = (a, e);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub fractions: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub auc: f64,
}

/// Trapezoidal integral of `ys` over `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0).sum()
}

/// Pixel indices by descending attribution; ties in row-major order.
pub fn deletion_order(map: &Plane) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.len()).collect();
    idx.sort_by(|&a, &b| map.data()[b].total_cmp(&map.data()[a]));
    idx
}

/// Blacks out the highest-attribution pixels `step_pixels` at a time and
/// records the target probability after each step, starting from the intact
/// image. The AUC is taken over the removed fraction in `[0, 1]`.
pub fn deletion_metric(
    x: &Image,
    map: &Plane,
    oracle: &dyn ClassifierOracle,
    class: usize,
    step_pixels: usize,
) -> Result<DeletionCurve> {
    if step_pixels == 0 {
        return Err(AttribError::Parameter("deletion step must be >= 1 pixel".into()));
    }
    if map.height() != x.height() || map.width() != x.width() {
        return Err(AttribError::Shape("heatmap and image differ in size".into()));
    }
    oracle.check_class(class)?;
    let order = deletion_order(map);
    let n = order.len();
    let removed: Vec<usize> = (0..=n.div_ceil(step_pixels)).map(|k| (k * step_pixels).min(n)).collect();
    let probabilities = removed
        .par_iter()
        .map(|&k| oracle.score(&x.with_pixels_set(&order[..k], [0.0; 3]), class))
        .collect::<Result<Vec<_>>>()?;
    let fractions: Vec<f64> = removed.iter().map(|&k| k as f64 / n as f64).collect();
    let auc = trapezoid(&fractions, &probabilities);
    Ok(DeletionCurve { fractions, probabilities, auc })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub value: f64,
    pub bbox: BoundingBox,
    pub area_fraction: f64,
    pub crop_score: f64,
}

/// `log(max(a, 0.05)) − log(s(crop))` for the box derived at `alpha`, with
/// the crop upsampled back to the input size.
pub fn saliency_metric(
    x: &Image,
    map: &Plane,
    oracle: &dyn ClassifierOracle,
    class: usize,
    alpha: f64,
) -> Result<SaliencyResult> {
    let bbox = derive_box(map, alpha)?;
    let crop = resize_image(&x.crop(&bbox)?, x.height(), x.width())?;
    let crop_score = oracle.score(&crop, class)?;
    let area_fraction = bbox.area() as f64 / x.pixel_count() as f64;
    Ok(SaliencyResult { value: saliency_value(area_fraction, crop_score), bbox, area_fraction, crop_score })
}

pub fn saliency_value(area_fraction: f64, crop_score: f64) -> f64 {
    area_fraction.max(SALIENCY_MIN_AREA).ln() - crop_score.max(SALIENCY_MIN_SCORE).ln()
}

/// An image with its label and object mask, for filler comparison.
#[derive(Clone, Debug)]
pub struct FillerCase {
    pub image: Image,
    pub label: usize,
    pub mask: PerturbMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillerRow {
    pub filler: String,
    pub accuracy: f64,
    pub ms_ssim: f64,
}

/// Top-1 accuracy and mean MS-SSIM to the original after filling each
/// object mask. The first row, `real`, scores the untouched images.
pub fn compare_fillers(
    cases: &[FillerCase],
    oracle: &dyn ClassifierOracle,
    fillers: &[(&str, &dyn Filler)],
) -> Result<Vec<FillerRow>> {
    if cases.is_empty() {
        return Err(AttribError::InvalidData("filler comparison over an empty dataset".into()));
    }
    let run = |name: &str, filler: Option<&dyn Filler>| -> Result<FillerRow> {
        let per = cases
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let xb = match filler {
                    None => c.image.clone(),
                    Some(f) => composite(&c.image, &c.mask, &f.fill(&c.image, &c.mask)?)?,
                };
                let hit = argmax(&oracle.score_all(&xb)?) == c.label;
                Ok((hit, ms_ssim(&c.image, &xb)?)).map_err(|e: AttribError| e.context(format!("{name}, image {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        Ok(FillerRow {
            filler: name.to_string(),
            accuracy: per.iter().filter(|p| p.0).count() as f64 / n,
            ms_ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
        })
    };
    let mut rows = vec![run("real", None)?];
    for (name, f) in fillers {
        rows.push(run(name, Some(*f))?);
    }
    Ok(rows)
}

/// Mean target probability over fully blurred images; `sigma = 0` leaves the
/// images untouched.
pub fn full_blur_confidence(images: &[(Image, usize)], oracle: &dyn ClassifierOracle, sigma: f64) -> Result<f64> {
    if images.is_empty() {
        return Err(AttribError::InvalidData("no images".into()));
    }
    let scores = images
        .par_iter()
        .map(|(x, y)| {
            if sigma == 0.0 {
                oracle.score(x, *y)
            } else {
                oracle.score(&gaussian_blur(x, sigma)?, *y)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean `|s(x) − s(x̄)|` over sliding-patch positions lying entirely outside
/// `gt`. Defined as 0 (with a warning) when no position qualifies.
pub fn outside_box_drop(
    x: &Image,
    gt: &BoundingBox,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &SpConfig,
) -> Result<f64> {
    let out = sp_attribute_with(x, oracle, filler, cfg)?;
    let mut drops = Vec::new();
    for r in 0..out.coarse.height() {
        for c in 0..out.coarse.width() {
            if cfg.patch_box(r, c).intersection(gt).is_none() {
                drops.push(out.coarse.get(r, c).abs());
            }
        }
    }
    if drops.is_empty() {
        log::warn!("no patch position lies outside the ground-truth box; drop defined as 0");
        return Ok(0.0);
    }
    Ok(drops.iter().sum::<f64>() / drops.len() as f64)
}

/// Top-1 label counts, most frequent first, ties by label.
pub fn label_histogram(samples: &[Image], oracle: &dyn ClassifierOracle) -> Result<Vec<(usize, usize)>> {
    let labels = samples
        .par_iter()
        .map(|x| oracle.score_all(x).map(|p| argmax(&p)))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = std::collections::BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let mut out: Vec<(usize, usize)> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// One annotation line: `<file> <class> <x_min> <y_min> <x_max> <y_max> [more boxes]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub file: String,
    pub class: usize,
    pub boxes: Vec<BoundingBox>,
}

/// Parses an annotation file; blank lines and `#` comments are skipped.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| AttribError::format(path, format!("line {}: {why}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 6 || (fields.len() - 2) % 4 != 0 {
            return Err(bad("expected <file> <class> and groups of four box coordinates"));
        }
        let class = fields[1].parse().map_err(|_| bad("class id is not a non-negative integer"))?;
        let nums = fields[2..]
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("box coordinate is not a non-negative integer"))?;
        let boxes = nums
            .chunks_exact(4)
            .map(|b| BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| bad(&e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(Annotation { file: fields[0].to_string(), class, boxes });
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AttribError::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(annotations: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for a in annotations {
        text.push_str(&format!("{} {}", a.file, a.class));
        for b in &a.boxes {
            text.push_str(&format!(" {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| AttribError::io(path, e))
}

/// Mask file for an image: `img.png` → `img.mask.png`.
pub fn mask_path(image_path: &Path) -> PathBuf {
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image_path.with_file_name(format!("{stem}.mask.png"))
}

#[derive(Clone, Debug)]
pub struct EvalItem {
    pub file: String,
    pub image: Image,
    pub class: usize,
    pub boxes: Vec<BoundingBox>,
    pub mask: Option<PerturbMask>,
}

/// Loads every image listed in an annotation file (paths relative to the
/// file's directory). With `with_masks`, each image's mask must exist.
pub fn load_eval_dataset(annotations: impl AsRef<Path>, with_masks: bool) -> Result<Vec<EvalItem>> {
    let annotations = annotations.as_ref();
    let root = annotations.parent().unwrap_or(Path::new("."));
    let list = read_annotations(annotations)?;
    if list.is_empty() {
        return Err(AttribError::InvalidData(format!("{} lists no images", annotations.display())));
    }
    list.into_par_iter()
        .map(|a| {
            let path = root.join(&a.file);
            let image = read_image(&path)?;
            for b in &a.boxes {
                b.check_within(image.height(), image.width())?;
            }
            let mask = if with_masks {
                let mp = mask_path(&path);
                if !mp.exists() {
                    return Err(AttribError::format(&mp, "missing object mask"));
                }
                let m = read_mask_png(&mp)?;
                if m.height() != image.height() || m.width() != image.width() {
                    return Err(AttribError::format(&mp, "mask size differs from image"));
                }
                Some(m)
            } else {
                None
            };
            Ok(EvalItem { file: a.file, image, class: a.class, boxes: a.boxes, mask })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fillers::FillStrategy;
    use crate::model::{ConstantOracle, RegionMeanOracle};

    fn bx(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identities() {
        assert_eq!(iou(&bx(0, 0, 9, 9), &bx(0, 0, 9, 9)), 1.0);
        assert_eq!(iou(&bx(0, 0, 4, 4), &bx(5, 5, 9, 9)), 0.0);
        assert_eq!(iou(&bx(0, 0, 9, 9), &bx(5, 0, 14, 9)), 1.0 / 3.0);
    }

    #[test]
    fn derive_box_matches_scan() {
        let mut m = Plane::zeros(12, 12);
        m.set(5, 6, 1.0);
        assert_eq!(derive_box(&m, 0.95).unwrap(), bx(6, 5, 6, 5));
        assert_eq!(derive_box(&m, 0.0).unwrap(), BoundingBox::full(12, 12));
        assert_eq!(derive_box(&Plane::filled(4, 4, -1.0), 0.5).unwrap(), BoundingBox::full(4, 4));
        assert!(derive_box(&m, 1.0).is_err());
        // Two blobs of different heights.
        let two = Plane::from_fn(12, 12, |r, c| {
            if (1..3).contains(&r) && (1..4).contains(&c) {
                0.9
            } else if (8..11).contains(&r) && (7..10).contains(&c) {
                0.5
            } else {
                0.0
            }
        });
        for alpha in alpha_grid() {
            let t = alpha * 0.9;
            let sel: Vec<(usize, usize)> =
                (0..144).map(|i| (i / 12, i % 12)).filter(|&(r, c)| two.get(r, c) >= t).collect();
            let want = bx(
                sel.iter().map(|p| p.1).min().unwrap(),
                sel.iter().map(|p| p.0).min().unwrap(),
                sel.iter().map(|p| p.1).max().unwrap(),
                sel.iter().map(|p| p.0).max().unwrap(),
            );
            assert_eq!(derive_box(&two, alpha).unwrap(), want, "alpha {alpha}");
        }
    }

    #[test]
    fn indicator_maps_localize_perfectly() {
        let cases: Vec<LocalizationCase> = (0..5)
            .map(|i| {
                let b = bx(i, i + 1, i + 6, i + 4);
                let map = Plane::from_fn(16, 16, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 });
                LocalizationCase { map, boxes: vec![bx(0, 0, 1, 1), b] }
            })
            .collect();
        assert_eq!(localization_error(&cases, 0.0).unwrap(), 1.0);
        assert_eq!(localization_error(&cases, 0.05).unwrap(), 0.0);
        let (alpha, err) = select_alpha(&cases, &alpha_grid()).unwrap();
        assert_eq!((alpha, err), (0.05, 0.0));
        for a in alpha_grid() {
            assert!(err <= localization_error(&cases, a).unwrap());
        }
        assert!(localization_error(&[], 0.5).is_err());
    }

    #[test]
    fn deletion_curve_matches_hand_trapezoid() {
        let x = Image::from_fn(8, 8, |r, c| [(r * 8 + c) as f64 / 63.0, 0.5, 0.25]);
        let map = Plane::from_fn(8, 8, |r, c| ((r * 5 + c * 3) % 7) as f64);
        let oracle = RegionMeanOracle::new(bx(2, 2, 5, 5));
        let curve = deletion_metric(&x, &map, &oracle, 0, 8).unwrap();
        assert_eq!(curve.fractions.len(), 9);
        // Brute force: sort by (−A, index), remove, rescore.
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| map.data()[b].partial_cmp(&map.data()[a]).unwrap().then(a.cmp(&b)));
        let mut ys = Vec::new();
        for k in 0..=8 {
            let mut img = x.clone();
            for &p in &order[..k * 8] {
                img = img.with_pixels_set(&[p], [0.0; 3]);
            }
            ys.push(oracle.score(&img, 0).unwrap());
        }
        let hand: f64 = (0..8).map(|k| 0.125 * (ys[k] + ys[k + 1]) / 2.0).sum();
        assert!((curve.auc - hand).abs() < 1e-12);
        assert_eq!(curve.probabilities[0], oracle.score(&x, 0).unwrap());
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(curve.auc >= lo && curve.auc <= hi);
        let flat = deletion_metric(&x, &map, &ConstantOracle::binary(0.3), 0, 5).unwrap();
        assert!((flat.auc - 0.3).abs() < 1e-12);
        assert_eq!(*flat.fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn saliency_values() {
        assert_eq!(saliency_value(1.0, 1.0), 0.0);
        assert_eq!(saliency_value(0.01, 1.0), SALIENCY_MIN_AREA.ln());
        assert!(saliency_value(0.3, 0.9) < saliency_value(0.3, 0.5));
        let x = Image::filled(16, 16, [0.8; 3]);
        let full = saliency_metric(&x, &Plane::zeros(16, 16), &ConstantOracle::binary(1.0), 0, 0.5).unwrap();
        assert_eq!(full.value, 0.0);
        // Region-mean oracle on an upsampled crop of a uniform box: mean is that box's intensity.
        let b = bx(4, 4, 11, 11);
        let img = Image::from_fn(16, 16, |r, c| if b.contains(r, c) { [0.6; 3] } else { [0.1; 3] });
        let map = Plane::from_fn(16, 16, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 });
        let res = saliency_metric(&img, &map, &RegionMeanOracle::new(b), 0, 0.5).unwrap();
        assert!((res.crop_score - 0.6).abs() < 1e-12);
        assert!((res.value - ((0.25f64).ln() - 0.6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn filler_comparison_rows() {
        let b = bx(2, 2, 9, 9);
        let cases: Vec<FillerCase> = (0..3)
            .map(|i| FillerCase {
                image: Image::from_fn(12, 12, |r, c| {
                    if b.contains(r, c) { [0.9; 3] } else { [0.1 + 0.05 * ((r + c + i) % 3) as f64; 3] }
                }),
                label: 0,
                mask: PerturbMask::from_box(12, 12, &b),
            })
            .collect();
        let oracle = RegionMeanOracle::new(b);
        let black = FillStrategy::Gray { color: [0.0; 3] };
        let rows = compare_fillers(&cases, &oracle, &[("black", &black)]).unwrap();
        assert_eq!(rows[0].filler, "real");
        assert_eq!(rows[0].accuracy, 1.0);
        assert!((rows[0].ms_ssim - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].accuracy, 0.0);
        assert!(rows[1].ms_ssim < 1.0);
    }

    #[test]
    fn blur_confidence_limits() {
        let imgs = vec![(Image::filled(8, 8, [0.3; 3]), 0), (Image::filled(8, 8, [0.9; 3]), 1)];
        let zeros: Vec<(Image, usize)> = imgs.iter().map(|(x, _)| (x.clone(), 0)).collect();
        assert_eq!(full_blur_confidence(&zeros, &ConstantOracle::binary(0.7), 3.0).unwrap(), 0.7);
        let oracle = RegionMeanOracle::new(bx(0, 0, 7, 7));
        let direct = (oracle.score(&imgs[0].0, 0).unwrap() + oracle.score(&imgs[1].0, 1).unwrap()) / 2.0;
        assert_eq!(full_blur_confidence(&imgs, &oracle, 0.0).unwrap(), direct);
    }

    #[test]
    fn outside_box_drop_cases() {
        let b = bx(4, 4, 11, 11);
        let x = Image::from_fn(16, 16, |r, c| if b.contains(r, c) { [0.9; 3] } else { [0.2; 3] });
        let oracle = RegionMeanOracle::new(b);
        let cfg = SpConfig { patch: 3, stride: 1, ..SpConfig::default() };
        let gray = FillStrategy::gray();
        assert_eq!(outside_box_drop(&x, &b, &oracle, &gray, &cfg).unwrap(), 0.0);
        assert_eq!(outside_box_drop(&x, &BoundingBox::full(16, 16), &oracle, &gray, &cfg).unwrap(), 0.0);
        let small = bx(6, 6, 9, 9);
        assert!(outside_box_drop(&x, &small, &oracle, &gray, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn histogram_ordering() {
        let imgs: Vec<Image> = (0..7).map(|i| Image::filled(4, 4, [if i < 5 { 0.9 } else { 0.1 }; 3])).collect();
        let oracle = RegionMeanOracle::new(bx(0, 0, 3, 3));
        assert_eq!(label_histogram(&imgs, &oracle).unwrap(), vec![(0, 5), (1, 2)]);
        assert_eq!(label_histogram(&imgs, &ConstantOracle::binary(0.2)).unwrap(), vec![(1, 7)]);
    }

    #[test]
    fn annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let list = vec![
            Annotation { file: "a.png".into(), class: 1, boxes: vec![bx(0, 1, 2, 3)] },
            Annotation { file: "b.png".into(), class: 0, boxes: vec![bx(1, 1, 2, 2), bx(3, 3, 4, 4)] },
        ];
        let path = dir.path().join("ann.txt");
        write_annotations(&list, &path).unwrap();
        assert_eq!(read_annotations(&path).unwrap(), list);
        let p = Path::new("x.txt");
        assert!(parse_annotations("a.png 1 0 0 3", p).is_err());
        assert!(parse_annotations("a.png one 0 0 3 3", p).is_err());
        assert!(parse_annotations("a.png 1 5 0 3 3", p).is_err());
        assert_eq!(mask_path(Path::new("d/img.png")), Path::new("d/img.mask.png"));
    }

    #[test]
    fn missing_mask_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        crate::imgcore::write_image(&Image::filled(4, 4, [0.5; 3]), dir.path().join("a.png")).unwrap();
        fs::write(dir.path().join("ann.txt"), "a.png 0 0 0 1 1\n").unwrap();
        assert!(load_eval_dataset(dir.path().join("ann.txt"), false).is_ok());
        let err = load_eval_dataset(dir.path().join("ann.txt"), true).unwrap_err();
        assert!(err.to_string().contains("missing object mask"), "{err}");
    }
}
