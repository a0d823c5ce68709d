use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use attrib_core::attrib::MethodConfig;
use attrib_core::eval::{
    alpha_grid, compare_fillers, deletion_metric, load_eval_dataset, localize, saliency_metric, select_alpha,
    EvalItem, FillerCase, LocalizationCase, DELETION_ROWS_PER_STEP,
};
use attrib_core::fillers::{noise_image, FillStrategy, Filler};
use attrib_core::imgcore::{read_hmap, write_hmap};
use attrib_core::{AttributionMap, ClassifierOracle, Plane};
use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{
    create_out_dir, parse_filler, resolve_method, tune_filler, write_json, ConfigFile, FillerArgs,
    MethodFlags,
};
use crate::{oracle, usage};

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(subcommand)]
    metric: Metric,
}

#[derive(Subcommand)]
enum Metric {
    /// Box localization error at threshold alpha.
    Localization(MapArgs),
    /// Deletion-curve AUC (lower is better).
    Deletion(MapArgs),
    /// Saliency metric of the tightest crop (lower is better).
    Saliency(MapArgs),
    /// Classifier accuracy and MS-SSIM after filling the object masks.
    CompareFillers(FillerCompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    /// Uniform noise maps.
    Random,
    /// A centered Gaussian blob.
    Center,
}

#[derive(Args)]
struct Common {
    /// Annotation file; images are resolved relative to it.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model file (.tcnn), region-mean:x0,y0,x1,y1 or score-server:<command>.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Only use the first N images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    /// Compute maps with this method.
    #[arg(long, conflicts_with_all = ["heatmaps", "baseline"])]
    method: Option<String>,
    /// Read `<stem>.hmap` maps from this directory.
    #[arg(long, conflicts_with = "baseline")]
    heatmaps: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Also write the computed maps to `<out>/maps`.
    #[arg(long)]
    save_maps: bool,
    /// Box threshold as a fraction of the map maximum.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pick alpha by grid search on a held-out annotation file first.
    #[arg(long, requires = "heldout", conflicts_with = "alpha")]
    select_alpha: bool,
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Pixels removed per deletion step; defaults to 8 image rows.
    #[arg(long)]
    step_pixels: Option<usize>,
    #[command(flatten)]
    filler: FillerArgs,
    #[command(flatten)]
    params: MethodFlags,
}

#[derive(Args)]
struct FillerCompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated filler names.
    #[arg(long, value_delimiter = ',', default_value = "gray,noise,blur,inpaint")]
    fillers: Vec<String>,
    #[command(flatten)]
    filler: FillerArgs,
}

/// Where heatmaps come from.
enum MapSource {
    Method(MethodConfig),
    Dir(PathBuf),
    Baseline(Baseline, u64),
}

impl MapSource {
    fn label(&self) -> String {
        match self {
            MapSource::Method(cfg) => cfg.label(),
            MapSource::Dir(_) => "heatmaps".into(),
            MapSource::Baseline(Baseline::Random, _) => "random".into(),
            MapSource::Baseline(Baseline::Center, _) => "center".into(),
        }
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            MapSource::Method(cfg) => json!({"method": cfg}),
            MapSource::Dir(d) => json!({"heatmaps": d}),
            MapSource::Baseline(b, seed) => json!({"baseline": format!("{b:?}").to_lowercase(), "seed": seed}),
        }
    }

    fn maps(&self, items: &[EvalItem], oracle: Option<&dyn ClassifierOracle>) -> Result<Vec<AttributionMap>> {
        match self {
            MapSource::Method(cfg) => {
                let oracle = oracle.ok_or_else(|| usage("computing maps needs --model"))?;
                items
                    .par_iter()
                    .map(|it| {
                        let mut c = cfg.clone();
                        c.set_target_class(it.class);
                        c.run(&it.image, oracle).map_err(|e| e.context(it.file.clone()))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(Into::into)
            }
            MapSource::Dir(dir) => items
                .iter()
                .map(|it| {
                    let path = dir.join(format!("{}.hmap", stem(&it.file)));
                    let map = read_hmap(&path)?;
                    if (map.height(), map.width()) != (it.image.height(), it.image.width()) {
                        return Err(usage(format!("{}: heatmap size differs from the image", path.display())));
                    }
                    Ok(map)
                })
                .collect(),
            MapSource::Baseline(kind, seed) => items
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    let (h, w) = (it.image.height(), it.image.width());
                    let plane = match kind {
                        Baseline::Random => noise_image(h, w, seed.wrapping_add(i as u64)).channel(0),
                        Baseline::Center => {
                            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
                            let s = h.max(w) as f64 / 4.0;
                            Plane::from_fn(h, w, |r, c| {
                                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                                (-(dy * dy + dx * dx) / (2.0 * s * s)).exp()
                            })
                        }
                    };
                    Ok(AttributionMap::from_plane(plane)?)
                })
                .collect(),
        }
    }
}

fn stem(file: &str) -> String {
    Path::new(file).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| file.to_string())
}

struct Loaded {
    items: Vec<EvalItem>,
    oracle: Option<Box<dyn ClassifierOracle>>,
    out: PathBuf,
    resolved: serde_json::Map<String, serde_json::Value>,
}

fn load_common(common: &Common, file: &ConfigFile, with_masks: bool, name: &str) -> Result<Loaded> {
    let dataset = common.dataset.clone().or(file.path("dataset")?).ok_or_else(|| usage("missing --dataset"))?;
    let out = common.out.clone().or(file.path("out")?).ok_or_else(|| usage("missing --out"))?;
    let model = common.model.clone().or(file.string("model")?);
    let num_classes = common.num_classes.or(file.uint("num_classes")?.map(|n| n as usize));
    let mut items = load_eval_dataset(&dataset, with_masks).map_err(|e| match e.root() {
        attrib_core::AttribError::InvalidData(_) => usage(e.to_string()),
        _ => e.into(),
    })?;
    if let Some(n) = common.limit {
        if n == 0 {
            return Err(usage("--limit must be at least 1"));
        }
        items.truncate(n);
    }
    let oracle = model.as_deref().map(|m| oracle::load(m, num_classes)).transpose()?;
    create_out_dir(&out)?;
    let mut resolved = serde_json::Map::new();
    resolved.insert("command".into(), json!(format!("evaluate {name}")));
    resolved.insert("dataset".into(), json!(dataset));
    resolved.insert("model".into(), json!(model));
    resolved.insert("num_classes".into(), json!(num_classes));
    resolved.insert("limit".into(), json!(common.limit));
    resolved.insert("images".into(), json!(items.len()));
    resolved.insert("out".into(), json!(out));
    Ok(Loaded { items, oracle, out, resolved })
}

fn map_source(args: &MapArgs, file: &ConfigFile) -> Result<MapSource> {
    let seed = args.common.seed.or(file.uint("seed")?);
    if let Some(dir) = &args.heatmaps {
        return Ok(MapSource::Dir(dir.clone()));
    }
    if let Some(b) = args.baseline {
        return Ok(MapSource::Baseline(b, seed.unwrap_or(0)));
    }
    if args.method.is_none() && file.string("method")?.is_none() {
        return Err(usage("choose a map source: --method, --heatmaps or --baseline"));
    }
    Ok(MapSource::Method(resolve_method(args.method.as_deref(), file, &args.params, &args.filler, seed)?))
}

fn write_summary(path: &Path, label: &str, rows: &[(&str, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["method", "metric", "value"])?;
    for (metric, value) in rows {
        w.write_record([label, metric, &value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    match args.metric {
        Metric::Localization(a) => map_metric(a, "localization"),
        Metric::Deletion(a) => map_metric(a, "deletion"),
        Metric::Saliency(a) => map_metric(a, "saliency"),
        Metric::CompareFillers(a) => fillers(a),
    }
}

fn map_metric(args: MapArgs, name: &str) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let source = map_source(&args, &file)?;
    let Loaded { items, oracle, out, mut resolved } = load_common(&args.common, &file, false, name)?;
    let oracle = oracle.as_deref();
    let label = source.label();
    resolved.insert("source".into(), source.describe());

    let alpha = match (args.alpha, args.select_alpha) {
        (Some(a), _) => {
            if !(0.0..1.0).contains(&a) {
                return Err(usage(format!("--alpha must lie in [0, 1), got {a}")));
            }
            a
        }
        (None, true) => {
            let heldout_path = args.heldout.clone().expect("clap enforces --heldout");
            let mut heldout = load_eval_dataset(&heldout_path, false)?;
            if let Some(n) = args.common.limit {
                heldout.truncate(n);
            }
            let maps = source.maps(&heldout, oracle)?;
            let cases: Vec<LocalizationCase> = heldout
                .iter()
                .zip(maps)
                .map(|(it, m)| LocalizationCase { map: m.into_plane(), boxes: it.boxes.clone() })
                .collect();
            let (a, err) = select_alpha(&cases, &alpha_grid())?;
            log::info!("selected alpha {a} (held-out error {err})");
            resolved.insert("heldout".into(), json!(heldout_path));
            resolved.insert("heldout_error".into(), json!(err));
            a
        }
        (None, false) => 0.5,
    };
    resolved.insert("alpha".into(), json!(alpha));

    let maps = source.maps(&items, oracle)?;
    if args.save_maps {
        let dir = out.join("maps");
        create_out_dir(&dir)?;
        for (it, m) in items.iter().zip(&maps) {
            write_hmap(m, dir.join(format!("{}.hmap", stem(&it.file))))?;
        }
    }

    let table = out.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&table).with_context(|| format!("writing {}", table.display()))?;
    let summary: Vec<(&str, f64)> = match name {
        "localization" => {
            w.write_record(["file", "class", "x_min", "y_min", "x_max", "y_max", "iou", "hit"])?;
            let mut hits = 0usize;
            for (it, m) in items.iter().zip(&maps) {
                let r = localize(m.plane(), &it.boxes, alpha)?;
                hits += r.hit as usize;
                let b = r.derived_box;
                w.write_record([
                    it.file.clone(),
                    it.class.to_string(),
                    b.x_min.to_string(),
                    b.y_min.to_string(),
                    b.x_max.to_string(),
                    b.y_max.to_string(),
                    r.iou.to_string(),
                    (r.hit as u8).to_string(),
                ])?;
            }
            vec![("localization_error", 1.0 - hits as f64 / items.len() as f64), ("alpha", alpha)]
        }
        "deletion" => {
            let oracle = oracle.ok_or_else(|| usage("deletion needs --model"))?;
            let step = args.step_pixels.unwrap_or(items[0].image.width() * DELETION_ROWS_PER_STEP);
            resolved.insert("step_pixels".into(), json!(step));
            w.write_record(["file", "class", "auc"])?;
            let mut aucs = Vec::with_capacity(items.len());
            for (it, m) in items.iter().zip(&maps) {
                let curve = deletion_metric(&it.image, m.plane(), oracle, it.class, step)?;
                w.write_record([it.file.clone(), it.class.to_string(), curve.auc.to_string()])?;
                aucs.push(curve.auc);
            }
            vec![("deletion_auc", mean(&aucs))]
        }
        _ => {
            let oracle = oracle.ok_or_else(|| usage("saliency needs --model"))?;
            w.write_record(["file", "class", "value", "area_fraction", "crop_score"])?;
            let mut values = Vec::with_capacity(items.len());
            for (it, m) in items.iter().zip(&maps) {
                let s = saliency_metric(&it.image, m.plane(), oracle, it.class, alpha)?;
                w.write_record([
                    it.file.clone(),
                    it.class.to_string(),
                    s.value.to_string(),
                    s.area_fraction.to_string(),
                    s.crop_score.to_string(),
                ])?;
                values.push(s.value);
            }
            vec![("saliency", mean(&values)), ("alpha", alpha)]
        }
    };
    w.flush()?;
    write_summary(&out.join("summary.csv"), &label, &summary)?;
    write_json(&out.join("resolved_config.json"), &resolved)?;
    for (metric, value) in &summary {
        println!("{label} {metric} {value}");
    }
    Ok(())
}

fn fillers(args: FillerCompareArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let seed = args.common.seed.or(file.uint("seed")?).unwrap_or(0);
    if args.filler.filler.is_some() {
        return Err(usage("compare-fillers takes --fillers, not --filler"));
    }
    let strategies: Vec<(String, FillStrategy)> = args
        .fillers
        .iter()
        .map(|name| {
            let base = parse_filler(name, seed)?;
            // Tuning flags apply only to the fillers they fit.
            let tuned = tune_filler(base.clone(), &args.filler).unwrap_or(base);
            Ok((name.clone(), tuned))
        })
        .collect::<Result<_>>()?;
    let Loaded { items, oracle, out, mut resolved } = load_common(&args.common, &file, true, "compare-fillers")?;
    let oracle = oracle.ok_or_else(|| usage("compare-fillers needs --model"))?;
    let cases: Vec<FillerCase> = items
        .into_iter()
        .map(|it| FillerCase { image: it.image, label: it.class, mask: it.mask.expect("masks were requested") })
        .collect();
    let named: Vec<(&str, &dyn Filler)> = strategies.iter().map(|(n, f)| (n.as_str(), f as &dyn Filler)).collect();
    let rows = compare_fillers(&cases, oracle.as_ref(), &named)?;
    resolved.insert("fillers".into(), json!(strategies.iter().map(|(_, f)| f).collect::<Vec<_>>()));

    let table = out.join("fillers.csv");
    let mut w = csv::Writer::from_path(&table).with_context(|| format!("writing {}", table.display()))?;
    w.write_record(["filler", "accuracy", "ms_ssim"])?;
    for r in &rows {
        w.write_record([r.filler.clone(), r.accuracy.to_string(), r.ms_ssim.to_string()])?;
        println!("{} accuracy {} ms_ssim {}", r.filler, r.accuracy, r.ms_ssim);
    }
    w.flush()?;
    write_json(&out.join("resolved_config.json"), &resolved)?;
    Ok(())
}
