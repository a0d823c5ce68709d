use std::path::PathBuf;

use anyhow::{Context, Result};
use attrib_core::eval::load_eval_dataset;
use attrib_core::sensitivity::{
    run_sweep, SimilarityMetric, SweepAxis, SweepSpec, MASK_SIZES, PATCH_SIZES, RANDOM_BATCHES, RANDOM_BATCH_SAMPLES,
};
use attrib_core::Image;
use clap::Args;
use serde_json::{json, Value};

use crate::config::{create_out_dir, resolve_method, write_json, ConfigFile, FillerArgs, MethodFlags};
use crate::{oracle, usage};

#[derive(Args)]
pub struct SensitivityArgs {
    /// patch-sizes | random-seeds | mask-sizes | custom:<config key>
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values; named axes have defaults.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Defaults to the method the axis belongs to.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    filler: FillerArgs,
    #[command(flatten)]
    params: MethodFlags,
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string()))
}

fn axis(name: &str, values: &[String]) -> Result<(SweepAxis, &'static str)> {
    let given: Vec<Value> = values.iter().map(|v| parse_value(v)).collect();
    let as_usize = |defaults: &[usize]| -> Result<Vec<usize>> {
        if given.is_empty() {
            return Ok(defaults.to_vec());
        }
        given
            .iter()
            .map(|v| v.as_u64().map(|n| n as usize).ok_or_else(|| usage(format!("axis value {v} is not an integer"))))
            .collect()
    };
    Ok(match name {
        "patch-sizes" => (SweepAxis::patch_sizes(&as_usize(&PATCH_SIZES)?), "sp"),
        "mask-sizes" => (SweepAxis::mask_sizes(&as_usize(&MASK_SIZES)?), "mp2"),
        "random-seeds" => {
            let defaults: Vec<usize> = (0..RANDOM_BATCHES).collect();
            let seeds: Vec<u64> = as_usize(&defaults)?.into_iter().map(|s| s as u64).collect();
            (SweepAxis::random_seeds(&seeds), "lime")
        }
        _ => match name.strip_prefix("custom:") {
            Some(key) if !key.is_empty() => {
                if given.is_empty() {
                    return Err(usage("custom axes need --values"));
                }
                (SweepAxis::custom(key, given), "")
            }
            _ => {
                return Err(usage(format!(
                    "unknown axis '{name}' (patch-sizes, random-seeds, mask-sizes, custom:<key>)"
                )))
            }
        },
    })
}

pub fn run(args: SensitivityArgs) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let (axis, axis_method) = axis(&args.axis, &args.values)?;
    let method = match (&args.method, axis_method) {
        (Some(m), _) => Some(m.clone()),
        (None, "") => file.string("method")?,
        (None, m) => Some(m.to_string()),
    };
    let method = method.ok_or_else(|| usage("custom axes need --method"))?;
    let mut base = resolve_method(Some(&method), &file, &args.params, &args.filler, args.seed)?;
    if axis.name == "random-seeds" && args.params.samples.is_none() && file.uint("samples")?.is_none() {
        base = base.with_field("samples", RANDOM_BATCH_SAMPLES.into())?;
    }
    let spec = SweepSpec { base, axis };
    spec.configs().map_err(|e| usage(e.to_string()))?;

    let dataset = args.dataset.clone().or(file.path("dataset")?).ok_or_else(|| usage("missing --dataset"))?;
    let model = args.model.clone().or(file.string("model")?).ok_or_else(|| usage("missing --model"))?;
    let num_classes = args.num_classes.or(file.uint("num_classes")?.map(|n| n as usize));
    let out = args.out.clone().or(file.path("out")?).ok_or_else(|| usage("missing --out"))?;
    let mut items = load_eval_dataset(&dataset, false).map_err(|e| match e.root() {
        attrib_core::AttribError::InvalidData(_) => usage(e.to_string()),
        _ => e.into(),
    })?;
    if let Some(n) = args.limit {
        if n == 0 {
            return Err(usage("--limit must be at least 1"));
        }
        items.truncate(n);
    }
    let oracle = oracle::load(&model, num_classes)?;
    create_out_dir(&out)?;
    write_json(
        &out.join("resolved_config.json"),
        &json!({
            "command": "sensitivity",
            "dataset": dataset,
            "model": model,
            "num_classes": num_classes,
            "limit": args.limit,
            "images": items.len(),
            "out": out,
            "sweep": spec,
        }),
    )?;

    let images: Vec<(Image, usize)> = items.into_iter().map(|it| (it.image, it.class)).collect();
    let result = run_sweep(&images, &spec, oracle.as_ref(), None)?;
    result.write_csv(out.join("sensitivity.csv"))?;

    let per_image = out.join("per_image.csv");
    let mut w = csv::Writer::from_path(&per_image).with_context(|| format!("writing {}", per_image.display()))?;
    w.write_record(["image", "ssim", "hog_pearson", "spearman"])?;
    for (i, row) in result.per_image.iter().enumerate() {
        w.write_record([i.to_string(), row[0].to_string(), row[1].to_string(), row[2].to_string()])?;
    }
    w.flush()?;
    for m in SimilarityMetric::ALL {
        let s = result.summary.iter().find(|s| s.metric == m.name());
        if let Some(s) = s {
            println!("{} {} mean {} std {}", result.method, s.metric, s.mean, s.std);
        }
    }
    Ok(())
}
