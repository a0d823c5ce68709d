use std::path::PathBuf;

use anyhow::Result;
use attrib_core::attrib::{
    fido_ca_attribute, lime_attribute, mp2_attribute, mp_attribute, mp::write_trace_csv, sp_attribute, MethodConfig,
};
use attrib_core::fillers::FillStrategy;
use attrib_core::imgcore::{read_image, write_heatmap};
use attrib_core::model::argmax;
use attrib_core::{AttribError, AttributionMap, ClassifierOracle, Image};
use clap::Args;
use serde_json::json;

use crate::config::{create_out_dir, resolve_method, write_json, ConfigFile, FillerArgs, MethodFlags};
use crate::{oracle, usage};

#[derive(Args)]
pub struct AttributeArgs {
    /// sp | lime | mp | mp2 | fido
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    filler: FillerArgs,
    /// Model file (.tcnn), region-mean:x0,y0,x1,y1 or score-server:<command>.
    #[arg(long)]
    model: Option<String>,
    /// Class count for score-server models.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Target class; defaults to the model's top prediction.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with run keys and method parameters; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write per-position (SP) or per-sample (LIME) CSV dumps.
    #[arg(long)]
    dump: bool,
    /// With --dump, render this many LIME samples as PNGs.
    #[arg(long, default_value_t = 0)]
    dump_images: usize,
    #[command(flatten)]
    params: MethodFlags,
}

pub fn run(args: AttributeArgs) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let model = args.model.clone().or(file.string("model")?).ok_or_else(|| usage("missing --model"))?;
    let num_classes = args.num_classes.or(file.uint("num_classes")?.map(|n| n as usize));
    let image_path = args.image.clone().or(file.path("image")?).ok_or_else(|| usage("missing --image"))?;
    let out = args.out.clone().or(file.path("out")?).ok_or_else(|| usage("missing --out"))?;
    let mut cfg = resolve_method(args.method.as_deref(), &file, &args.params, &args.filler, args.seed)?;

    let oracle = oracle::load(&model, num_classes)?;
    let x = read_image(&image_path)?;
    let class = match args.class.or(file.uint("class")?.map(|c| c as usize)) {
        Some(c) => c,
        None => argmax(&oracle.score_all(&x)?),
    };
    cfg.set_target_class(class);
    log::info!("{} on {} (class {class})", cfg.label(), image_path.display());

    create_out_dir(&out)?;
    let resolved = json!({
        "command": "attribute",
        "model": model,
        "num_classes": num_classes,
        "image": image_path,
        "class": class,
        "out": out,
        "config": cfg,
    });
    write_json(&out.join("resolved_config.json"), &resolved)?;

    let map = execute(&cfg, &x, oracle.as_ref(), &args, &out)
        .map_err(|e| e.context(format!("method {}", cfg.label())))?;
    write_heatmap(&map, out.join("heatmap.png"), out.join("heatmap.hmap"))?;
    println!("{}", out.join("heatmap.hmap").display());
    Ok(())
}

fn execute(
    cfg: &MethodConfig,
    x: &Image,
    oracle: &dyn ClassifierOracle,
    args: &AttributeArgs,
    out: &std::path::Path,
) -> Result<AttributionMap, AttribError> {
    Ok(match cfg {
        MethodConfig::Sp(c) => {
            let o = sp_attribute(x, oracle, c)?;
            if args.dump {
                o.write_positions_csv(out.join("positions.csv"))?;
            }
            o.map
        }
        MethodConfig::Lime(c) => {
            let o = lime_attribute(x, oracle, c)?;
            if args.dump {
                o.write_samples_csv(out.join("samples.csv"))?;
                if args.dump_images > 0 {
                    let filler: &FillStrategy = &c.filler;
                    o.write_sample_images(x, filler, out.join("samples"), args.dump_images)?;
                }
            }
            o.map
        }
        MethodConfig::Mp(c) => {
            let o = mp_attribute(x, oracle, c)?;
            write_trace_csv(&o.trace, out.join("trace.csv"))?;
            o.map
        }
        MethodConfig::Mp2(c) => {
            let o = mp2_attribute(x, oracle, c)?;
            o.write_trace_csv(out.join("trace.csv"))?;
            o.map
        }
        MethodConfig::Fido(c) => {
            let o = fido_ca_attribute(x, oracle, c)?;
            write_trace_csv(&o.trace, out.join("trace.csv"))?;
            o.map
        }
    })
}
