use std::path::PathBuf;

use anyhow::Result;
use attrib_core::fillers::{harmonic_inpaint, DEFAULT_INPAINT_ITERATIONS, DEFAULT_INPAINT_TOLERANCE};
use attrib_core::imgcore::{read_image, read_mask_png, write_image};
use attrib_core::model::{load_dataset, save_model, train_tiny_cnn, TinyCnn, TrainConfig};
use attrib_core::synth::{shapes_dataset, write_eval_set, write_training_set, DEFAULT_SIDE};
use clap::Args;
use serde_json::json;

use crate::config::{create_out_dir, write_json};
use crate::usage;

#[derive(Args)]
pub struct FixturesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training images.
    #[arg(long, default_value_t = 400)]
    train: usize,
    /// Held-out images used for alpha selection.
    #[arg(long, default_value_t = 100)]
    heldout: usize,
    /// Evaluation images.
    #[arg(long, default_value_t = 200)]
    eval: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = DEFAULT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Skip training the classifier.
    #[arg(long)]
    no_model: bool,
}

pub fn run(args: FixturesArgs) -> Result<()> {
    if args.train == 0 || args.heldout == 0 || args.eval == 0 {
        return Err(usage("--train, --heldout and --eval must be at least 1"));
    }
    create_out_dir(&args.out)?;
    // Disjoint index ranges of one seeded stream.
    let train = shapes_dataset(0, args.train, args.side, args.seed)?;
    let heldout = shapes_dataset(args.train, args.heldout, args.side, args.seed)?;
    let eval = shapes_dataset(args.train + args.heldout, args.eval, args.side, args.seed)?;
    write_training_set(&train, args.out.join("train"))?;
    write_eval_set(&heldout, args.out.join("heldout"))?;
    write_eval_set(&eval, args.out.join("eval"))?;

    let train_cfg = TrainConfig { epochs: args.epochs, seed: args.seed, ..TrainConfig::default() };
    let mut resolved = json!({
        "command": "fixtures",
        "out": args.out,
        "seed": args.seed,
        "train": args.train,
        "heldout": args.heldout,
        "eval": args.eval,
        "side": args.side,
    });
    if !args.no_model {
        let data = load_dataset(args.out.join("train"))?;
        let mut model = TinyCnn::new(args.side, args.side, 2, args.seed)?;
        let report = train_tiny_cnn(&mut model, &data, &train_cfg)?;
        log::info!("trained {} epochs, accuracy {}", report.epochs_run, report.train_accuracy);
        save_model(&model, args.out.join("model.tcnn"))?;
        write_json(&args.out.join("train_report.json"), &report)?;
        resolved["training"] = json!(train_cfg);
        println!("train accuracy {}", report.train_accuracy);
    }
    write_json(&args.out.join("resolved_config.json"), &resolved)?;
    Ok(())
}

/// Also usable as an external inpainter: `attrib inpaint IMAGE MASK OUT`.
#[derive(Args)]
pub struct InpaintArgs {
    image: PathBuf,
    /// 8-bit mask, 255 = fill.
    mask: PathBuf,
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_INPAINT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = DEFAULT_INPAINT_TOLERANCE)]
    tolerance: f64,
}

pub fn inpaint(args: InpaintArgs) -> Result<()> {
    if args.iterations == 0 || !(args.tolerance > 0.0) {
        return Err(usage("--iterations must be >= 1 and --tolerance > 0"));
    }
    let x = read_image(&args.image)?;
    let m = read_mask_png(&args.mask)?;
    let (filled, report) = harmonic_inpaint(&x, &m, args.iterations, args.tolerance)?;
    if !report.converged {
        log::warn!("inpainting stopped after {} sweeps (max update {})", report.iterations, report.max_update);
    }
    write_image(&filled, &args.out)?;
    Ok(())
}
