//! Run-configuration resolution: method defaults, then the JSON config file,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use attrib_core::attrib::MethodConfig;
use attrib_core::fillers::{ExternalInpainter, FillStrategy};
use clap::Args;
use serde_json::{Map, Value};

use crate::usage;

/// Keys of a config file that belong to the run rather than the method.
const RUN_KEYS: [&str; 10] = ["model", "num_classes", "image", "dataset", "class", "out", "filler", "seed", "heldout", "method"];

/// A parsed `--config` file.
#[derive(Default)]
pub struct ConfigFile {
    entries: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| attrib_core::AttribError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        match value {
            Value::Object(entries) => Ok(ConfigFile { entries }),
            _ => Err(usage(format!("{}: config must be a JSON object", path.display()))),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.entries.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(usage(format!("config key '{key}' must be a string, got {other}"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.entries.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| usage(format!("config key '{key}' must be a non-negative integer"))),
        }
    }

    /// Method hyperparameters: everything that is not a run key.
    fn params(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.entries.iter().filter(|(k, _)| !RUN_KEYS.contains(&k.as_str()))
    }

    fn filler(&self) -> Option<&Value> {
        self.entries.get("filler")
    }
}

/// Filler selection shared by every command that runs a method.
#[derive(Args, Clone, Debug, Default)]
pub struct FillerArgs {
    /// gray | noise | blur | inpaint | inpaint-ext:<command>
    #[arg(long)]
    pub filler: Option<String>,
    /// Blur filler sigma in pixels.
    #[arg(long)]
    pub fill_sigma: Option<f64>,
    #[arg(long)]
    pub inpaint_iterations: Option<usize>,
    #[arg(long)]
    pub inpaint_tolerance: Option<f64>,
    /// Timeout per external inpainter call.
    #[arg(long)]
    pub inpaint_timeout: Option<f64>,
}

impl FillerArgs {
    pub fn is_set(&self) -> bool {
        self.filler.is_some()
            || self.fill_sigma.is_some()
            || self.inpaint_iterations.is_some()
            || self.inpaint_tolerance.is_some()
            || self.inpaint_timeout.is_some()
    }
}

/// Parses a filler name; `seed` is used by the noise filler.
pub fn parse_filler(name: &str, seed: u64) -> Result<FillStrategy> {
    Ok(match name {
        "gray" => FillStrategy::gray(),
        "noise" => FillStrategy::noise(seed),
        "blur" => FillStrategy::blur(),
        "inpaint" => FillStrategy::inpaint(),
        _ => match name.strip_prefix("inpaint-ext:") {
            Some(cmd) if !cmd.trim().is_empty() => FillStrategy::InpaintExternal(ExternalInpainter::new(cmd.trim())),
            _ => return Err(usage(format!("unknown filler '{name}' (gray, noise, blur, inpaint, inpaint-ext:<cmd>)"))),
        },
    })
}

fn filler_from_value(v: &Value, seed: u64) -> Result<FillStrategy> {
    match v {
        Value::String(s) => parse_filler(s, seed),
        other => serde_json::from_value(other.clone()).map_err(|e| usage(format!("bad filler in config: {e}"))),
    }
}

/// Applies the tuning flags to a filler, rejecting flags that do not apply.
pub fn tune_filler(mut filler: FillStrategy, args: &FillerArgs) -> Result<FillStrategy> {
    if let Some(s) = args.fill_sigma {
        match &mut filler {
            FillStrategy::Blur { sigma } => *sigma = s,
            _ => return Err(usage("--fill-sigma only applies to the blur filler")),
        }
    }
    if args.inpaint_iterations.is_some() || args.inpaint_tolerance.is_some() {
        match &mut filler {
            FillStrategy::Inpaint { iterations, tolerance } => {
                *iterations = args.inpaint_iterations.unwrap_or(*iterations);
                *tolerance = args.inpaint_tolerance.unwrap_or(*tolerance);
            }
            _ => return Err(usage("--inpaint-iterations/--inpaint-tolerance only apply to the inpaint filler")),
        }
    }
    if let Some(t) = args.inpaint_timeout {
        match &mut filler {
            FillStrategy::InpaintExternal(ext) => ext.timeout_secs = t,
            _ => return Err(usage("--inpaint-timeout only applies to inpaint-ext")),
        }
    }
    filler.validate()?;
    Ok(filler)
}

/// Hyperparameter flags mirroring the method configuration fields. Each flag
/// is rejected when the chosen method has no such parameter.
#[derive(Args, Clone, Debug, Default)]
pub struct MethodFlags {
    /// SP patch side in pixels.
    #[arg(long)]
    pub patch: Option<usize>,
    /// SP stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    /// LIME superpixel count.
    #[arg(long)]
    pub segments: Option<usize>,
    /// LIME perturbation samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub lasso_lambda: Option<f64>,
    #[arg(long)]
    pub fit_steps: Option<usize>,
    #[arg(long)]
    pub occlusion_prob: Option<f64>,
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long)]
    pub slic_iterations: Option<usize>,
    /// Coarse mask side for MP, MP2 and FIDO.
    #[arg(long)]
    pub mask_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub tv_beta: Option<f64>,
    #[arg(long)]
    pub jitter_batch: Option<usize>,
    #[arg(long)]
    pub deterministic_jitter: bool,
    /// MP blur sigma.
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long)]
    pub pixels_per_step: Option<usize>,
    #[arg(long)]
    pub stop_prob: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// MP2 cell selection: largest_magnitude | most_negative.
    #[arg(long)]
    pub selection: Option<String>,
    /// FIDO sparsity weight.
    #[arg(long)]
    pub reg: Option<f64>,
    /// Use central differences with this step instead of model gradients.
    #[arg(long)]
    pub fd_gradients: Option<f64>,
}

impl MethodFlags {
    fn overrides(&self) -> Vec<(&'static str, Value)> {
        let mut out: Vec<(&'static str, Value)> = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    out.push((stringify!($field), serde_json::json!(v)));
                }
            )*};
        }
        push!(
            patch, stride, segments, samples, kernel_width, lasso_lambda, fit_steps, occlusion_prob, compactness,
            slic_iterations, mask_size, steps, lr, lambda1, lambda2, tv_beta, jitter_batch, blur_sigma,
            pixels_per_step, stop_prob, max_steps, selection, reg
        );
        if self.deterministic_jitter {
            out.push(("deterministic_jitter", Value::Bool(true)));
        }
        if let Some(step) = self.fd_gradients {
            out.push(("gradient", serde_json::json!({"kind": "finite_difference", "step": step})));
        }
        out
    }
}

fn apply(cfg: MethodConfig, key: &str, value: Value, origin: &str) -> Result<MethodConfig> {
    cfg.with_field(key, value).map_err(|e| usage(format!("{origin}: {e}")))
}

/// Builds the method configuration. Precedence: flags over the config file
/// over method defaults. `seed` sets the method seed where there is one and
/// seeds the noise filler.
pub fn resolve_method(
    method: Option<&str>,
    file: &ConfigFile,
    flags: &MethodFlags,
    filler: &FillerArgs,
    seed: Option<u64>,
) -> Result<MethodConfig> {
    let name = match method {
        Some(m) => m.to_string(),
        None => file.string("method")?.ok_or_else(|| usage("no method given (--method or \"method\" in the config)"))?,
    };
    let mut cfg = MethodConfig::default_for(&name).map_err(|e| usage(e.to_string()))?;
    for (key, value) in file.params() {
        cfg = apply(cfg, key, value.clone(), "config")?;
    }
    let seed = match seed {
        Some(s) => Some(s),
        None => file.uint("seed")?,
    };
    if let Some(s) = seed {
        if let Ok(next) = cfg.with_field("seed", s.into()) {
            cfg = next;
        }
    }
    for (key, value) in flags.overrides() {
        cfg = apply(cfg, key, value, &format!("--{}", key.replace('_', "-")))?;
    }
    let chosen = match (&filler.filler, file.filler()) {
        (Some(name), _) => Some(parse_filler(name, seed.unwrap_or(0))?),
        (None, Some(v)) => Some(filler_from_value(v, seed.unwrap_or(0))?),
        (None, None) => None,
    };
    match chosen {
        Some(f) => {
            let f = tune_filler(f, filler)?;
            cfg.set_filler(f).map_err(|e| usage(e.to_string()))?;
        }
        None if filler.is_set() => {
            let current = cfg.filler().cloned().ok_or_else(|| usage("this method takes no filler flags"))?;
            cfg.set_filler(tune_filler(current, filler)?).map_err(|e| usage(e.to_string()))?;
        }
        None => {}
    }
    if let Some(s) = seed {
        if let Some(FillStrategy::Noise { .. }) = cfg.filler() {
            cfg.set_filler(FillStrategy::noise(s))?;
        }
    }
    Ok(cfg)
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
