//! The attribution methods: sliding patch, LIME, and mask optimization.

pub mod lime;
pub mod mp;
pub mod sp;

pub use lime::{lime_attribute, lime_attribute_with, lime_sample_batch, LimeConfig, LimeOutput, LimeSample};
pub use mp::{
    fido_ca_attribute, fido_ca_attribute_with, mp2_attribute, mp2_attribute_with, mp2g_attribute, mp_attribute,
    tv_norm, tv_norm_grad, FidoConfig, FidoOutput, Mp2Config, Mp2Output, Mp2Selection, MpConfig, MpOutput, MpProblem,
    MpStep,
};
pub use sp::{sp_attribute, sp_attribute_with, sp_sample_trace, SpConfig, SpOutput};

use crate::error::{AttribError, Result};
use crate::fillers::{CachedFiller, FillStrategy, Filler};
use crate::imgcore::{AttributionMap, Image, PerturbMask};
use crate::model::ClassifierOracle;

/// Entries kept by the per-run fill cache for mask-dependent fillers.
const FILL_CACHE_CAPACITY: usize = 4096;

/// Wraps mask-dependent strategies in a content-addressed cache.
pub(crate) fn runtime_filler(strategy: &FillStrategy) -> Result<Box<dyn Filler>> {
    strategy.validate()?;
    Ok(if strategy.depends_on_mask() {
        Box::new(CachedFiller::new(strategy.clone(), FILL_CACHE_CAPACITY))
    } else {
        Box::new(strategy.clone())
    })
}

pub(crate) fn check_target(oracle: &dyn ClassifierOracle, x: &Image, class: usize) -> Result<()> {
    oracle.check_class(class)?;
    if x.height() == 0 || x.width() == 0 {
        return Err(AttribError::Shape("empty image".into()));
    }
    Ok(())
}

/// Fills `mask`, falling back to the gray filler when the mask hides the
/// whole image and the filler needs visible context to work from.
pub(crate) fn fill_or_gray(filler: &dyn Filler, x: &Image, mask: &PerturbMask) -> Result<Image> {
    if filler.depends_on_mask() && mask.is_all_ones() {
        log::debug!("mask hides the whole image; using gray fill");
        return FillStrategy::gray().fill(x, mask);
    }
    filler.fill(x, mask)
}

/// Any method's configuration, tagged by method name. Serialized as a flat
/// JSON object with a `"method"` key.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Sp(SpConfig),
    Lime(LimeConfig),
    Mp(MpConfig),
    Mp2(Mp2Config),
    Fido(FidoConfig),
}

impl MethodConfig {
    /// Default configuration for a method name (`sp`, `lime`, `mp`, `mp2`, `fido`).
    pub fn default_for(method: &str) -> Result<Self> {
        Ok(match method {
            "sp" => MethodConfig::Sp(SpConfig::default()),
            "lime" => MethodConfig::Lime(LimeConfig::default()),
            "mp" => MethodConfig::Mp(MpConfig::default()),
            "mp2" => MethodConfig::Mp2(Mp2Config::default()),
            "fido" => MethodConfig::Fido(FidoConfig::default()),
            other => return Err(AttribError::Parameter(format!("unknown method '{other}'"))),
        })
    }

    pub fn method(&self) -> &'static str {
        match self {
            MethodConfig::Sp(_) => "sp",
            MethodConfig::Lime(_) => "lime",
            MethodConfig::Mp(_) => "mp",
            MethodConfig::Mp2(_) => "mp2",
            MethodConfig::Fido(_) => "fido",
        }
    }

    /// Display label, with a `-G` suffix when the filler is an inpainter.
    pub fn label(&self) -> String {
        let base = self.method().to_uppercase();
        match self.filler() {
            Some(f) if f.is_inpainter() && !matches!(self, MethodConfig::Fido(_)) => format!("{base}-G"),
            _ => base,
        }
    }

    /// The configured filler; MP always blurs.
    pub fn filler(&self) -> Option<&FillStrategy> {
        match self {
            MethodConfig::Sp(c) => Some(&c.filler),
            MethodConfig::Lime(c) => Some(&c.filler),
            MethodConfig::Mp(_) => None,
            MethodConfig::Mp2(c) => Some(&c.filler),
            MethodConfig::Fido(c) => Some(&c.filler),
        }
    }

    pub fn set_filler(&mut self, filler: FillStrategy) -> Result<()> {
        match self {
            MethodConfig::Sp(c) => c.filler = filler,
            MethodConfig::Lime(c) => c.filler = filler,
            MethodConfig::Mp2(c) => c.filler = filler,
            MethodConfig::Fido(c) => c.filler = filler,
            MethodConfig::Mp(_) => {
                return Err(AttribError::Parameter("MP uses a fixed blur filler; set blur_sigma instead".into()))
            }
        }
        Ok(())
    }

    pub fn target_class(&self) -> usize {
        match self {
            MethodConfig::Sp(c) => c.target_class,
            MethodConfig::Lime(c) => c.target_class,
            MethodConfig::Mp(c) => c.target_class,
            MethodConfig::Mp2(c) => c.target_class,
            MethodConfig::Fido(c) => c.target_class,
        }
    }

    pub fn set_target_class(&mut self, class: usize) {
        match self {
            MethodConfig::Sp(c) => c.target_class = class,
            MethodConfig::Lime(c) => c.target_class = class,
            MethodConfig::Mp(c) => c.target_class = class,
            MethodConfig::Mp2(c) => c.target_class = class,
            MethodConfig::Fido(c) => c.target_class = class,
        }
    }

    /// Replaces one field by name, as given in the JSON form.
    pub fn with_field(&self, key: &str, value: serde_json::Value) -> Result<Self> {
        let mut json = serde_json::to_value(self).map_err(|e| AttribError::Parameter(e.to_string()))?;
        let obj = json.as_object_mut().expect("method configs serialize to objects");
        if key == "method" || !obj.contains_key(key) {
            return Err(AttribError::Parameter(format!("method {} has no parameter '{key}'", self.method())));
        }
        obj.insert(key.to_string(), value);
        serde_json::from_value(json).map_err(|e| AttribError::Parameter(format!("bad value for '{key}': {e}")))
    }

    /// Runs the method and returns its full-resolution heatmap.
    pub fn run(&self, x: &Image, oracle: &dyn ClassifierOracle) -> Result<AttributionMap> {
        let out = match self {
            MethodConfig::Sp(c) => sp_attribute(x, oracle, c).map(|o| o.map),
            MethodConfig::Lime(c) => lime_attribute(x, oracle, c).map(|o| o.map),
            MethodConfig::Mp(c) => mp_attribute(x, oracle, c).map(|o| o.map),
            MethodConfig::Mp2(c) => mp2_attribute(x, oracle, c).map(|o| o.map),
            MethodConfig::Fido(c) => fido_ca_attribute(x, oracle, c).map(|o| o.map),
        };
        out.map_err(|e| e.context(format!("method {}", self.label())))
    }
}
