//! Perturbation-based attribution for image classifiers.
//!
//! Three method families (sliding patch, LIME, mask optimization), each of
//! which removes image evidence by compositing a *filler* image into a mask
//! region. Swapping the filler from gray/blur to an inpainter turns each method
//! into its generative variant. The crate also carries the evaluation harness
//! (localization, deletion, saliency, sensitivity sweeps) used to compare them.

pub mod attrib;
pub mod error;
pub mod eval;
pub mod imgcore;
pub mod fillers;
pub mod model;
pub mod sensitivity;
pub mod superpixel;
pub mod synth;

pub use error::{AttribError, Result};
pub use imgcore::{AttributionMap, BoundingBox, Image, MaskKind, PerturbMask, Plane, Provenance};
pub use model::{ClassifierOracle, GradientSource};

/// Environment variable naming the directory for temporary files.
pub const TMPDIR_ENV: &str = "ATTRIB_TMPDIR";

/// A fresh temporary directory, under `$ATTRIB_TMPDIR` when set.
pub(crate) fn scratch_dir() -> Result<tempfile::TempDir> {
    let builder = tempfile::Builder::new().prefix("attrib-").to_owned();
    match std::env::var_os(TMPDIR_ENV) {
        Some(dir) => builder.tempdir_in(&dir).map_err(|e| AttribError::io(dir, e)),
        None => builder.tempdir().map_err(|e| AttribError::io(std::env::temp_dir(), e)),
    }
}
