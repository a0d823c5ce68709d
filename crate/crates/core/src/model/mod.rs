//! Classifier oracles: the only view of a model the attribution methods get.

mod score_server;
mod synthetic;
mod tiny_cnn;
mod train;

pub use score_server::ScoreServerOracle;
pub use synthetic::{ConstantOracle, RegionMeanOracle};
pub use tiny_cnn::{load_model, save_model, Layer, Padding, TinyCnn};
pub use train::{load_dataset, train_tiny_cnn, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{AttribError, Result};
use crate::imgcore::Image;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub scores: bool,
    pub input_gradients: bool,
}

/// A softmax classifier seen as a black box with optional input gradients.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait ClassifierOracle: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Probability vector over all classes; sums to 1.
    fn score_all(&self, x: &Image) -> Result<Vec<f64>>;

    fn score(&self, x: &Image, class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.score_all(x)?[class])
    }

    fn supports_gradients(&self) -> bool {
        false
    }

    /// `∂ score(class) / ∂x`, laid out like `x.data()`.
    fn input_gradient(&self, _x: &Image, _class: usize) -> Result<Vec<f64>> {
        Err(AttribError::Unsupported(
            "this oracle does not expose input gradients".into(),
        ))
    }

    /// Score and gradient from a single pass where the model allows it.
    fn score_and_gradient(&self, x: &Image, class: usize) -> Result<(f64, Vec<f64>)> {
        Ok((self.score(x, class)?, self.input_gradient(x, class)?))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            scores: true,
            input_gradients: self.supports_gradients(),
        }
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(AttribError::Parameter(format!(
                "class {class} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

impl<T: ClassifierOracle + ?Sized> ClassifierOracle for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
        (**self).score_all(x)
    }
    fn score(&self, x: &Image, class: usize) -> Result<f64> {
        (**self).score(x, class)
    }
    fn supports_gradients(&self) -> bool {
        (**self).supports_gradients()
    }
    fn input_gradient(&self, x: &Image, class: usize) -> Result<Vec<f64>> {
        (**self).input_gradient(x, class)
    }
    fn score_and_gradient(&self, x: &Image, class: usize) -> Result<(f64, Vec<f64>)> {
        (**self).score_and_gradient(x, class)
    }
}

impl<T: ClassifierOracle + ?Sized> ClassifierOracle for Box<T> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
        (**self).score_all(x)
    }
    fn score(&self, x: &Image, class: usize) -> Result<f64> {
        (**self).score(x, class)
    }
    fn supports_gradients(&self) -> bool {
        (**self).supports_gradients()
    }
    fn input_gradient(&self, x: &Image, class: usize) -> Result<Vec<f64>> {
        (**self).input_gradient(x, class)
    }
    fn score_and_gradient(&self, x: &Image, class: usize) -> Result<(f64, Vec<f64>)> {
        (**self).score_and_gradient(x, class)
    }
}

/// Central-difference derivative of `score(class)` along the listed flat
/// coordinates of `x`. Each coordinate costs two score calls.
pub fn finite_diff_at(
    oracle: &dyn ClassifierOracle,
    x: &Image,
    class: usize,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(AttribError::Parameter(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.data().to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = oracle.score(&Image::from_vec_unchecked(x.height(), x.width(), probe.clone()), class)?;
            probe[i] = orig - h;
            let down = oracle.score(&Image::from_vec_unchecked(x.height(), x.width(), probe.clone()), class)?;
            probe[i] = orig;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Full central-difference gradient: `2·H·W·3` score calls.
pub fn finite_diff_gradient(oracle: &dyn ClassifierOracle, x: &Image, class: usize, h: f64) -> Result<Vec<f64>> {
    let coords: Vec<usize> = (0..x.data().len()).collect();
    finite_diff_at(oracle, x, class, h, &coords)
}

/// Where mask-optimization methods get `∂s/∂x` from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientSource {
    /// The oracle's own input gradient.
    Analytic,
    /// Central differences; usable with score-only oracles but very slow.
    FiniteDifference { step: f64 },
}

impl Default for GradientSource {
    fn default() -> Self {
        GradientSource::Analytic
    }
}

impl GradientSource {
    pub fn check(&self, oracle: &dyn ClassifierOracle) -> Result<()> {
        match self {
            GradientSource::Analytic if !oracle.supports_gradients() => Err(AttribError::Unsupported(
                "method needs input gradients; enable finite differences for score-only models".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn score_and_gradient(&self, oracle: &dyn ClassifierOracle, x: &Image, class: usize) -> Result<(f64, Vec<f64>)> {
        match *self {
            GradientSource::Analytic => oracle.score_and_gradient(x, class),
            GradientSource::FiniteDifference { step } => {
                log::warn!(
                    "finite-difference gradient: {} score calls per step",
                    2 * x.data().len()
                );
                Ok((oracle.score(x, class)?, finite_diff_gradient(oracle, x, class, step)?))
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest probability; ties go to the lower class id.
pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class model with `s0 = w·x`, small weights so it stays a probability.
    struct Linear {
        w: Vec<f64>,
    }

    impl ClassifierOracle for Linear {
        fn num_classes(&self) -> usize {
            2
        }
        fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
            let s: f64 = self.w.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            Ok(vec![s, 1.0 - s])
        }
    }

    #[test]
    fn finite_differences_recover_linear_weights() {
        let w: Vec<f64> = (0..27).map(|i| (i as f64 - 13.0) * 1e-3).collect();
        let model = Linear { w: w.clone() };
        let x = Image::from_fn(3, 3, |r, c| [0.1 * r as f64, 0.2 * c as f64, 0.5]);
        let g = finite_diff_gradient(&model, &x, 0, FD_STEP).unwrap();
        for (a, b) in g.iter().zip(&w) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(finite_diff_gradient(&model, &x, 0, 0.0).is_err());
    }

    #[test]
    fn gradient_capability_is_checked() {
        let model = Linear { w: vec![0.0; 3] };
        let x = Image::filled(1, 1, [0.5; 3]);
        assert!(matches!(model.input_gradient(&x, 0), Err(AttribError::Unsupported(_))));
        assert!(GradientSource::Analytic.check(&model).is_err());
        assert!(GradientSource::FiniteDifference { step: FD_STEP }.check(&model).is_ok());
        assert!(model.score(&x, 2).is_err());
    }

    #[test]
    fn softmax_is_normalized() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&p), 0);
        let u = softmax(&[0.3; 4]);
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
