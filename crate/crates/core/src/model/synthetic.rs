//! Analytic oracles for tests and desk-scale checks.

use super::ClassifierOracle;
use crate::error::{AttribError, Result};
use crate::imgcore::{BoundingBox, Image, CHANNELS};

/// Returns the same probability vector for every input; zero gradient.
#[derive(Clone, Debug)]
pub struct ConstantOracle {
    probs: Vec<f64>,
}

impl ConstantOracle {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(AttribError::Parameter("constant oracle needs a probability vector".into()));
        }
        Ok(ConstantOracle { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        ConstantOracle {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Two classes with `p` on class 0.
    pub fn binary(p: f64) -> Self {
        ConstantOracle {
            probs: vec![p, 1.0 - p],
        }
    }
}

impl ClassifierOracle for ConstantOracle {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn score_all(&self, _x: &Image) -> Result<Vec<f64>> {
        Ok(self.probs.clone())
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn input_gradient(&self, x: &Image, class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        Ok(vec![0.0; x.data().len()])
    }
}

/// Two-class oracle driven by the mean intensity inside a declared box.
///
/// Class 0 gets `clamp((mean − lo) / (hi − lo), 0, 1)`, class 1 the rest.
/// With the default `lo = 0, hi = 1` the class-0 score is the box mean itself.
#[derive(Clone, Debug)]
pub struct RegionMeanOracle {
    region: BoundingBox,
    lo: f64,
    hi: f64,
}

impl RegionMeanOracle {
    pub fn new(region: BoundingBox) -> Self {
        RegionMeanOracle { region, lo: 0.0, hi: 1.0 }
    }

    /// Rescales the box mean so that `lo` maps to 0 and `hi` to 1.
    pub fn with_range(region: BoundingBox, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(AttribError::Parameter(format!("region range needs hi > lo, got [{lo}, {hi}]")));
        }
        Ok(RegionMeanOracle { region, lo, hi })
    }

    pub fn region(&self) -> &BoundingBox {
        &self.region
    }

    fn region_mean(&self, x: &Image) -> Result<f64> {
        self.region.check_within(x.height(), x.width())?;
        let b = &self.region;
        let mut acc = 0.0;
        for r in b.y_min..=b.y_max {
            let row = &x.data()[(r * x.width() + b.x_min) * CHANNELS..(r * x.width() + b.x_max + 1) * CHANNELS];
            acc += row.iter().sum::<f64>();
        }
        Ok(acc / (b.area() * CHANNELS) as f64)
    }

    fn raw(&self, x: &Image) -> Result<f64> {
        Ok((self.region_mean(x)? - self.lo) / (self.hi - self.lo))
    }
}

impl ClassifierOracle for RegionMeanOracle {
    fn num_classes(&self) -> usize {
        2
    }

    fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
        let p = self.raw(x)?.clamp(0.0, 1.0);
        Ok(vec![p, 1.0 - p])
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn input_gradient(&self, x: &Image, class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        let raw = self.raw(x)?;
        let mut g = vec![0.0; x.data().len()];
        // The clamp is flat outside (0, 1).
        if raw > 0.0 && raw < 1.0 {
            let sign = if class == 0 { 1.0 } else { -1.0 };
            let d = sign / ((self.hi - self.lo) * (self.region.area() * CHANNELS) as f64);
            let b = &self.region;
            for r in b.y_min..=b.y_max {
                for c in b.x_min..=b.x_max {
                    let i = (r * x.width() + c) * CHANNELS;
                    g[i..i + CHANNELS].iter_mut().for_each(|v| *v = d);
                }
            }
        }
        Ok(g)
    }
}
