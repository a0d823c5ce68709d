//! Deterministic mini-batch SGD for [`TinyCnn`] and the on-disk dataset layout.
//!
//! A dataset directory holds one sub-directory per class id (`0/`, `1/`, ...)
//! with PNG images inside.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tiny_cnn::{ParamGrad, TinyCnn};
use super::{argmax, softmax, ClassifierOracle};
use crate::error::{AttribError, Result};
use crate::imgcore::{read_image, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop early once training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            target_accuracy: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub epochs_run: usize,
    /// Epochs whose update raised the loss and was rolled back.
    pub rejected_epochs: usize,
}

/// Loads `(image, class)` pairs from `<dir>/<class_id>/*.png`, sorted by class
/// then file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(Image, usize)>> {
    let dir = dir.as_ref();
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AttribError::io(dir, e))? {
        let entry = entry.map_err(|e| AttribError::io(dir, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let Some(class) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        for f in fs::read_dir(&path).map_err(|e| AttribError::io(&path, e))? {
            let f = f.map_err(|e| AttribError::io(&path, e))?.path();
            if f.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                files.push((class, f));
            }
        }
    }
    if files.is_empty() {
        return Err(AttribError::InvalidData(format!("no class-labelled PNGs under {}", dir.display())));
    }
    files.sort();
    files.into_iter().map(|(c, p)| Ok((read_image(&p)?, c))).collect()
}

fn sample_grad(model: &TinyCnn, x: &Image, label: usize) -> Result<(f64, Vec<Option<ParamGrad>>)> {
    let trace = model.trace(x)?;
    let p = softmax(trace.acts.last().unwrap());
    let loss = -p[label].max(1e-300).ln();
    let grad_logits: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, pj)| pj - if j == label { 1.0 } else { 0.0 })
        .collect();
    let mut params: Vec<Option<ParamGrad>> = model.layers().iter().map(|l| l.param_grad()).collect();
    model.backprop(&trace, grad_logits, Some(&mut params));
    Ok((loss, params))
}

/// Mean cross-entropy and accuracy over the whole set.
fn evaluate(model: &TinyCnn, data: &[(Image, usize)]) -> Result<(f64, f64)> {
    let per = data
        .par_iter()
        .map(|(x, y)| {
            let p = model.score_all(x)?;
            Ok((-p[*y].max(1e-300).ln(), usize::from(argmax(&p) == *y)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().map(|p| p.1).sum::<usize>() as f64 / n))
}

/// Trains `model` in place. Results are identical for a given seed regardless
/// of thread count: per-sample gradients are reduced in sample order.
///
/// After each epoch the full training loss is measured; an epoch that raises
/// it is rolled back (momentum reset, next epoch reshuffled), so the reported
/// losses never increase.
pub fn train_tiny_cnn(model: &mut TinyCnn, data: &[(Image, usize)], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(AttribError::InvalidData("empty training set".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(AttribError::Parameter("training needs batch_size > 0, lr > 0, momentum in [0, 1)".into()));
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| *y >= model.num_classes()) {
        return Err(AttribError::InvalidData(format!("label {y} exceeds the model's class count")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity: Vec<Option<ParamGrad>> = model.layers().iter().map(|l| l.param_grad()).collect();
    let (mut loss, mut acc) = evaluate(model, data)?;
    let lr = cfg.learning_rate;
    let mut report = TrainReport { epoch_losses: Vec::new(), train_accuracy: acc, epochs_run: 0, rejected_epochs: 0 };

    for epoch in 0..cfg.epochs {
        if cfg.target_accuracy.is_some_and(|t| acc >= t) {
            break;
        }
        let snapshot = model.clone();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| sample_grad(model, &data[i].0, data[i].1))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut sum: Vec<Option<ParamGrad>> = model.layers().iter().map(|l| l.param_grad()).collect();
            for (_, g) in grads {
                for (acc, gl) in sum.iter_mut().zip(g) {
                    if let (Some(a), Some(g)) = (acc.as_mut(), gl) {
                        a.weights.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
                        a.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
                    }
                }
            }
            for ((layer, v), g) in model.layers_mut().iter_mut().zip(velocity.iter_mut()).zip(&sum) {
                let (Some((w, b)), Some(v), Some(g)) = (layer.params_mut(), v.as_mut(), g.as_ref()) else {
                    continue;
                };
                for (p, (vel, gr)) in w.iter_mut().chain(b.iter_mut()).zip(
                    v.weights.iter_mut().chain(v.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)),
                ) {
                    *vel = cfg.momentum * *vel - lr * gr * scale;
                    *p += *vel;
                }
            }
            model.quantize_params();
        }
        let (new_loss, new_acc) = evaluate(model, data)?;
        if !new_loss.is_finite() {
            return Err(AttribError::NonFinite { step: epoch });
        }
        if new_loss > loss {
            *model = snapshot;
            velocity = model.layers().iter().map(|l| l.param_grad()).collect();
            report.rejected_epochs += 1;
            log::info!("epoch {}: loss rose to {new_loss:.4}; rolled back", epoch + 1);
        } else {
            (loss, acc) = (new_loss, new_acc);
            log::info!("epoch {}: loss {loss:.4}, train accuracy {acc:.3}", epoch + 1);
        }
        report.epoch_losses.push(loss);
        report.epochs_run = epoch + 1;
        report.train_accuracy = acc;
    }
    Ok(report)
}
