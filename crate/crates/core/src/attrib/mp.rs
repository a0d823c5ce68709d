//! Mask optimization: MP (smooth deletion mask by gradient descent), MP2
//! (greedy binary mask growth), its inpainting variant, and the FIDO-CA
//! preservation baseline.
//!
//! Every method composites `x̄ = x ⊙ (1 − U m) + f ⊙ U m` where `m` is a coarse
//! mask and `U` bilinear upsampling. Mask gradients flow back as
//! `Uᵀ(Σ_c ∂s/∂x̄ ⊙ (f − x))`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_target, fill_or_gray, runtime_filler};
use super::sp::csv_error;
use crate::error::{AttribError, Result};
use crate::fillers::{gradient_fill, FillStrategy, Filler, DEFAULT_BLUR_SIGMA};
use crate::imgcore::{
    composite_into, gaussian_blur, jitter_adjoint_into, jitter_into, AttributionMap, BilinearResize, Image,
    JitterDirection, PerturbMask, Plane, Provenance, CHANNELS, JITTER_MAX,
};
use crate::model::{ClassifierOracle, GradientSource};

/// `Σ_i ‖∇m_i‖^β` with forward differences (zero past the last row/column).
pub fn tv_norm(m: &Plane, beta: f64) -> f64 {
    let (h, w) = (m.height(), m.width());
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = m.get(r, c);
            let dx = if c + 1 < w { m.get(r, c + 1) - v } else { 0.0 };
            let dy = if r + 1 < h { m.get(r + 1, c) - v } else { 0.0 };
            let g2 = dx * dx + dy * dy;
            if g2 > 0.0 {
                total += g2.powf(beta / 2.0);
            }
        }
    }
    total
}

/// Gradient of [`tv_norm`]. Where a local gradient vanishes the zero
/// subgradient is used.
pub fn tv_norm_grad(m: &Plane, beta: f64) -> Plane {
    let (h, w) = (m.height(), m.width());
    let mut g = Plane::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let v = m.get(r, c);
            let dx = if c + 1 < w { m.get(r, c + 1) - v } else { 0.0 };
            let dy = if r + 1 < h { m.get(r + 1, c) - v } else { 0.0 };
            let g2 = dx * dx + dy * dy;
            if g2 == 0.0 {
                continue;
            }
            // d(g^β)/d(dx) = β g^(β−2) dx
            let k = beta * g2.powf(beta / 2.0 - 1.0);
            g.set(r, c, g.get(r, c) - k * (dx + dy));
            if c + 1 < w {
                g.set(r, c + 1, g.get(r, c + 1) + k * dx);
            }
            if r + 1 < h {
                g.set(r + 1, c, g.get(r + 1, c) + k * dy);
            }
        }
    }
    g
}

/// One translation of the jitter expectation.
pub type Jitter = (usize, JitterDirection);

/// The nine distinct translations: identity plus 1..=4 pixels each way.
pub fn all_jitters() -> Vec<Jitter> {
    let mut out = vec![(0, JitterDirection::Horizontal)];
    for tau in 1..=JITTER_MAX {
        out.push((tau, JitterDirection::Horizontal));
        out.push((tau, JitterDirection::Vertical));
    }
    out
}

fn validate_mask_size(k: usize, x: &Image) -> Result<()> {
    if k == 0 || k > x.height().min(x.width()) {
        return Err(AttribError::Parameter(format!(
            "mask size {k} must be in [1, {}]",
            x.height().min(x.width())
        )));
    }
    Ok(())
}

/// `Uᵀ(Σ_c g ⊙ (f − x))`: pulls an image-space gradient back onto the coarse
/// mask.
fn pull_back(resize: &BilinearResize, grad_img: &[f64], x: &Image, f: &Image) -> Vec<f64> {
    let full: Vec<f64> = grad_img
        .chunks_exact(CHANNELS)
        .zip(x.data().chunks_exact(CHANNELS).zip(f.data().chunks_exact(CHANNELS)))
        .map(|(g, (xp, fp))| (0..CHANNELS).map(|k| g[k] * (fp[k] - xp[k])).sum())
        .collect();
    resize.adjoint(&full)
}

/// Objective terms at one mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpTerms {
    pub l1: f64,
    pub tv: f64,
    /// Mean target probability over the jitter batch.
    pub score: f64,
    pub objective: f64,
}

/// The deletion objective of MP for a fixed image and filler, exposed so the
/// chain-rule gradient can be checked against finite differences.
pub struct MpProblem<'a> {
    x: &'a Image,
    filler: Image,
    resize: BilinearResize,
    oracle: &'a dyn ClassifierOracle,
    class: usize,
    gradient: GradientSource,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tv_beta: f64,
}

impl<'a> MpProblem<'a> {
    pub fn new(
        x: &'a Image,
        oracle: &'a dyn ClassifierOracle,
        filler: Image,
        mask_size: usize,
        cfg: &MpConfig,
    ) -> Result<Self> {
        validate_mask_size(mask_size, x)?;
        if !x.same_dims(&filler) {
            return Err(AttribError::Shape("filler image does not match input".into()));
        }
        Ok(MpProblem {
            x,
            filler,
            resize: BilinearResize::new(mask_size, mask_size, x.height(), x.width())?,
            oracle,
            class: cfg.target_class,
            gradient: cfg.gradient,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            tv_beta: cfg.tv_beta,
        })
    }

    pub fn mask_size(&self) -> usize {
        self.resize.input_dims().0
    }

    /// `x̄` for a raw coarse mask, followed by one jitter.
    pub fn perturbed(&self, m: &[f64], jitter: Jitter) -> Image {
        let up = self.resize.apply(m);
        let mut xb = vec![0.0; self.x.data().len()];
        composite_into(self.x.data(), &up, self.filler.data(), &mut xb);
        let (h, w) = (self.x.height(), self.x.width());
        let mut out = vec![0.0; xb.len()];
        jitter_into(&xb, h, w, jitter.0, jitter.1, &mut out);
        Image::from_vec_unchecked(h, w, out)
    }

    pub fn score(&self, m: &[f64], jitter: Jitter) -> Result<f64> {
        self.oracle.score(&self.perturbed(m, jitter), self.class)
    }

    /// Target probability and its gradient w.r.t. the coarse mask.
    pub fn score_and_grad(&self, m: &[f64], jitter: Jitter) -> Result<(f64, Vec<f64>)> {
        let xj = self.perturbed(m, jitter);
        let (s, g) = self.gradient.score_and_gradient(self.oracle, &xj, self.class)?;
        let (h, w) = (self.x.height(), self.x.width());
        let mut gb = vec![0.0; g.len()];
        jitter_adjoint_into(&g, h, w, jitter.0, jitter.1, &mut gb);
        Ok((s, pull_back(&self.resize, &gb, self.x, &self.filler)))
    }

    /// Full objective `λ₁‖m‖₁ + λ₂ TV(m) + mean_τ s(Φ(x̄, τ))` and its gradient.
    pub fn objective_and_grad(&self, m: &[f64], jitters: &[Jitter]) -> Result<(MpTerms, Vec<f64>)> {
        if jitters.is_empty() {
            return Err(AttribError::Parameter("jitter batch is empty".into()));
        }
        let k = self.mask_size();
        let plane = Plane::new(k, k, m.to_vec())?;
        let mut grad = vec![0.0; m.len()];
        let mut score = 0.0;
        let scale = 1.0 / jitters.len() as f64;
        for &j in jitters {
            let (s, g) = self.score_and_grad(m, j)?;
            score += s * scale;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * scale);
        }
        let l1: f64 = m.iter().map(|v| v.abs()).sum();
        let tv = tv_norm(&plane, self.tv_beta);
        let tvg = tv_norm_grad(&plane, self.tv_beta);
        for ((gi, mi), ti) in grad.iter_mut().zip(m).zip(tvg.data()) {
            *gi += self.lambda1 * if *mi >= 0.0 { 1.0 } else { -1.0 } + self.lambda2 * ti;
        }
        let objective = self.lambda1 * l1 + self.lambda2 * tv + score;
        Ok((MpTerms { l1, tv, score, objective }, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpConfig {
    pub mask_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tv_beta: f64,
    pub steps: usize,
    pub lr: f64,
    /// Jitter draws per step.
    pub jitter_batch: usize,
    /// Use all nine translations every step instead of random draws.
    pub deterministic_jitter: bool,
    pub blur_sigma: f64,
    pub seed: u64,
    pub gradient: GradientSource,
    pub target_class: usize,
}

impl Default for MpConfig {
    fn default() -> Self {
        MpConfig {
            mask_size: 28,
            lambda1: 0.01,
            lambda2: 0.2,
            tv_beta: 3.0,
            steps: 300,
            lr: 0.1,
            jitter_batch: 4,
            deterministic_jitter: false,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            seed: 0,
            gradient: GradientSource::Analytic,
            target_class: 0,
        }
    }
}

/// One row of an optimization trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpStep {
    pub step: usize,
    pub l1: f64,
    pub tv: f64,
    pub probability: f64,
    pub objective: f64,
    /// Coarse cells at or above 0.5.
    pub ones: usize,
}

/// Writes `step,l1,tv,probability,objective,ones`.
pub fn write_trace_csv(trace: &[MpStep], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for s in trace {
        w.serialize(s).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| AttribError::io(path, e))
}

#[derive(Clone, Debug)]
pub struct MpOutput {
    pub map: AttributionMap,
    /// Final coarse mask.
    pub mask: Plane,
    pub trace: Vec<MpStep>,
}

fn upsampled_map(resize: &BilinearResize, m: &Plane, provenance: Provenance) -> Result<AttributionMap> {
    let (h, w) = resize.output_dims();
    AttributionMap::new(Plane::new(h, w, resize.apply(m.data()))?, provenance)
}

/// MP: gradient descent on a smooth deletion mask with jitter averaging.
/// The learned mask, upsampled, is the heatmap.
pub fn mp_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &MpConfig) -> Result<MpOutput> {
    check_target(oracle, x, cfg.target_class)?;
    cfg.gradient.check(oracle)?;
    if cfg.steps == 0 || !(cfg.lr > 0.0) || cfg.jitter_batch == 0 || !(cfg.tv_beta > 0.0) {
        return Err(AttribError::Parameter("MP needs steps >= 1, lr > 0, jitter_batch >= 1, tv_beta > 0".into()));
    }
    let filler = gaussian_blur(x, cfg.blur_sigma)?;
    let problem = MpProblem::new(x, oracle, filler, cfg.mask_size, cfg)?;
    let k = cfg.mask_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
    let fixed = all_jitters();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Jitter> = if cfg.deterministic_jitter {
            fixed.clone()
        } else {
            (0..cfg.jitter_batch)
                .map(|_| {
                    let tau = rng.gen_range(0..=JITTER_MAX);
                    let dir = if rng.gen_bool(0.5) { JitterDirection::Horizontal } else { JitterDirection::Vertical };
                    (tau, dir)
                })
                .collect()
        };
        let (terms, grad) = problem
            .objective_and_grad(&m, &batch)
            .map_err(|e| e.context(format!("MP step {step}")))?;
        if !terms.objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AttribError::NonFinite { step });
        }
        trace.push(MpStep {
            step,
            l1: terms.l1,
            tv: terms.tv,
            probability: terms.score,
            objective: terms.objective,
            ones: m.iter().filter(|v| **v >= 0.5).count(),
        });
        for (mi, gi) in m.iter_mut().zip(&grad) {
            *mi = (*mi - cfg.lr * gi).clamp(0.0, 1.0);
        }
    }
    let mask = Plane::new(k, k, m)?;
    let provenance = Provenance::new("mp", serde_json::to_value(cfg).unwrap_or_default());
    Ok(MpOutput { map: upsampled_map(&problem.resize, &mask, provenance)?, mask, trace })
}

/// How MP2 ranks candidate cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mp2Selection {
    /// Largest `|∂s/∂m|`.
    #[default]
    LargestMagnitude,
    /// Most negative `∂s/∂m`: cells whose removal lowers the score fastest.
    MostNegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mp2Config {
    pub mask_size: usize,
    pub pixels_per_step: usize,
    pub stop_prob: f64,
    /// Defaults to `mask_size² / 2`.
    pub max_steps: Option<usize>,
    pub filler: FillStrategy,
    pub selection: Mp2Selection,
    pub gradient: GradientSource,
    pub target_class: usize,
}

impl Default for Mp2Config {
    fn default() -> Self {
        Mp2Config {
            mask_size: 28,
            pixels_per_step: 2,
            stop_prob: 0.001,
            max_steps: None,
            filler: FillStrategy::blur(),
            selection: Mp2Selection::LargestMagnitude,
            gradient: GradientSource::Analytic,
            target_class: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mp2Output {
    pub map: AttributionMap,
    /// Binary coarse mask.
    pub mask: Plane,
    /// Growth iterations performed; equals the index of the first
    /// sub-threshold probability when converged.
    pub iterations: usize,
    pub converged: bool,
    /// Target probability before each growth step, plus the final one.
    pub probabilities: Vec<f64>,
    /// Flat coarse indices added at each iteration.
    pub selected: Vec<Vec<usize>>,
}

impl Mp2Output {
    /// Writes `step,probability,ones`.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["step", "probability", "ones"]).map_err(|e| csv_error(path, e))?;
        let mut ones = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            w.write_record([i.to_string(), p.to_string(), ones.to_string()]).map_err(|e| csv_error(path, e))?;
            ones += self.selected.get(i).map_or(0, |s| s.len());
        }
        w.flush().map_err(|e| AttribError::io(path, e))
    }
}

/// State shared by one MP2 run: the upsampler and the current filler.
pub(crate) struct Mp2State<'a> {
    x: &'a Image,
    filler: &'a dyn Filler,
    resize: BilinearResize,
    shared_fill: Option<Image>,
    cell: usize,
}

impl<'a> Mp2State<'a> {
    pub(crate) fn new(x: &'a Image, filler: &'a dyn Filler, k: usize) -> Result<Self> {
        validate_mask_size(k, x)?;
        let resize = BilinearResize::new(k, k, x.height(), x.width())?;
        let shared_fill = if filler.depends_on_mask() {
            None
        } else {
            Some(filler.fill(x, &PerturbMask::ones(x.height(), x.width()))?)
        };
        let cell = x.height().max(x.width()).div_ceil(k);
        Ok(Mp2State { x, filler, resize, shared_fill, cell })
    }

    fn upsampled(&self, m: &[f64]) -> Result<(Vec<f64>, PerturbMask)> {
        let up = self.resize.apply(m);
        let (h, w) = (self.x.height(), self.x.width());
        let mb = PerturbMask::binary(Plane::new(h, w, up.iter().map(|v| if *v >= 0.5 { 1.0 } else { 0.0 }).collect())?)?;
        Ok((up, mb))
    }

    fn fill(&self, mb: &PerturbMask) -> Result<Image> {
        match &self.shared_fill {
            Some(f) => Ok(f.clone()),
            None => fill_or_gray(self.filler, self.x, mb),
        }
    }

    /// `x̄` for a coarse mask.
    pub(crate) fn perturbed(&self, m: &[f64]) -> Result<Image> {
        let (up, mb) = self.upsampled(m)?;
        let f = self.fill(&mb)?;
        let mut out = vec![0.0; self.x.data().len()];
        composite_into(self.x.data(), &up, f.data(), &mut out);
        Ok(Image::from_vec_unchecked(self.x.height(), self.x.width(), out))
    }

    /// Probability at `m` and the mask gradient there.
    pub(crate) fn score_and_grad(
        &self,
        m: &[f64],
        oracle: &dyn ClassifierOracle,
        class: usize,
        source: GradientSource,
    ) -> Result<(f64, Vec<f64>)> {
        let (up, mb) = self.upsampled(m)?;
        let f = self.fill(&mb)?;
        let mut xb = vec![0.0; self.x.data().len()];
        composite_into(self.x.data(), &up, f.data(), &mut xb);
        let xb = Image::from_vec_unchecked(self.x.height(), self.x.width(), xb);
        let (s, g) = source.score_and_gradient(oracle, &xb, class)?;
        let fg = match &self.shared_fill {
            Some(f) => f.clone(),
            None if mb.is_all_ones() => fill_or_gray(self.filler, self.x, &mb)?,
            None => gradient_fill(self.filler, self.x, &mb, self.cell)?,
        };
        Ok((s, pull_back(&self.resize, &g, self.x, &fg)))
    }
}

/// MP2 with the filler from `cfg`.
pub fn mp2_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &Mp2Config) -> Result<Mp2Output> {
    let filler = runtime_filler(&cfg.filler)?;
    mp2_attribute_with(x, oracle, filler.as_ref(), cfg)
}

/// MP2-G: MP2 whose filler inpaints the current binary mask. Defaults to the
/// built-in inpainter when `cfg.filler` is not an inpainter.
pub fn mp2g_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &Mp2Config) -> Result<Mp2Output> {
    let mut cfg = cfg.clone();
    if !cfg.filler.is_inpainter() {
        cfg.filler = FillStrategy::inpaint();
    }
    mp2_attribute(x, oracle, &cfg)
}

pub fn mp2_attribute_with(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &Mp2Config,
) -> Result<Mp2Output> {
    check_target(oracle, x, cfg.target_class)?;
    cfg.gradient.check(oracle)?;
    if !(cfg.stop_prob > 0.0 && cfg.stop_prob < 1.0) {
        return Err(AttribError::Parameter(format!("stop_prob must be in (0, 1), got {}", cfg.stop_prob)));
    }
    if cfg.pixels_per_step == 0 {
        return Err(AttribError::Parameter("pixels_per_step must be >= 1".into()));
    }
    let k = cfg.mask_size;
    let state = Mp2State::new(x, filler, k)?;
    let max_steps = cfg.max_steps.unwrap_or(k * k / 2);
    let mut m = vec![0.0; k * k];
    let mut probabilities = Vec::new();
    let mut selected = Vec::new();
    let mut converged = false;
    loop {
        let step = selected.len();
        let (s, g) = state
            .score_and_grad(&m, oracle, cfg.target_class, cfg.gradient)
            .map_err(|e| e.context(format!("MP2 iteration {step}")))?;
        if !s.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(AttribError::NonFinite { step });
        }
        probabilities.push(s);
        if s <= cfg.stop_prob {
            converged = true;
            break;
        }
        let mut candidates: Vec<usize> = (0..k * k).filter(|&i| m[i] == 0.0).collect();
        if step >= max_steps || candidates.is_empty() {
            break;
        }
        let key = |i: usize| match cfg.selection {
            Mp2Selection::LargestMagnitude => g[i].abs(),
            Mp2Selection::MostNegative => -g[i],
        };
        // Stable sort keeps row-major order among ties.
        candidates.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
        let chosen: Vec<usize> = candidates.into_iter().take(cfg.pixels_per_step).collect();
        for &i in &chosen {
            m[i] = 1.0;
        }
        selected.push(chosen);
    }
    if !converged {
        log::warn!(
            "MP2 did not reach stop probability {} (last {:.4}) after {} iterations",
            cfg.stop_prob,
            probabilities.last().copied().unwrap_or(f64::NAN),
            selected.len()
        );
    }
    let mask = Plane::new(k, k, m)?;
    let provenance = Provenance::new(
        if filler.depends_on_mask() { "mp2g" } else { "mp2" },
        serde_json::json!({
            "mask_size": k,
            "pixels_per_step": cfg.pixels_per_step,
            "stop_prob": cfg.stop_prob,
            "max_steps": max_steps,
            "filler": filler.describe(),
            "selection": cfg.selection,
            "target_class": cfg.target_class,
            "converged": converged,
        }),
    );
    Ok(Mp2Output {
        map: upsampled_map(&state.resize, &mask, provenance)?,
        mask,
        iterations: selected.len(),
        converged,
        probabilities,
        selected,
    })
}

/// Probability at an arbitrary coarse MP2 mask (for brute-force checks).
pub fn mp2_score_at(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    mask_size: usize,
    m: &[f64],
    class: usize,
) -> Result<f64> {
    let state = Mp2State::new(x, filler, mask_size)?;
    oracle.score(&state.perturbed(m)?, class)
}

/// Probability and mask gradient at an arbitrary coarse MP2 mask.
pub fn mp2_score_and_grad_at(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    mask_size: usize,
    m: &[f64],
    class: usize,
) -> Result<(f64, Vec<f64>)> {
    let state = Mp2State::new(x, filler, mask_size)?;
    state.score_and_grad(m, oracle, class, GradientSource::Analytic)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidoConfig {
    pub mask_size: usize,
    pub lr: f64,
    pub reg: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub filler: FillStrategy,
    pub gradient: GradientSource,
    pub target_class: usize,
}

impl Default for FidoConfig {
    fn default() -> Self {
        FidoConfig {
            mask_size: 56,
            lr: 0.05,
            reg: 0.001,
            steps: 300,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            filler: FillStrategy::inpaint(),
            gradient: GradientSource::Analytic,
            target_class: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FidoOutput {
    /// Upsampled keep-mask: high where evidence must be preserved.
    pub map: AttributionMap,
    pub mask: Plane,
    pub trace: Vec<MpStep>,
}

pub fn fido_ca_attribute(x: &Image, oracle: &dyn ClassifierOracle, cfg: &FidoConfig) -> Result<FidoOutput> {
    let filler = runtime_filler(&cfg.filler)?;
    fido_ca_attribute_with(x, oracle, filler.as_ref(), cfg)
}

/// Preservation objective: learn a keep-mask `m` minimizing
/// `−s(x ⊙ Um + f ⊙ (1 − Um)) + reg·‖m‖₁` with Adam, where `f` refills the
/// dropped region. When nothing is kept, the gray filler stands in for an
/// inpainter that has no boundary to work from.
pub fn fido_ca_attribute_with(
    x: &Image,
    oracle: &dyn ClassifierOracle,
    filler: &dyn Filler,
    cfg: &FidoConfig,
) -> Result<FidoOutput> {
    check_target(oracle, x, cfg.target_class)?;
    cfg.gradient.check(oracle)?;
    if cfg.steps == 0 || !(cfg.lr > 0.0) || !(cfg.reg >= 0.0) {
        return Err(AttribError::Parameter("FIDO needs steps >= 1, lr > 0, reg >= 0".into()));
    }
    let k = cfg.mask_size;
    validate_mask_size(k, x)?;
    let resize = BilinearResize::new(k, k, x.height(), x.width())?;
    let (h, w) = (x.height(), x.width());
    let cell = h.max(w).div_ceil(k);
    let shared = if filler.depends_on_mask() { None } else { Some(filler.fill(x, &PerturbMask::ones(h, w))?) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
    let (mut m1, mut m2) = (vec![0.0; k * k], vec![0.0; k * k]);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let keep = resize.apply(&m);
        let drop: Vec<f64> = keep.iter().map(|v| 1.0 - v).collect();
        let hidden = PerturbMask::binary(Plane::new(h, w, drop.iter().map(|v| if *v >= 0.5 { 1.0 } else { 0.0 }).collect())?)?;
        let (f, fg) = match &shared {
            Some(f) => (f.clone(), f.clone()),
            None if hidden.is_all_ones() => {
                let f = fill_or_gray(filler, x, &hidden)?;
                (f.clone(), f)
            }
            None => (filler.fill(x, &hidden)?, gradient_fill(filler, x, &hidden, cell)?),
        };
        let mut xb = vec![0.0; x.data().len()];
        composite_into(x.data(), &drop, f.data(), &mut xb);
        let xb = Image::from_vec_unchecked(h, w, xb);
        let (s, g) = cfg
            .gradient
            .score_and_gradient(oracle, &xb, cfg.target_class)
            .map_err(|e| e.context(format!("FIDO step {step}")))?;
        // ∂x̄/∂(Um) = x − f, the opposite sign of the deletion case.
        let ds_dm: Vec<f64> = pull_back(&resize, &g, x, &fg).into_iter().map(|v| -v).collect();
        let l1: f64 = m.iter().sum();
        let objective = -s + cfg.reg * l1;
        if !objective.is_finite() || ds_dm.iter().any(|v| !v.is_finite()) {
            return Err(AttribError::NonFinite { step });
        }
        trace.push(MpStep {
            step,
            l1,
            tv: 0.0,
            probability: s,
            objective,
            ones: m.iter().filter(|v| **v >= 0.5).count(),
        });
        let t = (step + 1) as i32;
        for i in 0..k * k {
            let gi = -ds_dm[i] + cfg.reg;
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m1[i] / (1.0 - cfg.beta1.powi(t));
            let vhat = m2[i] / (1.0 - cfg.beta2.powi(t));
            m[i] = (m[i] - cfg.lr * mhat / (vhat.sqrt() + cfg.eps)).clamp(0.0, 1.0);
        }
    }
    let mask = Plane::new(k, k, m)?;
    let provenance = Provenance::new(
        "fido",
        serde_json::json!({
            "mask_size": k,
            "lr": cfg.lr,
            "reg": cfg.reg,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "filler": filler.describe(),
            "target_class": cfg.target_class,
        }),
    );
    Ok(FidoOutput { map: upsampled_map(&resize, &mask, provenance)?, mask, trace })
}
