//! A small convolutional classifier with a hand-written backward pass.
//!
//! Activations are stored channel-major (`C×H×W`). Weights live in `f64` but
//! are kept exactly representable as `f32`, so a saved and reloaded model
//! scores bit-identically.
//!
//! Model file (`TCNN`, little-endian):
//!
//! ```text
//! "TCNN" | version u32 | input_h u32 | input_w u32 | input_c u32 | classes u32 | layers u32
//! per layer: tag u8, then
//!   1 conv3x3: in u32, out u32, padding u8 (0 valid, 1 same), out·in·9 f32 weights, out f32 bias
//!   2 relu, 3 avgpool2x2, 5 softmax: no payload
//!   4 dense:   in u32, out u32, out·in f32 weights, out f32 bias
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax, ClassifierOracle};
use crate::error::{AttribError, Result};
use crate::imgcore::{Image, CHANNELS};

const MAGIC: &[u8; 4] = b"TCNN";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        padding: Padding,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    AvgPool2,
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Shape {
    c: usize,
    h: usize,
    w: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Weight and bias gradients of one layer.
#[derive(Clone, Debug, Default)]
pub(crate) struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn output_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Layer::Conv3x3 { in_ch, out_ch, padding, weights, bias } => {
                if *in_ch != s.c || weights.len() != in_ch * out_ch * 9 || bias.len() != *out_ch {
                    return Err(AttribError::Shape(format!("conv layer expects {in_ch} channels, got {}", s.c)));
                }
                let pad = if *padding == Padding::Same { 1 } else { 0 };
                if s.h + 2 * pad < 3 || s.w + 2 * pad < 3 {
                    return Err(AttribError::Shape("conv input smaller than kernel".into()));
                }
                Ok(Shape { c: *out_ch, h: s.h + 2 * pad - 2, w: s.w + 2 * pad - 2 })
            }
            Layer::Relu | Layer::Softmax => Ok(s),
            Layer::AvgPool2 => {
                if s.h < 2 || s.w < 2 {
                    return Err(AttribError::Shape("pooling input smaller than 2x2".into()));
                }
                Ok(Shape { c: s.c, h: s.h / 2, w: s.w / 2 })
            }
            Layer::Dense { inputs, outputs, weights, bias } => {
                if *inputs != s.len() || weights.len() != inputs * outputs || bias.len() != *outputs {
                    return Err(AttribError::Shape(format!("dense layer expects {inputs} inputs, got {}", s.len())));
                }
                Ok(Shape { c: *outputs, h: 1, w: 1 })
            }
        }
    }

    fn forward(&self, s: Shape, input: &[f64]) -> Vec<f64> {
        match self {
            Layer::Conv3x3 { in_ch, out_ch, padding, weights, bias } => {
                let pad = if *padding == Padding::Same { 1 } else { 0 };
                let (oh, ow) = (s.h + 2 * pad - 2, s.w + 2 * pad - 2);
                let mut out = vec![0.0; out_ch * oh * ow];
                for oc in 0..*out_ch {
                    let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bias[oc]);
                    for ic in 0..*in_ch {
                        let src = &input[ic * s.h * s.w..(ic + 1) * s.h * s.w];
                        for ky in 0..3 {
                            let (y0, y1) = valid_range(ky, pad, s.h, oh);
                            for kx in 0..3 {
                                let wv = weights[((oc * in_ch + ic) * 3 + ky) * 3 + kx];
                                let (x0, x1) = valid_range(kx, pad, s.w, ow);
                                for y in y0..y1 {
                                    let iy = y + ky - pad;
                                    let srow = &src[iy * s.w + x0 + kx - pad..iy * s.w + x1 + kx - pad];
                                    let orow = &mut plane[y * ow + x0..y * ow + x1];
                                    for (o, i) in orow.iter_mut().zip(srow) {
                                        *o += wv * i;
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            Layer::Relu => input.iter().map(|v| v.max(0.0)).collect(),
            Layer::AvgPool2 => {
                let (oh, ow) = (s.h / 2, s.w / 2);
                let mut out = vec![0.0; s.c * oh * ow];
                for c in 0..s.c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let base = c * s.h * s.w;
                            let a = input[base + 2 * y * s.w + 2 * x];
                            let b = input[base + 2 * y * s.w + 2 * x + 1];
                            let d = input[base + (2 * y + 1) * s.w + 2 * x];
                            let e = input[base + (2 * y + 1) * s.w + 2 * x + 1];
                            out[(c * oh + y) * ow + x] = 0.25 * (a + b + d + e);
                        }
                    }
                }
                out
            }
            Layer::Dense { inputs, outputs, weights, bias } => (0..*outputs)
                .map(|o| {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    bias[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect(),
            Layer::Softmax => softmax(input),
        }
    }

    /// Back-propagates `grad_out` to the layer input, accumulating parameter
    /// gradients when `params` is given. Softmax is handled by the caller.
    fn backward(&self, s: Shape, input: &[f64], grad_out: &[f64], params: Option<&mut ParamGrad>) -> Vec<f64> {
        match self {
            Layer::Conv3x3 { in_ch, out_ch, padding, weights, .. } => {
                let pad = if *padding == Padding::Same { 1 } else { 0 };
                let (oh, ow) = (s.h + 2 * pad - 2, s.w + 2 * pad - 2);
                let mut grad_in = vec![0.0; input.len()];
                let mut params = params;
                if let Some(p) = params.as_deref_mut() {
                    for oc in 0..*out_ch {
                        p.bias[oc] += grad_out[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
                for oc in 0..*out_ch {
                    let g = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
                    for ic in 0..*in_ch {
                        let src = &input[ic * s.h * s.w..(ic + 1) * s.h * s.w];
                        let dst = &mut grad_in[ic * s.h * s.w..(ic + 1) * s.h * s.w];
                        for ky in 0..3 {
                            let (y0, y1) = valid_range(ky, pad, s.h, oh);
                            for kx in 0..3 {
                                let widx = ((oc * in_ch + ic) * 3 + ky) * 3 + kx;
                                let wv = weights[widx];
                                let (x0, x1) = valid_range(kx, pad, s.w, ow);
                                let mut wgrad = 0.0;
                                for y in y0..y1 {
                                    let iy = y + ky - pad;
                                    let start = iy * s.w + x0 + kx - pad;
                                    let grow = &g[y * ow + x0..y * ow + x1];
                                    let drow = &mut dst[start..start + grow.len()];
                                    for (d, gv) in drow.iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                    if params.is_some() {
                                        let srow = &src[start..start + grow.len()];
                                        wgrad += srow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                                    }
                                }
                                if let Some(p) = params.as_deref_mut() {
                                    p.weights[widx] += wgrad;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                .collect(),
            Layer::AvgPool2 => {
                let (oh, ow) = (s.h / 2, s.w / 2);
                let mut grad_in = vec![0.0; input.len()];
                for c in 0..s.c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let g = 0.25 * grad_out[(c * oh + y) * ow + x];
                            let base = c * s.h * s.w;
                            grad_in[base + 2 * y * s.w + 2 * x] += g;
                            grad_in[base + 2 * y * s.w + 2 * x + 1] += g;
                            grad_in[base + (2 * y + 1) * s.w + 2 * x] += g;
                            grad_in[base + (2 * y + 1) * s.w + 2 * x + 1] += g;
                        }
                    }
                }
                grad_in
            }
            Layer::Dense { inputs, outputs, weights, .. } => {
                let mut grad_in = vec![0.0; *inputs];
                let mut params = params;
                for o in 0..*outputs {
                    let g = grad_out[o];
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    for (d, w) in grad_in.iter_mut().zip(row) {
                        *d += w * g;
                    }
                    if let Some(p) = params.as_deref_mut() {
                        p.bias[o] += g;
                        for (pw, v) in p.weights[o * inputs..(o + 1) * inputs].iter_mut().zip(input) {
                            *pw += v * g;
                        }
                    }
                }
                grad_in
            }
            Layer::Softmax => unreachable!("softmax backward is folded into the loss"),
        }
    }

    pub(crate) fn param_grad(&self) -> Option<ParamGrad> {
        match self {
            Layer::Conv3x3 { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some(ParamGrad {
                weights: vec![0.0; weights.len()],
                bias: vec![0.0; bias.len()],
            }),
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv3x3 { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Layer::Conv3x3 { .. } => 1,
            Layer::Relu => 2,
            Layer::AvgPool2 => 3,
            Layer::Dense { .. } => 4,
            Layer::Softmax => 5,
        }
    }
}

/// Output rows `y` for which `y + k - pad` is a valid input row.
#[inline]
fn valid_range(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (in_len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

/// Conv → ReLU → pool stacks followed by a dense softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnn {
    input_h: usize,
    input_w: usize,
    num_classes: usize,
    layers: Vec<Layer>,
}

/// Layer activations of one forward pass: `acts[i]` is the input of layer `i`.
pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
    pub shapes: Vec<Shape>,
}

impl TinyCnn {
    /// Builds and validates a network from explicit layers. The last layer
    /// must be [`Layer::Softmax`].
    pub fn from_layers(input_h: usize, input_w: usize, layers: Vec<Layer>) -> Result<Self> {
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(AttribError::Shape("network must end with a softmax layer".into()));
        }
        if layers[..layers.len() - 1].iter().any(|l| matches!(l, Layer::Softmax)) {
            return Err(AttribError::Shape("softmax is only allowed as the last layer".into()));
        }
        let mut s = Shape { c: CHANNELS, h: input_h, w: input_w };
        for l in &layers {
            s = l.output_shape(s)?;
        }
        if s.h != 1 || s.w != 1 || s.c < 2 {
            return Err(AttribError::Shape("network must produce at least two class scores".into()));
        }
        Ok(TinyCnn { input_h, input_w, num_classes: s.c, layers })
    }

    /// The default desk-scale architecture: two 3×3 same-padded conv layers
    /// (6 and 8 channels) each followed by ReLU and 2×2 average pooling, then
    /// a dense softmax head. He-uniform initialization from `seed`.
    pub fn new(input_h: usize, input_w: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if input_h % 4 != 0 || input_w % 4 != 0 || input_h == 0 || input_w == 0 {
            return Err(AttribError::Shape("default network needs input sides divisible by 4".into()));
        }
        if num_classes < 2 {
            return Err(AttribError::Parameter("need at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |in_ch: usize, out_ch: usize| {
            let bound = (6.0 / (in_ch * 9) as f64).sqrt();
            Layer::Conv3x3 {
                in_ch,
                out_ch,
                padding: Padding::Same,
                weights: (0..in_ch * out_ch * 9).map(|_| quantize(rng.gen_range(-bound..bound))).collect(),
                bias: vec![0.0; out_ch],
            }
        };
        let c1 = conv(CHANNELS, 6);
        let c2 = conv(6, 8);
        let inputs = 8 * (input_h / 4) * (input_w / 4);
        let bound = (6.0 / inputs as f64).sqrt();
        let dense = Layer::Dense {
            inputs,
            outputs: num_classes,
            weights: (0..inputs * num_classes).map(|_| quantize(rng.gen_range(-bound..bound))).collect(),
            bias: vec![0.0; num_classes],
        };
        Self::from_layers(
            input_h,
            input_w,
            vec![c1, Layer::Relu, Layer::AvgPool2, c2, Layer::Relu, Layer::AvgPool2, dense, Layer::Softmax],
        )
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_h, self.input_w)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Rounds every parameter to the nearest `f32`.
    pub(crate) fn quantize_params(&mut self) {
        for l in &mut self.layers {
            if let Some((w, b)) = l.params_mut() {
                w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = quantize(*v));
            }
        }
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        if (x.height(), x.width()) != (self.input_h, self.input_w) {
            return Err(AttribError::Shape(format!(
                "model expects {}x{} input, got {}x{}",
                self.input_h,
                self.input_w,
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Runs every layer except the final softmax, keeping activations.
    pub(crate) fn trace(&self, x: &Image) -> Result<Trace> {
        self.check_input(x)?;
        let (h, w) = (x.height(), x.width());
        let mut chw = vec![0.0; h * w * CHANNELS];
        for (p, px) in x.data().chunks_exact(CHANNELS).enumerate() {
            for (c, v) in px.iter().enumerate() {
                chw[c * h * w + p] = *v;
            }
        }
        let mut shape = Shape { c: CHANNELS, h, w };
        let body = &self.layers[..self.layers.len() - 1];
        let mut acts = Vec::with_capacity(body.len() + 1);
        let mut shapes = Vec::with_capacity(body.len() + 1);
        acts.push(chw);
        shapes.push(shape);
        for l in body {
            let out = l.forward(shape, acts.last().unwrap());
            shape = l.output_shape(shape)?;
            acts.push(out);
            shapes.push(shape);
        }
        Ok(Trace { acts, shapes })
    }

    /// Back-propagates a gradient w.r.t. the logits down to the input (HWC
    /// layout), optionally accumulating parameter gradients.
    pub(crate) fn backprop(&self, trace: &Trace, grad_logits: Vec<f64>, mut params: Option<&mut [Option<ParamGrad>]>) -> Vec<f64> {
        let body = &self.layers[..self.layers.len() - 1];
        let mut grad = grad_logits;
        for (i, l) in body.iter().enumerate().rev() {
            let pg = params.as_deref_mut().and_then(|p| p[i].as_mut());
            grad = l.backward(trace.shapes[i], &trace.acts[i], &grad, pg);
        }
        let (h, w) = (self.input_h, self.input_w);
        let mut hwc = vec![0.0; h * w * CHANNELS];
        for c in 0..CHANNELS {
            for p in 0..h * w {
                hwc[p * CHANNELS + c] = grad[c * h * w + p];
            }
        }
        hwc
    }

    pub fn logits(&self, x: &Image) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.acts.pop().unwrap())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.input_h as u32, self.input_w as u32, CHANNELS as u32, self.num_classes as u32, self.layers.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let put_f32s = |out: &mut Vec<u8>, vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        };
        for l in &self.layers {
            out.push(l.tag());
            match l {
                Layer::Conv3x3 { in_ch, out_ch, padding, weights, bias } => {
                    out.extend_from_slice(&(*in_ch as u32).to_le_bytes());
                    out.extend_from_slice(&(*out_ch as u32).to_le_bytes());
                    out.push(if *padding == Padding::Same { 1 } else { 0 });
                    put_f32s(&mut out, weights);
                    put_f32s(&mut out, bias);
                }
                Layer::Dense { inputs, outputs, weights, bias } => {
                    out.extend_from_slice(&(*inputs as u32).to_le_bytes());
                    out.extend_from_slice(&(*outputs as u32).to_le_bytes());
                    put_f32s(&mut out, weights);
                    put_f32s(&mut out, bias);
                }
                Layer::Relu | Layer::AvgPool2 | Layer::Softmax => {}
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(AttribError::format(path, "missing TCNN magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(AttribError::format(path, format!("unsupported model version {version}")));
        }
        let (h, w, c, classes, count) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if c as usize != CHANNELS {
            return Err(AttribError::format(path, format!("model expects {c} channels")));
        }
        let mut layers = Vec::with_capacity(count.min(64) as usize);
        for _ in 0..count {
            let tag = r.take(1)?[0];
            let layer = match tag {
                1 => {
                    let (in_ch, out_ch) = (r.u32()? as usize, r.u32()? as usize);
                    let padding = match r.take(1)?[0] {
                        0 => Padding::Valid,
                        1 => Padding::Same,
                        p => return Err(AttribError::format(path, format!("bad padding tag {p}"))),
                    };
                    let weights = r.f32s(in_ch.checked_mul(out_ch).and_then(|n| n.checked_mul(9)))?;
                    let bias = r.f32s(Some(out_ch))?;
                    Layer::Conv3x3 { in_ch, out_ch, padding, weights, bias }
                }
                2 => Layer::Relu,
                3 => Layer::AvgPool2,
                4 => {
                    let (inputs, outputs) = (r.u32()? as usize, r.u32()? as usize);
                    let weights = r.f32s(inputs.checked_mul(outputs))?;
                    let bias = r.f32s(Some(outputs))?;
                    Layer::Dense { inputs, outputs, weights, bias }
                }
                5 => Layer::Softmax,
                t => return Err(AttribError::format(path, format!("unknown layer tag {t}"))),
            };
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(AttribError::format(path, "trailing bytes after last layer"));
        }
        let model = TinyCnn::from_layers(h as usize, w as usize, layers)
            .map_err(|e| AttribError::format(path, format!("inconsistent layer shapes: {e}")))?;
        if model.num_classes != classes as usize {
            return Err(AttribError::format(path, "class count does not match the dense head"));
        }
        Ok(model)
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(AttribError::format(self.path, "truncated model file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: Option<usize>) -> Result<Vec<f64>> {
        let n = n.ok_or_else(|| AttribError::format(self.path, "layer size overflow"))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| AttribError::format(self.path, "layer size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn save_model(model: &TinyCnn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| AttribError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TinyCnn> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AttribError::io(path, e))?;
    TinyCnn::from_bytes(&bytes, path)
}

impl ClassifierOracle for TinyCnn {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn input_gradient(&self, x: &Image, class: usize) -> Result<Vec<f64>> {
        Ok(self.score_and_gradient(x, class)?.1)
    }

    fn score_and_gradient(&self, x: &Image, class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_class(class)?;
        let trace = self.trace(x)?;
        let p = softmax(trace.acts.last().unwrap());
        // d p_k / d z_j = p_k (δ_kj − p_j)
        let grad_logits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, pj)| p[class] * (if j == class { 1.0 } else { 0.0 } - pj))
            .collect();
        Ok((p[class], self.backprop(&trace, grad_logits, None)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_diff_at, FD_STEP};

    fn test_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn forward_is_a_probability_vector() {
        let m = TinyCnn::new(16, 16, 3, 0).unwrap();
        let p = m.score_all(&test_image(16, 16, 1)).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.score_all(&test_image(8, 16, 1)).is_err());
        assert!(m.score(&test_image(16, 16, 1), 3).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let m = TinyCnn::new(16, 16, 3, 7).unwrap();
        let x = test_image(16, 16, 2);
        let g = m.input_gradient(&x, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<usize> = (0..60).map(|_| rng.gen_range(0..g.len())).collect();
        let fd = finite_diff_at(&m, &x, 1, FD_STEP, &coords).unwrap();
        for (i, n) in coords.iter().zip(&fd) {
            let a = g[*i];
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
            assert!(err < 1e-4, "coord {i}: analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn valid_padding_shapes() {
        let layers = vec![
            Layer::Conv3x3 { in_ch: 3, out_ch: 2, padding: Padding::Valid, weights: vec![0.1; 54], bias: vec![0.0; 2] },
            Layer::Relu,
            Layer::Dense { inputs: 2 * 4 * 4, outputs: 2, weights: vec![0.01; 64], bias: vec![0.0, 0.1] },
            Layer::Softmax,
        ];
        let m = TinyCnn::from_layers(6, 6, layers).unwrap();
        let x = test_image(6, 6, 4);
        let g = m.input_gradient(&x, 0).unwrap();
        let coords: Vec<usize> = (0..x.data().len()).collect();
        let fd = finite_diff_at(&m, &x, 0, FD_STEP, &coords).unwrap();
        for (a, n) in g.iter().zip(&fd) {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-7));
        }
    }

    #[test]
    fn inconsistent_layers_rejected() {
        let layers = vec![Layer::Dense { inputs: 5, outputs: 2, weights: vec![0.0; 10], bias: vec![0.0; 2] }, Layer::Softmax];
        assert!(TinyCnn::from_layers(4, 4, layers).is_err());
        assert!(TinyCnn::from_layers(4, 4, vec![Layer::Relu]).is_err());
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let m = TinyCnn::new(8, 8, 2, 11).unwrap();
        let bytes = m.to_bytes();
        let back = TinyCnn::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, m);
        let x = test_image(8, 8, 5);
        assert_eq!(m.score_all(&x).unwrap(), back.score_all(&x).unwrap());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TinyCnn::from_bytes(&bad, Path::new("m")).is_err());
        assert!(TinyCnn::from_bytes(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(TinyCnn::from_bytes(&extra, Path::new("m")).is_err());
    }
}
