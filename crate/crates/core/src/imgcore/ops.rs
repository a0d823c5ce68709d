use serde::{Deserialize, Serialize};

use super::{Image, PerturbMask, Plane, CHANNELS};
use crate::error::{AttribError, Result};

/// Largest jitter offset, in pixels.
pub const JITTER_MAX: usize = 4;

/// `x ⊙ (1 − m) + f ⊙ m`, the mask broadcast over the color channels.
pub fn composite(x: &Image, m: &PerturbMask, f: &Image) -> Result<Image> {
    if !x.same_dims(f) || x.height() != m.height() || x.width() != m.width() {
        return Err(AttribError::Shape(format!(
            "composite: image {}x{}, mask {}x{}, filler {}x{}",
            x.height(),
            x.width(),
            m.height(),
            m.width(),
            f.height(),
            f.width()
        )));
    }
    let mut out = vec![0.0; x.data().len()];
    composite_into(x.data(), m.plane().data(), f.data(), &mut out);
    Ok(Image::from_vec_unchecked(x.height(), x.width(), out))
}

/// Unchecked compositing on raw interleaved buffers. The mask may hold any
/// real value here (finite-difference probes step outside `[0, 1]`); the
/// result is only clamped when the mask itself is within range.
pub(crate) fn composite_into(x: &[f64], mask: &[f64], f: &[f64], out: &mut [f64]) {
    for (p, &m) in mask.iter().enumerate() {
        let i = p * CHANNELS;
        let keep = 1.0 - m;
        for c in i..i + CHANNELS {
            let v = x[c] * keep + f[c] * m;
            out[c] = if (0.0..=1.0).contains(&m) { v.clamp(0.0, 1.0) } else { v };
        }
    }
}

/// Normalized 1-D Gaussian taps, truncated at `±ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(AttribError::Parameter(format!("blur sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Half-sample symmetric reflection, valid for any offset.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable convolution of `channels` interleaved planes with reflect padding.
fn convolve_separable(data: &[f64], h: usize, w: usize, channels: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..channels {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let cc = reflect(c as isize + k as isize - radius, w);
                    acc += t * data[(r * w + cc) * channels + ch];
                }
                tmp[(r * w + c) * channels + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..channels {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let rr = reflect(r as isize + k as isize - radius, h);
                    acc += t * tmp[(rr * w + c) * channels + ch];
                }
                out[(r * w + c) * channels + ch] = acc;
            }
        }
    }
    out
}

/// Gaussian blur with reflect padding, applied per channel.
pub fn gaussian_blur(x: &Image, sigma: f64) -> Result<Image> {
    let taps = gaussian_kernel(sigma)?;
    let mut out = convolve_separable(x.data(), x.height(), x.width(), CHANNELS, &taps);
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Image::from_vec_unchecked(x.height(), x.width(), out))
}

pub fn gaussian_blur_plane(p: &Plane, sigma: f64) -> Result<Plane> {
    let taps = gaussian_kernel(sigma)?;
    let out = convolve_separable(p.data(), p.height(), p.width(), 1, &taps);
    Plane::new(p.height(), p.width(), out)
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps_1d(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, frac: pos - lo as f64 }
        })
        .collect()
}

/// A bilinear resampling operator (align-corners-false, clamped sampling)
/// between fixed sizes, with its adjoint for back-propagating gradients.
#[derive(Clone, Debug)]
pub struct BilinearResize {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl BilinearResize {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 {
            return Err(AttribError::Shape("cannot resize an empty field".into()));
        }
        if out_h == 0 || out_w == 0 {
            return Err(AttribError::Shape("resize target must be at least 1x1".into()));
        }
        Ok(BilinearResize {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: taps_1d(in_h, out_h),
            cols: taps_1d(in_w, out_w),
        })
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Forward resampling of a row-major `in_h × in_w` field.
    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        assert_eq!(src.len(), self.in_h * self.in_w);
        let mut tmp = vec![0.0; self.in_h * self.out_w];
        for r in 0..self.in_h {
            let row = &src[r * self.in_w..(r + 1) * self.in_w];
            for (c, t) in self.cols.iter().enumerate() {
                tmp[r * self.out_w + c] = row[t.lo] * (1.0 - t.frac) + row[t.hi] * t.frac;
            }
        }
        let mut out = vec![0.0; self.out_h * self.out_w];
        for (r, t) in self.rows.iter().enumerate() {
            for c in 0..self.out_w {
                out[r * self.out_w + c] =
                    tmp[t.lo * self.out_w + c] * (1.0 - t.frac) + tmp[t.hi * self.out_w + c] * t.frac;
            }
        }
        out
    }

    /// Transpose application: maps an `out_h × out_w` field back to input size.
    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.out_h * self.out_w);
        let mut tmp = vec![0.0; self.in_h * self.out_w];
        for (r, t) in self.rows.iter().enumerate() {
            for c in 0..self.out_w {
                let v = y[r * self.out_w + c];
                tmp[t.lo * self.out_w + c] += v * (1.0 - t.frac);
                tmp[t.hi * self.out_w + c] += v * t.frac;
            }
        }
        let mut out = vec![0.0; self.in_h * self.in_w];
        for r in 0..self.in_h {
            for (c, t) in self.cols.iter().enumerate() {
                let v = tmp[r * self.out_w + c];
                out[r * self.in_w + t.lo] += v * (1.0 - t.frac);
                out[r * self.in_w + t.hi] += v * t.frac;
            }
        }
        out
    }

    pub fn apply_plane(&self, src: &Plane) -> Result<Plane> {
        if (src.height(), src.width()) != (self.in_h, self.in_w) {
            return Err(AttribError::Shape(format!(
                "resize expects {}x{}, got {}x{}",
                self.in_h,
                self.in_w,
                src.height(),
                src.width()
            )));
        }
        Plane::new(self.out_h, self.out_w, self.apply(src.data()))
    }
}

/// Bilinear resize of a 2-D field.
pub fn bilinear_resize(src: &Plane, out_h: usize, out_w: usize) -> Result<Plane> {
    BilinearResize::new(src.height(), src.width(), out_h, out_w)?.apply_plane(src)
}

/// Bilinear resize of every channel of an image.
pub fn resize_image(x: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let op = BilinearResize::new(x.height(), x.width(), out_h, out_w)?;
    let planes: Vec<Plane> = (0..CHANNELS)
        .map(|c| op.apply_plane(&x.channel(c)))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(out_h * out_w * CHANNELS);
    for i in 0..out_h * out_w {
        for p in &planes {
            data.push(p.data()[i].clamp(0.0, 1.0));
        }
    }
    Ok(Image::from_vec_unchecked(out_h, out_w, data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterDirection {
    Horizontal,
    Vertical,
}

/// Translates the image right (horizontal) or down (vertical) by `tau`
/// pixels, replicating the edge into the vacated band.
pub fn jitter(x: &Image, tau: usize, direction: JitterDirection) -> Result<Image> {
    if tau > JITTER_MAX {
        return Err(AttribError::Parameter(format!(
            "jitter offset {tau} outside 0..={JITTER_MAX}"
        )));
    }
    let mut out = vec![0.0; x.data().len()];
    jitter_into(x.data(), x.height(), x.width(), tau, direction, &mut out);
    Ok(Image::from_vec_unchecked(x.height(), x.width(), out))
}

#[inline]
fn jitter_source(r: usize, c: usize, tau: usize, direction: JitterDirection) -> (usize, usize) {
    match direction {
        JitterDirection::Horizontal => (r, c.saturating_sub(tau)),
        JitterDirection::Vertical => (r.saturating_sub(tau), c),
    }
}

pub(crate) fn jitter_into(
    src: &[f64],
    h: usize,
    w: usize,
    tau: usize,
    direction: JitterDirection,
    out: &mut [f64],
) {
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = jitter_source(r, c, tau, direction);
            let (o, s) = ((r * w + c) * CHANNELS, (sr * w + sc) * CHANNELS);
            out[o..o + CHANNELS].copy_from_slice(&src[s..s + CHANNELS]);
        }
    }
}

/// Accumulates the adjoint of [`jitter_into`] into `grad_in`.
pub(crate) fn jitter_adjoint_into(
    grad_out: &[f64],
    h: usize,
    w: usize,
    tau: usize,
    direction: JitterDirection,
    grad_in: &mut [f64],
) {
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = jitter_source(r, c, tau, direction);
            let (o, s) = ((r * w + c) * CHANNELS, (sr * w + sc) * CHANNELS);
            for k in 0..CHANNELS {
                grad_in[s + k] += grad_out[o + k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn composite_identity_and_replacement() {
        let x = random_image(5, 4, 1);
        let f = random_image(5, 4, 2);
        assert_eq!(composite(&x, &PerturbMask::zeros(5, 4), &f).unwrap(), x);
        assert_eq!(composite(&x, &PerturbMask::ones(5, 4), &f).unwrap(), f);
    }

    #[test]
    fn composite_single_pixel_matches_loop() {
        let x = random_image(6, 6, 3);
        let f = random_image(6, 6, 4);
        let p = 6 * 2 + 3;
        let out = composite(&x, &PerturbMask::from_pixels(6, 6, [p]), &f).unwrap();
        for q in 0..36 {
            for ch in 0..3 {
                let expect = if q == p { f.data()[q * 3 + ch] } else { x.data()[q * 3 + ch] };
                assert_eq!(out.data()[q * 3 + ch], expect);
            }
        }
    }

    #[test]
    fn composite_shape_error() {
        let x = random_image(4, 4, 1);
        let f = random_image(4, 5, 2);
        assert!(matches!(
            composite(&x, &PerturbMask::zeros(4, 4), &f),
            Err(AttribError::Shape(_))
        ));
    }

    #[test]
    fn blur_rejects_bad_sigma_and_fixes_constants() {
        let x = Image::filled(9, 7, [0.2, 0.5, 0.9]);
        assert!(gaussian_blur(&x, 0.0).is_err());
        assert!(gaussian_blur(&x, -1.0).is_err());
        let b = gaussian_blur(&x, 10.0).unwrap();
        for (a, e) in b.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    /// Dense 2-D convolution with the outer-product kernel, indices reflected
    /// independently of the separable code path.
    fn dense_blur(x: &Image, sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil() as isize;
        let g: Vec<f64> = (-radius..=radius)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        let (h, w) = (x.height() as isize, x.width() as isize);
        let refl = |i: isize, n: isize| -> isize {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - i - 1;
                } else {
                    return i;
                }
            }
        };
        let mut out = vec![0.0; x.data().len()];
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for dr in -radius..=radius {
                        for dc in -radius..=radius {
                            let rr = refl(r + dr, h);
                            let cc = refl(c + dc, w);
                            let wgt = g[(dr + radius) as usize] * g[(dc + radius) as usize] / (total * total);
                            acc += wgt * x.data()[((rr * w + cc) * 3) as usize + ch];
                        }
                    }
                    out[((r * w + c) * 3) as usize + ch] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn blur_matches_dense_convolution() {
        for (seed, sigma) in [(1u64, 1.0), (2, 2.5), (3, 10.0)] {
            let x = random_image(16, 16, seed);
            let fast = gaussian_blur(&x, sigma).unwrap();
            let dense = dense_blur(&x, sigma);
            let diff = fast
                .data()
                .iter()
                .zip(&dense)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "sigma {sigma}: diff {diff}");
        }
    }

    #[test]
    fn blur_preserves_mean_on_interior_dominant_image() {
        // A centered blob far from the borders: reflection never kicks in.
        let x = Image::from_fn(48, 48, |r, c| {
            let d2 = (r as f64 - 23.5).powi(2) + (c as f64 - 23.5).powi(2);
            let v = (-d2 / 18.0).exp();
            [v, v, v]
        });
        let b = gaussian_blur(&x, 2.0).unwrap();
        assert!((b.mean() - x.mean()).abs() < 1e-6);
    }

    #[test]
    fn default_blur_on_full_size_image() {
        let x = random_image(224, 224, 9);
        let b = gaussian_blur(&x, 10.0).unwrap();
        assert_eq!((b.height(), b.width()), (224, 224));
        assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn resize_constant_and_identity() {
        let p = Plane::filled(28, 28, 0.37);
        let up = bilinear_resize(&p, 224, 224).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        let q = Plane::from_fn(5, 7, |r, c| (r * 7 + c) as f64 * 0.1 - 1.0);
        assert_eq!(bilinear_resize(&q, 5, 7).unwrap(), q);
        assert!(bilinear_resize(&Plane::zeros(0, 3), 2, 2).is_err());
        assert!(bilinear_resize(&q, 0, 2).is_err());
    }

    #[test]
    fn resize_adjoint_matches_dense_matrix() {
        let op = BilinearResize::new(4, 4, 7, 7).unwrap();
        // Dense matrix by probing with unit vectors.
        let mut dense = vec![vec![0.0; 16]; 49];
        for j in 0..16 {
            let mut e = vec![0.0; 16];
            e[j] = 1.0;
            for (i, v) in op.apply(&e).into_iter().enumerate() {
                dense[i][j] = v;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let uc = op.apply(&c);
            let uty = op.adjoint(&y);
            let lhs: f64 = uc.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = c.iter().zip(&uty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9);
            // The adjoint is the dense transpose.
            for j in 0..16 {
                let col: f64 = (0..49).map(|i| dense[i][j] * y[i]).sum();
                assert!((col - uty[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_shifts_with_edge_replication() {
        let x = Image::from_fn(4, 4, |_, c| [c as f64 / 3.0, 0.0, 0.0]);
        let j = jitter(&x, 2, JitterDirection::Horizontal).unwrap();
        for r in 0..4 {
            // Source column for output column c is max(c - 2, 0).
            let cols: Vec<f64> = (0..4).map(|c| j.pixel(r, c)[0]).collect();
            assert_eq!(cols, vec![0.0, 0.0, 0.0, 1.0 / 3.0]);
        }
        assert_eq!(jitter(&x, 0, JitterDirection::Vertical).unwrap(), x);
        assert!(jitter(&x, 5, JitterDirection::Vertical).is_err());
    }

    #[test]
    fn jitter_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w) = (5, 6);
        let n = h * w * 3;
        for dir in [JitterDirection::Horizontal, JitterDirection::Vertical] {
            for tau in 0..=JITTER_MAX {
                let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
                let b: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
                let mut ja = vec![0.0; n];
                jitter_into(&a, h, w, tau, dir, &mut ja);
                let mut jtb = vec![0.0; n];
                jitter_adjoint_into(&b, h, w, tau, dir, &mut jtb);
                let lhs: f64 = ja.iter().zip(&b).map(|(p, q)| p * q).sum();
                let rhs: f64 = a.iter().zip(&jtb).map(|(p, q)| p * q).sum();
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn binary_composite_is_idempotent(seed in 0u64..1000, bits in proptest::collection::vec(proptest::bool::ANY, 20)) {
            let x = random_image(4, 5, seed);
            let f = random_image(4, 5, seed + 1);
            let m = PerturbMask::from_pixels(4, 5, bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i));
            let once = composite(&x, &m, &f).unwrap();
            let twice = composite(&once, &m, &f).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }

        #[test]
        fn blur_and_resize_commute_with_affine_maps_on_constants(v in 0.0f64..1.0, a in 0.1f64..0.9, b in 0.0f64..0.1) {
            let x = Image::filled(8, 8, [v, v, v]);
            let y = Image::filled(8, 8, [a * v + b; 3]);
            let bx = gaussian_blur(&x, 1.5).unwrap();
            let by = gaussian_blur(&y, 1.5).unwrap();
            for (p, q) in bx.data().iter().zip(by.data()) {
                proptest::prop_assert!((a * p + b - q).abs() < 1e-12);
            }
            let px = bilinear_resize(&x.channel(0), 13, 5).unwrap();
            let py = bilinear_resize(&y.channel(0), 13, 5).unwrap();
            for (p, q) in px.data().iter().zip(py.data()) {
                proptest::prop_assert!((a * p + b - q).abs() < 1e-12);
            }
        }
    }
}
