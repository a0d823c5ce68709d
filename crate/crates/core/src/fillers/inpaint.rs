//! Harmonic (Laplace) inpainting: conjugate-gradient warm start, Jacobi polish.

use crate::error::{AttribError, Result};
use crate::imgcore::{Image, PerturbMask, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InpaintReport {
    pub iterations: usize,
    /// Largest per-value change in the last sweep.
    pub max_update: f64,
    pub converged: bool,
}

/// Fills the pixels where `mask >= 0.5` with the discrete harmonic
/// interpolant of the surrounding unmasked pixels.
///
/// Each sweep replaces every masked value by the mean of its in-image
/// 4-neighbours (Neumann condition at the image border). Sweeps start from a
/// conjugate-gradient solve of the same linear system, clipped to the range of
/// the known pixels bordering the hole, and stop once the largest update drops
/// below `tolerance` or after `max_iterations` sweeps. Jacobi updates make the
/// result independent of visiting order, the largest update never grows, and
/// every iterate obeys the discrete maximum principle.
pub fn harmonic_inpaint(
    x: &Image,
    mask: &PerturbMask,
    max_iterations: usize,
    tolerance: f64,
) -> Result<(Image, InpaintReport)> {
    let (h, w) = (x.height(), x.width());
    if (mask.height(), mask.width()) != (h, w) {
        return Err(AttribError::Shape("inpainting mask does not match image".into()));
    }
    let masked: Vec<bool> = mask.plane().data().iter().map(|v| *v >= 0.5).collect();
    let holes: Vec<usize> = (0..h * w).filter(|p| masked[*p]).collect();
    if holes.is_empty() {
        return Ok((x.clone(), InpaintReport { iterations: 0, max_update: 0.0, converged: true }));
    }
    if holes.len() == h * w {
        return Err(AttribError::FullyMasked);
    }

    let neighbours = |p: usize| {
        let (r, c) = (p / w, p % w);
        let mut n = [usize::MAX; 4];
        if r > 0 {
            n[0] = p - w;
        }
        if r + 1 < h {
            n[1] = p + w;
        }
        if c > 0 {
            n[2] = p - 1;
        }
        if c + 1 < w {
            n[3] = p + 1;
        }
        n
    };

    let mut data = x.data().to_vec();
    let nbrs: Vec<[usize; 4]> = holes.iter().map(|&p| neighbours(p)).collect();
    warm_start(&mut data, &masked, &holes, &nbrs);

    let mut next = vec![0.0; holes.len() * CHANNELS];
    let mut report = InpaintReport { iterations: 0, max_update: f64::INFINITY, converged: false };
    while report.iterations < max_iterations {
        let mut max_update: f64 = 0.0;
        for (i, (&p, ns)) in holes.iter().zip(&nbrs).enumerate() {
            let mut acc = [0.0; CHANNELS];
            let mut n = 0.0;
            for &q in ns {
                if q != usize::MAX {
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += data[q * CHANNELS + k];
                    }
                    n += 1.0;
                }
            }
            for k in 0..CHANNELS {
                let v = acc[k] / n;
                max_update = max_update.max((v - data[p * CHANNELS + k]).abs());
                next[i * CHANNELS + k] = v;
            }
        }
        for (i, &p) in holes.iter().enumerate() {
            data[p * CHANNELS..(p + 1) * CHANNELS].copy_from_slice(&next[i * CHANNELS..(i + 1) * CHANNELS]);
        }
        report.iterations += 1;
        report.max_update = max_update;
        if max_update < tolerance {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        log::debug!(
            "harmonic inpainting stopped after {} sweeps, residual {:.3e}",
            report.iterations,
            report.max_update
        );
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((Image::from_vec_unchecked(h, w, data), report))
}

/// Sets the hole values to the clipped conjugate-gradient solution of
/// `deg(p)·u_p − Σ_{hole q~p} u_q = Σ_{known q~p} x_q`, all channels at once.
/// The matrix is symmetric positive definite because every hole component
/// touches a known pixel.
fn warm_start(data: &mut [f64], masked: &[bool], holes: &[usize], nbrs: &[[usize; 4]]) {
    const C: usize = CHANNELS;
    let n = holes.len();
    let mut slot = vec![u32::MAX; masked.len()];
    holes.iter().enumerate().for_each(|(i, &p)| slot[p] = i as u32);
    let mut adj = vec![[u32::MAX; 4]; n];
    let mut degree = vec![0.0; n];
    let mut rhs = vec![0.0; n * C];
    let mut lo = [f64::INFINITY; C];
    let mut hi = [f64::NEG_INFINITY; C];
    for (i, ns) in nbrs.iter().enumerate() {
        let mut holes_seen = 0;
        for &q in ns.iter().filter(|&&q| q != usize::MAX) {
            degree[i] += 1.0;
            if masked[q] {
                adj[i][holes_seen] = slot[q];
                holes_seen += 1;
            } else {
                for k in 0..C {
                    let v = data[q * C + k];
                    rhs[i * C + k] += v;
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
        }
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = [0.0; C];
            for k in 0..C {
                acc[k] = degree[i] * v[i * C + k];
            }
            for &j in adj[i].iter().take_while(|&&j| j != u32::MAX) {
                for k in 0..C {
                    acc[k] -= v[j as usize * C + k];
                }
            }
            out[i * C..(i + 1) * C].copy_from_slice(&acc);
        }
    };
    let dot = |a: &[f64], b: &[f64]| {
        let mut acc = [0.0; C];
        for (x, y) in a.chunks_exact(C).zip(b.chunks_exact(C)) {
            for k in 0..C {
                acc[k] += x[k] * y[k];
            }
        }
        acc
    };

    // Jacobi-preconditioned CG per channel, started from the mid boundary value.
    let mut u: Vec<f64> = (0..n * C).map(|i| (lo[i % C] + hi[i % C]) / 2.0).collect();
    let mut ad = vec![0.0; n * C];
    apply(&u, &mut ad);
    let mut r: Vec<f64> = rhs.iter().zip(&ad).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().enumerate().map(|(i, r)| r / degree[i / C]).collect();
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    let bb = dot(&rhs, &rhs);
    let mut done = [false; C];
    for _ in 0..2 * n + 10 {
        let rr = dot(&r, &r);
        for k in 0..C {
            done[k] |= rr[k] <= 1e-20 * bb[k].max(1.0);
        }
        if done.iter().all(|d| *d) {
            break;
        }
        apply(&dir, &mut ad);
        let dad = dot(&dir, &ad);
        let step: [f64; C] = std::array::from_fn(|k| if done[k] { 0.0 } else { rz[k] / dad[k] });
        for i in 0..n * C {
            u[i] += step[i % C] * dir[i];
            r[i] -= step[i % C] * ad[i];
            z[i] = r[i] / degree[i / C];
        }
        let next = dot(&r, &z);
        let beta: [f64; C] = std::array::from_fn(|k| if done[k] { 0.0 } else { next[k] / rz[k] });
        rz = next;
        for i in 0..n * C {
            dir[i] = z[i] + beta[i % C] * dir[i];
        }
    }
    for (i, &p) in holes.iter().enumerate() {
        for k in 0..C {
            data[p * C + k] = u[i * C + k].clamp(lo[k], hi[k]);
        }
    }
}
