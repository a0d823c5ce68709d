//! Adapter for an external inpainting program.
//!
//! Contract: `<command> <image.png> <mask.png> <out.png>`, mask 255 = inpaint,
//! exit status 0 on success.

use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{AttribError, Result};
use crate::imgcore::{composite, read_image, resize_image, write_image, write_mask_png, Image, PerturbMask, Plane};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalInpainter {
    /// Program and leading arguments, split on whitespace.
    pub command: String,
    pub timeout_secs: f64,
    /// When set, inputs are bilinearly resized to this `(height, width)`
    /// before the call and the result resized back.
    pub native_size: Option<(usize, usize)>,
    /// Concurrent invocations allowed across the process.
    pub max_parallel: usize,
}

impl Default for ExternalInpainter {
    fn default() -> Self {
        ExternalInpainter { command: String::new(), timeout_secs: 60.0, native_size: None, max_parallel: 1 }
    }
}

struct Gate {
    active: Mutex<usize>,
    freed: Condvar,
}

static GATE: Gate = Gate { active: Mutex::new(0), freed: Condvar::new() };

struct Permit;

impl Permit {
    fn acquire(limit: usize) -> Permit {
        let mut active = GATE.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= limit.max(1) {
            active = GATE.freed.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        Permit
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut active = GATE.active.lock().unwrap_or_else(|p| p.into_inner());
        *active -= 1;
        GATE.freed.notify_one();
    }
}

impl ExternalInpainter {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalInpainter { command: command.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.split_whitespace().next().is_none() {
            return Err(AttribError::Parameter("external inpainter command is empty".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(AttribError::Parameter("external inpainter timeout must be > 0".into()));
        }
        if matches!(self.native_size, Some((0, _)) | Some((_, 0))) {
            return Err(AttribError::Parameter("native size must be non-zero".into()));
        }
        Ok(())
    }

    /// Runs the tool on `x` with binary mask `m` and returns `x` with the
    /// masked pixels replaced by the tool's output.
    pub fn inpaint(&self, x: &Image, m: &PerturbMask) -> Result<Image> {
        self.validate()?;
        let (h, w) = (x.height(), x.width());
        let (nh, nw) = self.native_size.unwrap_or((h, w));
        let dir = crate::scratch_dir()?;
        let img_path = dir.path().join("image.png");
        let mask_path = dir.path().join("mask.png");
        let out_path = dir.path().join("out.png");

        let (img_in, mask_in) = if (nh, nw) != (h, w) {
            let mask = crate::imgcore::bilinear_resize(m.plane(), nh, nw)?;
            (resize_image(x, nh, nw)?, PerturbMask::continuous(mask)?.binarized(0.5))
        } else {
            (x.clone(), m.clone())
        };
        write_image(&img_in, &img_path)?;
        write_mask_png(&mask_in, &mask_path)?;

        let mut words = self.command.split_whitespace();
        let program = words.next().expect("validated");
        {
            let _permit = Permit::acquire(self.max_parallel);
            let mut child = Command::new(program)
                .args(words)
                .arg(&img_path)
                .arg(&mask_path)
                .arg(&out_path)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| AttribError::External(format!("cannot start `{}`: {e}", self.command)))?;
            let deadline = Instant::now() + Duration::from_secs_f64(self.timeout_secs);
            let status = loop {
                match child.try_wait() {
                    Ok(Some(status)) => break status,
                    Ok(None) if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(AttribError::External(format!(
                            "`{}` timed out after {}s",
                            self.command, self.timeout_secs
                        )));
                    }
                    Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                    Err(e) => return Err(AttribError::External(format!("waiting for `{}`: {e}", self.command))),
                }
            };
            if !status.success() {
                return Err(AttribError::External(format!("`{}` exited with {status}", self.command)));
            }
        }

        let out = read_image(&out_path).map_err(|e| e.context(format!("reading output of `{}`", self.command)))?;
        if (out.height(), out.width()) != (nh, nw) {
            return Err(AttribError::External(format!(
                "`{}` produced {}x{}, expected {nh}x{nw}",
                self.command,
                out.height(),
                out.width()
            )));
        }
        let out = if (nh, nw) != (h, w) { resize_image(&out, h, w)? } else { out };
        let mb = PerturbMask::binary(Plane::new(h, w, m.plane().data().to_vec())?)?;
        composite(x, &mb, &out)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::fillers::{FillStrategy, Filler};
    use std::path::Path;

    fn script(dir: &Path, name: &str, body: &str) -> String {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        format!("sh {}", p.display())
    }

    fn sample() -> (Image, PerturbMask) {
        let x = Image::from_fn(6, 6, |r, c| [r as f64 / 5.0, c as f64 / 5.0, 0.2]);
        (x, PerturbMask::from_pixels(6, 6, [7, 8, 14, 20]))
    }

    #[test]
    fn identity_tool_returns_input() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = script(dir.path(), "copy.sh", "cp \"$1\" \"$3\"\n");
        let (x, m) = sample();
        let f = FillStrategy::InpaintExternal(ExternalInpainter::new(cmd)).fill(&x, &m).unwrap();
        // 8-bit round trip of the input image, exact on these values.
        for (a, b) in f.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
        let unmasked_exact = (0..36).filter(|p| m.plane().data()[*p] == 0.0).all(|p| f.data()[p * 3..p * 3 + 3] == x.data()[p * 3..p * 3 + 3]);
        assert!(unmasked_exact);
    }

    #[test]
    fn failures_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (x, m) = sample();
        let fail = ExternalInpainter::new(script(dir.path(), "fail.sh", "exit 3\n"));
        assert!(matches!(fail.inpaint(&x, &m), Err(AttribError::External(_))));
        let silent = ExternalInpainter::new(script(dir.path(), "none.sh", "exit 0\n"));
        assert!(silent.inpaint(&x, &m).is_err());
        let slow = ExternalInpainter { timeout_secs: 0.2, ..ExternalInpainter::new(script(dir.path(), "slow.sh", "sleep 5\n")) };
        let t = Instant::now();
        assert!(slow.inpaint(&x, &m).is_err());
        assert!(t.elapsed() < Duration::from_secs(4));
        assert!(ExternalInpainter::new("  ").validate().is_err());
    }
}
