//! Score-only oracle backed by a long-running external process.
//!
//! Protocol, one request per line: the oracle writes the path of a PNG to the
//! child's stdin and reads back one line of class probabilities separated by
//! whitespace or commas.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::ClassifierOracle;
use crate::error::{AttribError, Result};
use crate::imgcore::{write_image, Image};

struct Channel {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ScoreServerOracle {
    child: Mutex<Child>,
    channel: Mutex<Channel>,
    num_classes: usize,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

impl ScoreServerOracle {
    /// Starts `command` (split on whitespace; first word is the program).
    pub fn spawn(command: &str, num_classes: usize) -> Result<Self> {
        let mut words = command.split_whitespace();
        let program = words
            .next()
            .ok_or_else(|| AttribError::Parameter("empty score-server command".into()))?;
        if num_classes < 2 {
            return Err(AttribError::Parameter("score server needs at least two classes".into()));
        }
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AttribError::External(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let scratch = crate::scratch_dir()?;
        Ok(ScoreServerOracle {
            child: Mutex::new(child),
            channel: Mutex::new(Channel { stdin, stdout }),
            num_classes,
            scratch,
            counter: AtomicU64::new(0),
        })
    }

    fn request(&self, path: &PathBuf) -> Result<String> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(ch.stdin, "{}", path.display())
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| AttribError::External(format!("score server closed its input: {e}")))?;
        let mut line = String::new();
        let n = ch
            .stdout
            .read_line(&mut line)
            .map_err(|e| AttribError::External(format!("reading score server reply: {e}")))?;
        if n == 0 {
            return Err(AttribError::External("score server exited".into()));
        }
        Ok(line)
    }
}

fn parse_reply(line: &str, expected: usize) -> Result<Vec<f64>> {
    let probs = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| AttribError::External(format!("unparseable score line {line:?}: {e}")))?;
    if probs.len() != expected || probs.iter().any(|p| !p.is_finite()) {
        return Err(AttribError::External(format!(
            "expected {expected} finite scores, got {line:?}"
        )));
    }
    Ok(probs)
}

impl ClassifierOracle for ScoreServerOracle {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn score_all(&self, x: &Image) -> Result<Vec<f64>> {
        let id = self.counter.fetch_add(1, Ordering::Relaxed);
        let path = self.scratch.path().join(format!("query{id}.png"));
        write_image(x, &path)?;
        let reply = self.request(&path);
        let _ = std::fs::remove_file(&path);
        parse_reply(&reply?, self.num_classes)
    }
}

impl Drop for ScoreServerOracle {
    fn drop(&mut self) {
        let child = self.child.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = child.kill();
        let _ = child.wait();
    }
}
