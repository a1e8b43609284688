//! Subprocess-backed feature extractor, the seam for plugging pretrained
//! networks in without linking them.
//!
//! Protocol: `<exe> --describe` prints {"input_size":[h,w],"feature_len":N,
//! "classes":K|null} once; per call the crop is written to stdin as
//! {"h":..,"w":..,"planes":[[..];3]} (row-major planes in [0,1]) and the
//! reply {"features":[..],"class_probs":[..]|null} is read from stdout.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::Deserialize;
use vosgan::metrics::FeatureExtractor;
use vosgan::plane::Plane;

use crate::{CliError, CliResult};

#[derive(Debug, Deserialize)]
struct Description {
    input_size: (usize, usize),
    feature_len: usize,
    #[serde(default)]
    classes: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Reply {
    features: Vec<f64>,
    #[serde(default)]
    class_probs: Option<Vec<f64>>,
}

pub struct ExternalExtractor {
    exe: PathBuf,
    desc: Description,
}

impl ExternalExtractor {
    pub fn new(exe: PathBuf) -> CliResult<Self> {
        let out = Command::new(&exe)
            .arg("--describe")
            .output()
            .map_err(|e| CliError::Config(format!("cannot run {}: {e}", exe.display())))?;
        if !out.status.success() {
            return Err(CliError::Config(format!(
                "{} --describe failed: {}",
                exe.display(),
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        let desc: Description = serde_json::from_slice(&out.stdout)
            .map_err(|e| CliError::Config(format!("bad --describe reply: {e}")))?;
        if desc.feature_len == 0 || desc.input_size.0 == 0 || desc.input_size.1 == 0 {
            return Err(CliError::Config("extractor described a zero dimension".into()));
        }
        Ok(ExternalExtractor { exe, desc })
    }

    fn call(&self, crop: &[Plane; 3]) -> Reply {
        let payload = serde_json::json!({
            "h": crop[0].height,
            "w": crop[0].width,
            "planes": [&crop[0].data, &crop[1].data, &crop[2].data],
        });
        // The trait has no error channel; a broken extractor mid-run is fatal.
        let mut child = Command::new(&self.exe)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap_or_else(|e| panic!("extractor {} died: {e}", self.exe.display()));
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(payload.to_string().as_bytes())
            .expect("extractor stdin");
        let out = child.wait_with_output().expect("extractor wait");
        assert!(out.status.success(), "extractor exited with {}", out.status);
        let reply: Reply = serde_json::from_slice(&out.stdout)
            .unwrap_or_else(|e| panic!("bad extractor reply: {e}"));
        assert_eq!(reply.features.len(), self.desc.feature_len, "feature_len drifted");
        reply
    }
}

impl FeatureExtractor for ExternalExtractor {
    fn input_size(&self) -> (usize, usize) {
        self.desc.input_size
    }

    fn feature_len(&self) -> usize {
        self.desc.feature_len
    }

    fn features(&self, crop: &[Plane; 3]) -> Vec<f64> {
        self.call(crop).features
    }

    fn class_probs(&self, frame: &[Plane; 3]) -> Option<Vec<f64>> {
        self.desc.classes?;
        self.call(frame).class_probs
    }
}

/// Parses `--extractor toy` or `--extractor external:PATH`.
pub fn parse_extractor(spec: &str) -> CliResult<Box<dyn FeatureExtractor>> {
    if spec == "toy" {
        return Ok(Box::new(vosgan::metrics::ToyFeatureExtractor));
    }
    match spec.strip_prefix("external:") {
        Some(path) if !path.is_empty() => Ok(Box::new(ExternalExtractor::new(path.into())?)),
        _ => Err(CliError::Config(format!(
            "extractor {spec:?} is not \"toy\" or \"external:PATH\""
        ))),
    }
}
