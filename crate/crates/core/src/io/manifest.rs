//! Sequence manifests: one frame per line, `<left> <right> <12 pose reals>`.

use std::path::PathBuf;

use crate::camera::{parse_reals, Pose};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    /// World-from-camera.
    pub pose: Pose,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Parse(format!("manifest line {}: {m}", i + 1));
        let mut parts = line.split_whitespace();
        let left = parts
            .next()
            .ok_or_else(|| err("missing left path".into()))?;
        let right = parts
            .next()
            .ok_or_else(|| err("missing right path".into()))?;
        let rest: Vec<&str> = parts.collect();
        let vals = parse_reals(&rest.join(" ")).map_err(|e| err(e.to_string()))?;
        let pose = Pose::from_row_major(&vals).map_err(|e| err(e.to_string()))?;
        out.push(ManifestEntry {
            left: left.into(),
            right: right.into(),
            pose,
        });
    }
    Ok(out)
}
