use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSample {
    pub id: String,
    /// Relative to the manifest's directory.
    pub volume_path: String,
    pub y: f64,
    pub site: String,
    pub label: Option<u8>,
}

impl LabeledSample {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("empty sample id".into()));
        }
        if !self.y.is_finite() {
            return Err(Error::Validation(format!("sample '{}': y is not finite", self.id)));
        }
        if self.site.is_empty() {
            return Err(Error::Validation(format!("sample '{}': empty site", self.id)));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::Validation(format!(
                    "sample '{}': label {l} is not 0 or 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub samples: Vec<LabeledSample>,
    pub schema_version: u32,
    /// Directory that `volume_path` entries are relative to.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(samples: Vec<LabeledSample>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("manifest has no samples".into()));
        }
        let mut seen = HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id '{}'", s.id)));
            }
        }
        Ok(Manifest {
            samples,
            schema_version: MANIFEST_SCHEMA_VERSION,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn volume_path(&self, sample: &LabeledSample) -> PathBuf {
        self.base_dir.join(&sample.volume_path)
    }

    pub fn sites(&self) -> Vec<&str> {
        let mut sites: Vec<&str> = self.samples.iter().map(|s| s.site.as_str()).collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    /// Serializes the samples as JSON lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Loads a JSON-lines manifest and checks that every referenced volume
/// exists. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: LabeledSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    let manifest = Manifest::new(samples, base_dir)?;
    for s in &manifest.samples {
        let p = manifest.volume_path(s);
        if !p.is_file() {
            return Err(Error::Validation(format!(
                "sample '{}': volume file {} does not exist",
                s.id,
                p.display()
            )));
        }
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(manifest.to_jsonl()?.as_bytes())
        .map_err(|e| Error::io(path, e))
}
