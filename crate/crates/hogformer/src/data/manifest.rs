//! Dataset manifests: clean image paths crossed with degradation specs,
//! degraded on the fly during iteration.

use super::degrade::{degrade, DegradationSpec};
use super::io::load_image;
use super::ImageSample;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: String,
    pub spec: DegradationSpec,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Build from a directory of clean images plus a `specs.json` list: the
    /// manifest is the cross product of images and specs.
    pub fn build(root: &Path) -> Result<Manifest> {
        let specs_path = root.join("specs.json");
        let specs: Vec<DegradationSpec> = if specs_path.exists() {
            let text = std::fs::read_to_string(&specs_path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Input(format!("{}: {e}", specs_path.display())))?
        } else {
            Vec::new()
        };
        let mut images: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|x| {
                        let x = x.to_string_lossy().to_ascii_lowercase();
                        x == "png" || x == "ppm"
                    })
                    .unwrap_or(false)
            })
            .collect();
        images.sort();
        let mut entries = Vec::new();
        for img in &images {
            let stem = img.file_stem().unwrap_or_default().to_string_lossy().to_string();
            for (i, spec) in specs.iter().enumerate() {
                spec.validate()?;
                entries.push(ManifestEntry {
                    id: format!("{stem}__{}{i}", spec.kind_name()),
                    clean_path: img
                        .file_name()
                        .map(|n| n.to_string_lossy().to_string())
                        .unwrap_or_default(),
                    spec: spec.clone(),
                });
            }
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("manifest serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    /// Check that every referenced clean image exists relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        for e in &self.entries {
            let p = base.join(&e.clean_path);
            if !p.exists() {
                return Err(Error::Input(format!(
                    "manifest entry '{}': dangling clean_path {}",
                    e.id,
                    p.display()
                )));
            }
            e.spec.validate()?;
        }
        Ok(())
    }

    /// Materialize samples in manifest order, degrading on the fly.
    pub fn iterate(&self, base: &Path) -> Result<Vec<ImageSample>> {
        self.validate(base)?;
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let clean = load_image(&base.join(&e.clean_path))?;
            let degraded = degrade(&clean, &e.spec)?;
            out.push(ImageSample {
                id: e.id.clone(),
                clean,
                degraded,
                spec: e.spec.clone(),
            });
        }
        Ok(out)
    }
}
