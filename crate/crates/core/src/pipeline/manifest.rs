//! TOML dataset manifests:
//!
//! ```toml
//! [[sample]]
//! lowres = "a_small.png"
//! guidance = "a_gray.png"
//! target = "a.png"        # optional
//!
//! [[sample]]
//! highres = "b.png"       # low-resolution input is synthesized
//! factor = 4
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Flow data
//! uses `.flo` files; guidance is always an image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{downsample, to_grayscale};
use crate::io::{read_flo, read_image};
use crate::tensor::Image;

use super::features::TaskKind;
use super::task::UpsampleTask;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lowres: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub highres: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "sample", default)]
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Loads every sample, resolving paths against `base`.
    pub fn load_tasks(&self, base: &Path, kind: TaskKind) -> Result<Vec<UpsampleTask>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, e)| load_entry(e, base, kind).map_err(|err| annotate(err, i)))
            .collect()
    }
}

fn annotate(err: Error, i: usize) -> Error {
    match err {
        Error::Format(m) => Error::Format(format!("sample {i}: {m}")),
        Error::InvalidArgument(m) => Error::Format(format!("sample {i}: {m}")),
        Error::Shape(m) => Error::Format(format!("sample {i}: {m}")),
        other => other,
    }
}

fn load_data(path: &Path, kind: TaskKind) -> Result<Image> {
    match kind {
        TaskKind::Flow => read_flo(path),
        TaskKind::Color => {
            let img = read_image(path)?;
            if img.channels() != 3 {
                return Err(Error::Format(format!("{} is not an RGB image", path.display())));
            }
            Ok(img)
        }
    }
}

fn load_guidance(path: &Path, kind: TaskKind) -> Result<Image> {
    let img = read_image(path)?;
    match kind {
        TaskKind::Color => to_grayscale(&img),
        TaskKind::Flow => Ok(img),
    }
}

fn load_entry(e: &ManifestEntry, base: &Path, kind: TaskKind) -> Result<UpsampleTask> {
    let p = |rel: &PathBuf| base.join(rel);
    if let Some(hr) = &e.highres {
        if e.lowres.is_some() || e.target.is_some() {
            return Err(Error::Format("`highres` excludes `lowres` and `target`".into()));
        }
        let factor = e.factor.ok_or_else(|| Error::Format("`highres` needs `factor`".into()))?;
        let target = load_data(&p(hr), kind)?;
        let guidance = match (&e.guidance, kind) {
            (Some(g), _) => load_guidance(&p(g), kind)?,
            (None, TaskKind::Color) => to_grayscale(&target)?,
            (None, TaskKind::Flow) => return Err(Error::Format("flow samples need `guidance`".into())),
        };
        return UpsampleTask::from_highres(target, guidance, factor);
    }
    let (lr, g) = match (&e.lowres, &e.guidance) {
        (Some(lr), Some(g)) => (lr, g),
        _ => return Err(Error::Format("sample needs `highres`, or `lowres` and `guidance`".into())),
    };
    let lowres = load_data(&p(lr), kind)?;
    let guidance = load_guidance(&p(g), kind)?;
    let target = e.target.as_ref().map(|t| load_data(&p(t), kind)).transpose()?;
    if lowres.height() == 0 || guidance.height() % lowres.height() != 0 {
        return Err(Error::Format("guidance size is not a multiple of the input size".into()));
    }
    let factor = guidance.height() / lowres.height();
    if e.factor.is_some_and(|f| f != factor) {
        return Err(Error::Format(format!("declared factor {:?} but sizes imply {factor}", e.factor)));
    }
    let lowres_guidance = downsample(&guidance, factor)?;
    UpsampleTask::new(lowres, lowres_guidance, guidance, target)
}

/// Reads a manifest file and loads its samples.
pub fn load_manifest(path: impl AsRef<Path>, kind: TaskKind) -> Result<Vec<UpsampleTask>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::parse(&text)?.load_tasks(base, kind)
}
