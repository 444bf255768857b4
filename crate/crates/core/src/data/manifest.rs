//! JSON dataset manifests binding feature files, fixations and captions.

use std::path::{Path, PathBuf};

use gean_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::featfile::{read_feature_file, read_shape};
use super::fixations::read_fixations;
use crate::error::{Error, Result};
use crate::gaze::{FixationRecord, GAZE_GRID};
use crate::pools::FEATURE_GRID;

fn default_stride() -> usize {
    5
}

fn default_feature_dim() -> usize {
    1024
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePaths {
    pub scene: String,
    pub motion: String,
    pub fovea: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub n_frames: usize,
    pub features: FeaturePaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixations: Option<String>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `[height, width]` of the evaluation frames.
    pub frame_size: [usize; 2],
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    pub clips: Vec<ClipRecord>,
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

/// Everything one clip contributes, loaded into memory.
#[derive(Clone, Debug)]
pub struct ClipData {
    pub id: String,
    /// One globally pooled vector per frame.
    pub scene: Vec<Vec<f64>>,
    /// `7×7×F` per frame.
    pub motion: Vec<Tensor>,
    pub fovea: Vec<Tensor>,
    pub fixations: Option<Vec<FixationRecord>>,
    pub captions: Vec<String>,
    pub split: Split,
}

impl ClipData {
    pub fn n_frames(&self) -> usize {
        self.motion.len()
    }
}

impl Dataset {
    /// Parse and validate; every referenced file must exist with the declared shape.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let ds = Dataset { manifest, root };
        ds.validate()?;
        Ok(ds)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.clips.is_empty() {
            return Err(Error::Manifest("manifest lists no clips".into()));
        }
        if m.frame_size[0] < GAZE_GRID || m.frame_size[1] < GAZE_GRID {
            return Err(Error::Manifest(format!("frame_size {:?} smaller than 49×49", m.frame_size)));
        }
        if m.feature_dim == 0 || m.stride == 0 {
            return Err(Error::Manifest("feature_dim and stride must be positive".into()));
        }
        let f = m.feature_dim;
        for clip in &m.clips {
            if clip.n_frames == 0 {
                return Err(Error::Manifest(format!("clip {} has no frames", clip.id)));
            }
            let n = clip.n_frames;
            let expect = [
                (&clip.features.scene, vec![n, f]),
                (&clip.features.motion, vec![n, FEATURE_GRID, FEATURE_GRID, f]),
                (&clip.features.fovea, vec![n, FEATURE_GRID, FEATURE_GRID, f]),
            ];
            for (rel, shape) in expect {
                let path = self.resolve(rel);
                let got = read_shape(&path)?;
                if got != shape {
                    return Err(Error::Manifest(format!(
                        "clip {}: {} has shape {got:?}, expected {shape:?}",
                        clip.id,
                        path.display()
                    )));
                }
            }
            if let Some(fx) = &clip.fixations {
                let path = self.resolve(fx);
                if !path.is_file() {
                    return Err(Error::Manifest(format!("clip {}: missing fixation file {}", clip.id, path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn clips(&self) -> &[ClipRecord] {
        &self.manifest.clips
    }

    pub fn load_clip(&self, clip: &ClipRecord) -> Result<ClipData> {
        let scene = read_feature_file(&self.resolve(&clip.features.scene))?;
        let motion = read_feature_file(&self.resolve(&clip.features.motion))?;
        let fovea = read_feature_file(&self.resolve(&clip.features.fovea))?;
        let n = clip.n_frames;
        let fixations = match &clip.fixations {
            Some(p) => Some(read_fixations(&self.resolve(p), n)?),
            None => None,
        };
        Ok(ClipData {
            id: clip.id.clone(),
            scene: (0..n).map(|i| scene.outer(i).into_data()).collect(),
            motion: (0..n).map(|i| motion.outer(i)).collect(),
            fovea: (0..n).map(|i| fovea.outer(i)).collect(),
            fixations,
            captions: clip.captions.clone(),
            split: clip.split,
        })
    }

    pub fn load_all(&self) -> Result<Vec<ClipData>> {
        self.clips().iter().map(|c| self.load_clip(c)).collect()
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
