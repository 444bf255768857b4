//! Run settings: command-line flags over an optional JSON file over defaults.

use std::path::{Path, PathBuf};

use gean::decoder::{DecoderConfig, DEFAULT_L2, DEFAULT_MAX_LEN};
use gean::pools::{GazeKind, DEFAULT_LAMBDA};
use gean::rgp::RgpConfig;
use gean::{Error, Result};
use serde::Deserialize;

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_OUT: &str = "out";

/// Every field optional; anything unset falls back to the built-in default.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
    pub l2: Option<f64>,
    pub max_len: Option<usize>,
    pub gaze: Option<String>,
    pub steps: Option<usize>,
    pub protocol_sets: Option<usize>,
    pub protocol_frames: Option<usize>,
    pub preset: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}

/// Model widths: the published ones, or small ones that train on one core.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

impl Preset {
    pub fn rgp(self, feature_dim: usize) -> RgpConfig {
        match self {
            Preset::Desk => RgpConfig::desk(feature_dim),
            Preset::Paper => RgpConfig { feature_dim, ..RgpConfig::default() },
        }
    }

    pub fn decoder(self, vocab: usize, feature_dim: usize) -> DecoderConfig {
        match self {
            Preset::Desk => DecoderConfig::desk(vocab, feature_dim),
            Preset::Paper => DecoderConfig { feature_dim, ..DecoderConfig::paper(vocab) },
        }
    }
}

/// Resolved values shared by the subcommands.
#[derive(Clone, Debug)]
pub struct Settings {
    pub file: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Settings {
    pub fn new(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let file = match config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let seed = gean_tensor::rng::seed_from_env(pick(seed, &file.seed, 0))?;
        let out = pick(out, &file.out, PathBuf::from(DEFAULT_OUT));
        Ok(Settings { file, seed, out })
    }

    pub fn manifest(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.file.manifest.clone()).ok_or_else(|| Error::Config("--manifest is required".into()))
    }

    pub fn lr(&self, flag: Option<f64>) -> Result<f64> {
        let lr = pick(flag, &self.file.lr, DEFAULT_LR);
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(lr)
    }

    pub fn lambda(&self, flag: Option<f64>) -> Result<f64> {
        let l = pick(flag, &self.file.lambda, DEFAULT_LAMBDA);
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
        }
        Ok(l)
    }

    pub fn l2(&self, flag: Option<f64>) -> f64 {
        pick(flag, &self.file.l2, DEFAULT_L2)
    }

    pub fn max_len(&self, flag: Option<usize>) -> usize {
        pick(flag, &self.file.max_len, DEFAULT_MAX_LEN)
    }

    pub fn steps(&self, flag: Option<usize>, default: usize) -> usize {
        pick(flag, &self.file.steps, default)
    }

    pub fn gaze(&self, flag: Option<String>) -> Result<GazeKind> {
        pick(flag, &self.file.gaze, "learned".to_string()).parse()
    }

    pub fn preset(&self, flag: Option<String>) -> Result<Preset> {
        pick(flag, &self.file.preset, "desk".to_string()).parse()
    }

    pub fn protocol(&self, sets: Option<usize>, frames: Option<usize>) -> (usize, usize) {
        use gean::metrics::protocol::{DEFAULT_FRAMES_PER_SET, DEFAULT_SETS};
        (pick(sets, &self.file.protocol_sets, DEFAULT_SETS), pick(frames, &self.file.protocol_frames, DEFAULT_FRAMES_PER_SET))
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_default() {
        let file = FileConfig { lr: Some(3e-4), ..Default::default() };
        assert_eq!(pick(Some(1e-3), &file.lr, DEFAULT_LR), 1e-3);
        assert_eq!(pick(None, &file.lr, DEFAULT_LR), 3e-4);
        assert_eq!(pick(None, &None, DEFAULT_LR), DEFAULT_LR);
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"lr": 0.1, "typo": 1}"#).is_err());
        let f: FileConfig = serde_json::from_str(r#"{"gaze": "random", "steps": 10}"#).unwrap();
        assert_eq!(f.steps, Some(10));
    }
}
