//! Clip-level glue: gaze source → spatial attention → the three feature pools.

use gean_tensor::rng::derive_seed;

use crate::data::ClipData;
use crate::decoder::CaptionExample;
use crate::error::{Error, Result};
use crate::gaze::{training_targets, GazeMap};
use crate::pools::{attend_features, build_pool, fixed_gaze, spatial_attention, Channel, FeaturePool, GazeKind, SpatialAttentionMap};
use crate::rgp::{Rgp, RgpClip};
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug)]
pub enum GazeSource<'a> {
    /// Gaze predicted by a frozen RGP model.
    Learned(&'a Rgp),
    /// Training targets built from the clip's own fixations.
    Human,
    Fixed(GazeKind),
}

impl<'a> GazeSource<'a> {
    pub fn new(kind: GazeKind, rgp: Option<&'a Rgp>) -> Result<Self> {
        Ok(match kind {
            GazeKind::Learned => GazeSource::Learned(rgp.ok_or_else(|| Error::Config("learned gaze needs an RGP checkpoint".into()))?),
            GazeKind::Human => GazeSource::Human,
            k => GazeSource::Fixed(k),
        })
    }
}

fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Per-frame 7×7 attention; frames without fixations fall back to uniform gaze under `Human`.
pub fn attention_maps(clip: &ClipData, source: GazeSource<'_>, lambda: f64, seed: u64) -> Result<Vec<SpatialAttentionMap>> {
    let n = clip.n_frames();
    match source {
        GazeSource::Learned(rgp) => rgp.predict(&clip.motion)?.iter().map(|g| spatial_attention(g, lambda)).collect(),
        GazeSource::Human => {
            let fix = clip
                .fixations
                .as_ref()
                .ok_or_else(|| Error::Config(format!("clip {} has no fixations for human gaze", clip.id)))?;
            training_targets(fix, n)?
                .into_iter()
                .map(|t| spatial_attention(&t.unwrap_or_else(GazeMap::uniform), lambda))
                .collect()
        }
        GazeSource::Fixed(GazeKind::Random) => {
            let base = derive_seed(seed, id_hash(&clip.id));
            (0..n).map(|t| fixed_gaze(GazeKind::Random, derive_seed(base, t as u64))).collect()
        }
        GazeSource::Fixed(kind) => {
            let map = fixed_gaze(kind, seed)?;
            Ok(vec![map; n])
        }
    }
}

/// Motion features paired with fixation targets, for RGP training.
pub fn rgp_clip(clip: &ClipData) -> Result<RgpClip> {
    let fix = clip
        .fixations
        .as_ref()
        .ok_or_else(|| Error::Config(format!("clip {} has no fixations to train the RGP on", clip.id)))?;
    RgpClip::new(clip.motion.clone(), training_targets(fix, clip.n_frames())?)
}

/// Scene pool from the global vectors; motion and fovea pools gaze-weighted.
pub fn clip_pools(clip: &ClipData, alphas: &[SpatialAttentionMap]) -> Result<[FeaturePool; 3]> {
    if alphas.len() != clip.n_frames() {
        return Err(Error::Contract(format!("{} attention maps for {} frames", alphas.len(), clip.n_frames())));
    }
    let weighted = |frames: &[gean_tensor::Tensor]| -> Result<Vec<Vec<f64>>> {
        frames.iter().zip(alphas).map(|(f, a)| attend_features(a, f)).collect()
    };
    Ok([
        build_pool(Channel::Scene, &clip.scene, Channel::Scene.pool_size())?,
        build_pool(Channel::Motion, &weighted(&clip.motion)?, Channel::Motion.pool_size())?,
        build_pool(Channel::Fovea, &weighted(&clip.fovea)?, Channel::Fovea.pool_size())?,
    ])
}

pub fn pools_for(clip: &ClipData, source: GazeSource<'_>, lambda: f64, seed: u64) -> Result<[FeaturePool; 3]> {
    clip_pools(clip, &attention_maps(clip, source, lambda, seed)?)
}

/// One example per (clip, caption).
pub fn caption_examples(
    clips: &[&ClipData],
    vocab: &Vocabulary,
    source: GazeSource<'_>,
    lambda: f64,
    seed: u64,
) -> Result<Vec<CaptionExample>> {
    let mut out = Vec::new();
    for clip in clips {
        let pools = pools_for(clip, source, lambda, seed)?;
        for c in &clip.captions {
            let tokens = vocab.encode(c);
            if tokens.is_empty() {
                return Err(Error::Manifest(format!("clip {} has a caption with no words", clip.id)));
            }
            out.push(CaptionExample { pools: pools.clone(), tokens });
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no captions to train on".into()));
    }
    Ok(out)
}
