//! Desk-scale synthetic clips: noisy feature grids with a planted, slowly moving
//! hot cell, fixations on that cell, and captions keyed to what sits there.

use std::path::Path;

use gean_tensor::init::gaussian;
use gean_tensor::rng::{derive_seed, rng, Rng};
use gean_tensor::Tensor;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::featfile::{write_feature_file, DType};
use super::fixations::write_fixations;
use super::manifest::{ClipData, ClipRecord, FeaturePaths, Manifest, Split};
use crate::error::{Error, Result};
use crate::gaze::FixationRecord;
use crate::pools::FEATURE_GRID;

pub const VERBS: [&str; 4] = ["opens", "carries", "drops", "holds"];
pub const ADJECTIVES: [&str; 4] = ["red", "small", "old", "wooden"];
pub const NOUNS: [&str; 4] = ["door", "box", "cup", "letter"];
pub const PLACES: [&str; 4] = ["kitchen", "garden", "office", "street"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub clips: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub frame_size: [usize; 2],
    pub subjects: u32,
    /// Frames between moves of the planted cell.
    pub move_every: usize,
    /// Trailing clips marked as held-out.
    pub test_clips: usize,
    /// Scale of the hot component in motion features.
    pub hot_amplitude: f64,
    /// Scale of the class signature at the planted cell.
    pub object_amplitude: f64,
    /// Scale of the class signatures at the other cells.
    pub distractor_amplitude: f64,
    /// Standard deviation of the background fields.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clips: 8,
            frames: 20,
            feature_dim: 32,
            frame_size: [98, 98],
            subjects: 4,
            move_every: 10,
            test_clips: 0,
            hot_amplitude: 2.0,
            object_amplitude: 1.5,
            distractor_amplitude: 1.0,
            noise: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.frames == 0 || self.feature_dim == 0 || self.subjects == 0 || self.move_every == 0 {
            return Err(Error::Config("synthetic clip, frame, feature, subject and move counts must be positive".into()));
        }
        if self.test_clips > self.clips {
            return Err(Error::Config("more test clips than clips".into()));
        }
        if self.frame_size.iter().any(|&s| s < crate::gaze::GAZE_GRID) {
            return Err(Error::Config("frame size must be at least 49×49".into()));
        }
        Ok(())
    }
}

/// Class labels behind one clip's caption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipClasses {
    pub object: usize,
    pub action: usize,
    pub place: usize,
}

impl ClipClasses {
    pub fn caption(&self) -> String {
        format!(
            "SOMEONE {} the {} {} in the {}.",
            VERBS[self.action], ADJECTIVES[self.object], NOUNS[self.object], PLACES[self.place]
        )
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub data: ClipData,
    pub classes: ClipClasses,
    /// Planted `(row, col)` feature cell per frame.
    pub path: Vec<(usize, usize)>,
}

struct Signatures {
    hot: Vec<f64>,
    object: Vec<Vec<f64>>,
    action: Vec<Vec<f64>>,
    place: Vec<Vec<f64>>,
}

fn normal_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl Signatures {
    fn new(f: usize, rng: &mut Rng) -> Self {
        let mut set = |k: usize| (0..k).map(|_| normal_vec(f, rng)).collect::<Vec<_>>();
        let hot = set(1).remove(0);
        Signatures { hot, object: set(4), action: set(4), place: set(4) }
    }
}

/// Normalized coordinate landing on 49-grid pixel `8·cell`.
fn cell_coordinate(cell: usize) -> f64 {
    (8.0 * cell as f64 + 0.5) / 49.0
}

fn planted_path(cfg: &SyntheticConfig, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut cell = (rng.random_range(1..=5), rng.random_range(1..=5));
    let mut path = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 && t % cfg.move_every == 0 {
            let step: i64 = if rng.random::<bool>() { 1 } else { -1 };
            let moved = |v: usize| (v as i64 + step).clamp(1, 5) as usize;
            cell = if rng.random::<bool>() { (moved(cell.0), cell.1) } else { (cell.0, moved(cell.1)) };
        }
        path.push(cell);
    }
    path
}

/// Temporally smooth background: AR(1) per cell and channel.
fn background(cfg: &SyntheticConfig, rng: &mut Rng) -> Vec<Tensor> {
    let shape = [FEATURE_GRID, FEATURE_GRID, cfg.feature_dim];
    let rho: f64 = 0.9;
    let mut cur = gaussian(&shape, cfg.noise, rng);
    let mut out = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        out.push(cur.clone());
        let fresh = gaussian(&shape, cfg.noise * (1.0 - rho * rho).sqrt(), rng);
        cur = cur.zip_map(&fresh, |a, b| rho * a + b).expect("same shape");
    }
    out
}

fn add_at(t: &mut Tensor, r: usize, c: usize, v: &[f64], scale: f64) {
    let f = v.len();
    let base = (r * FEATURE_GRID + c) * f;
    for (x, s) in t.data_mut()[base..base + f].iter_mut().zip(v) {
        *x += scale * s;
    }
}

pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<SyntheticClip>> {
    cfg.validate()?;
    let sigs = Signatures::new(cfg.feature_dim, &mut rng(derive_seed(seed, 0)));
    let mut clips = Vec::with_capacity(cfg.clips);
    for k in 0..cfg.clips {
        let mut r = rng(derive_seed(seed, 1 + k as u64));
        let classes = ClipClasses {
            object: r.random_range(0..4),
            action: r.random_range(0..4),
            place: r.random_range(0..4),
        };
        let path = planted_path(cfg, &mut r);
        let distractors: Vec<usize> = (0..FEATURE_GRID * FEATURE_GRID).map(|_| r.random_range(0..4)).collect();
        let mut motion = background(cfg, &mut r);
        let mut fovea = background(cfg, &mut r);
        let mut scene = Vec::with_capacity(cfg.frames);
        let mut fixations = Vec::new();
        for t in 0..cfg.frames {
            let (pr, pc) = path[t];
            add_at(&mut motion[t], pr, pc, &sigs.hot, cfg.hot_amplitude);
            add_at(&mut motion[t], pr, pc, &sigs.action[classes.action], cfg.object_amplitude);
            for (cell, &d) in distractors.iter().enumerate() {
                let (i, j) = (cell / FEATURE_GRID, cell % FEATURE_GRID);
                if (i, j) == (pr, pc) {
                    add_at(&mut fovea[t], i, j, &sigs.object[classes.object], cfg.object_amplitude);
                } else {
                    add_at(&mut fovea[t], i, j, &sigs.object[d], cfg.distractor_amplitude);
                }
            }
            let noise = normal_vec(cfg.feature_dim, &mut r);
            scene.push(sigs.place[classes.place].iter().zip(noise).map(|(p, n)| p + cfg.noise * n).collect());
            for s in 0..cfg.subjects {
                fixations.push(FixationRecord::new(t, s, cell_coordinate(pc), cell_coordinate(pr))?);
            }
        }
        let split = if k + cfg.test_clips >= cfg.clips { Split::Test } else { Split::Train };
        let data = ClipData {
            id: format!("clip{k:03}"),
            scene,
            motion,
            fovea,
            fixations: Some(fixations),
            captions: vec![classes.caption()],
            split,
        };
        clips.push(SyntheticClip { data, classes, path });
    }
    Ok(clips)
}

/// Write feature files, fixation CSVs and `manifest.json` into `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SyntheticConfig, clips: &[SyntheticClip]) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(clips.len());
    for clip in clips {
        let d = &clip.data;
        let n = d.n_frames();
        let f = cfg.feature_dim;
        let paths = FeaturePaths {
            scene: format!("{}_scene.gfeat", d.id),
            motion: format!("{}_motion.gfeat", d.id),
            fovea: format!("{}_fovea.gfeat", d.id),
        };
        let scene = Tensor::new(&[n, f], d.scene.concat())?;
        write_feature_file(&dir.join(&paths.scene), &scene, DType::F64)?;
        write_feature_file(&dir.join(&paths.motion), &Tensor::stack(&d.motion)?, DType::F64)?;
        write_feature_file(&dir.join(&paths.fovea), &Tensor::stack(&d.fovea)?, DType::F64)?;
        let fix = format!("{}_fixations.csv", d.id);
        write_fixations(&dir.join(&fix), d.fixations.as_deref().unwrap_or(&[]))?;
        records.push(ClipRecord {
            id: d.id.clone(),
            n_frames: n,
            features: paths,
            fixations: Some(fix),
            captions: d.captions.clone(),
            split: d.split,
        });
    }
    let manifest = Manifest { frame_size: cfg.frame_size, stride: 5, feature_dim: cfg.feature_dim, clips: records };
    super::manifest::write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::{group_by_frame, make_training_target};

    #[test]
    fn counts_and_determinism() {
        let cfg = SyntheticConfig { clips: 3, frames: 12, feature_dim: 8, test_clips: 1, ..Default::default() };
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data.n_frames(), 12);
            assert_eq!(x.data.motion, y.data.motion);
            assert_eq!(x.data.fixations, y.data.fixations);
        }
        assert_eq!(a[2].data.split, Split::Test);
        assert_eq!(a[1].data.split, Split::Train);
    }

    #[test]
    fn targets_land_in_planted_block() {
        let cfg = SyntheticConfig { clips: 4, frames: 30, feature_dim: 4, ..Default::default() };
        let mut hits = 0;
        let mut total = 0;
        for clip in generate(&cfg, 3).unwrap() {
            let frames = group_by_frame(clip.data.fixations.as_ref().unwrap());
            for (t, fx) in frames {
                let (r, c) = make_training_target(&fx, t).unwrap().grid().argmax();
                total += 1;
                hits += usize::from((r / 7, c / 7) == clip.path[t]);
            }
        }
        assert_eq!(hits, total);
    }
}
