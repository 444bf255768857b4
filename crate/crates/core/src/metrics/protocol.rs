//! Frame-sampling evaluation of gaze predictions against held-out fixations.

use std::collections::BTreeMap;
use std::ops::Range;

use gean_tensor::rng::{derive_seed, rng};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::gaze::{fixation_pixels, group_by_frame, make_eval_pair, prepare_ground_truth, FixationRecord, GazeMap};
use crate::grid::Grid;
use crate::metrics::saliency::{auc_judd, cc, sauc_pool, sim, PixelPool};

pub const DEFAULT_SETS: usize = 10;
pub const DEFAULT_FRAMES_PER_SET: usize = 3000;
pub const DEFAULT_SAUC_SPLITS: usize = 10;

/// Fixations of one clip, grouped by frame, with the frame size used for evaluation.
#[derive(Clone, Debug)]
pub struct EvalClip {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub frames: BTreeMap<usize, Vec<FixationRecord>>,
}

impl EvalClip {
    pub fn new(id: impl Into<String>, height: usize, width: usize, fixations: &[FixationRecord]) -> Self {
        EvalClip { id: id.into(), height, width, frames: group_by_frame(fixations) }
    }

    fn pixels(&self) -> Vec<(usize, usize)> {
        self.frames.values().flat_map(|f| fixation_pixels(f, self.height, self.width)).collect()
    }
}

pub enum Prediction {
    /// A 49×49 map, prepared for evaluation together with the ground truth.
    Grid(GazeMap),
    /// Already at evaluation resolution, in `[0,1]`.
    Eval(Grid),
}

pub trait SaliencySource {
    fn prediction(&self, clip: usize, frame: usize, target: &EvalClip) -> Result<Prediction>;
}

/// Model output on the 49×49 grid, one sequence per clip.
pub struct GridPredictions(pub Vec<Vec<GazeMap>>);

impl SaliencySource for GridPredictions {
    fn prediction(&self, clip: usize, frame: usize, target: &EvalClip) -> Result<Prediction> {
        let map = self
            .0
            .get(clip)
            .and_then(|c| c.get(frame))
            .ok_or_else(|| Error::Contract(format!("no prediction for clip {} frame {frame}", target.id)))?;
        Ok(Prediction::Grid(map.clone()))
    }
}

/// The ground-truth map itself, the upper bound of every metric.
pub struct CopyGroundTruth;

impl SaliencySource for CopyGroundTruth {
    fn prediction(&self, _clip: usize, frame: usize, target: &EvalClip) -> Result<Prediction> {
        Ok(Prediction::Eval(prepare_ground_truth(&target.frames[&frame], target.height, target.width)?))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProtocolConfig {
    pub sets: usize,
    pub frames_per_set: usize,
    pub sauc_splits: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { sets: DEFAULT_SETS, frames_per_set: DEFAULT_FRAMES_PER_SET, sauc_splits: DEFAULT_SAUC_SPLITS, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScores {
    pub sim: f64,
    pub cc: f64,
    pub sauc: f64,
    pub auc: f64,
}

impl FrameScores {
    fn add(&mut self, o: &FrameScores) {
        self.sim += o.sim;
        self.cc += o.cc;
        self.sauc += o.sauc;
        self.auc += o.auc;
    }

    fn scaled(&self, s: f64) -> FrameScores {
        FrameScores { sim: self.sim * s, cc: self.cc * s, sauc: self.sauc * s, auc: self.auc * s }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolReport {
    pub scores: FrameScores,
    pub per_set: Vec<FrameScores>,
    pub eligible_frames: usize,
    /// Smaller than requested when fewer frames are eligible.
    pub frames_per_set: usize,
}

impl ProtocolReport {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let s = &self.scores;
        BTreeMap::from([
            ("sim".to_string(), s.sim),
            ("cc".to_string(), s.cc),
            ("sauc".to_string(), s.sauc),
            ("auc".to_string(), s.auc),
            ("eligible_frames".to_string(), self.eligible_frames as f64),
            ("frames_per_set".to_string(), self.frames_per_set as f64),
            ("sets".to_string(), self.per_set.len() as f64),
        ])
    }
}

/// Metrics of one frame. The sAUC pool is other clips' fixations, or the clip's
/// own fixations when no other clip shares its frame size.
pub fn score_frame(
    clips: &[EvalClip],
    source: &dyn SaliencySource,
    clip: usize,
    frame: usize,
    pool: &dyn PixelPool,
    cfg: &ProtocolConfig,
) -> Result<FrameScores> {
    let target = &clips[clip];
    let fixations = target
        .frames
        .get(&frame)
        .ok_or_else(|| Error::Contract(format!("clip {} frame {frame} has no fixations", target.id)))?;
    let (pred, gt) = match source.prediction(clip, frame, target)? {
        Prediction::Grid(map) => make_eval_pair(&map, fixations, target.height, target.width)?,
        Prediction::Eval(map) => {
            if map.shape() != (target.height, target.width) {
                return Err(Error::Dimension(format!("prediction {:?} for a {}×{} frame", map.shape(), target.height, target.width)));
            }
            (map, prepare_ground_truth(fixations, target.height, target.width)?)
        }
    };
    let fix = fixation_pixels(fixations, target.height, target.width);
    let seed = derive_seed(derive_seed(cfg.seed, clip as u64), frame as u64);
    Ok(FrameScores {
        sim: sim(&pred, &gt)?,
        cc: cc(&pred, &gt)?,
        sauc: sauc_pool(&pred, &fix, pool, cfg.sauc_splits, seed)?,
        auc: auc_judd(&pred, &fix)?,
    })
}

/// One clip's shuffle pool: every fixation pixel of its frame-size group with the
/// clip's own span left out, or the clip's own pixels when it is alone in the group.
pub struct ShufflePool<'a> {
    pixels: &'a [(usize, usize)],
    skip: Range<usize>,
}

impl PixelPool for ShufflePool<'_> {
    fn len(&self) -> usize {
        self.pixels.len() - self.skip.len()
    }

    fn pixel(&self, i: usize) -> (usize, usize) {
        if i < self.skip.start {
            self.pixels[i]
        } else {
            self.pixels[i + self.skip.len()]
        }
    }
}

/// Fixation pixels grouped by frame size, and each clip's group and span.
struct PoolIndex {
    groups: Vec<Vec<(usize, usize)>>,
    spans: Vec<(usize, Range<usize>)>,
}

impl PoolIndex {
    fn new(clips: &[EvalClip]) -> Self {
        let mut sizes: Vec<(usize, usize)> = Vec::new();
        let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut spans = Vec::with_capacity(clips.len());
        for c in clips {
            let g = match sizes.iter().position(|&s| s == (c.height, c.width)) {
                Some(g) => g,
                None => {
                    sizes.push((c.height, c.width));
                    groups.push(Vec::new());
                    groups.len() - 1
                }
            };
            let start = groups[g].len();
            groups[g].extend(c.pixels());
            spans.push((g, start..groups[g].len()));
        }
        PoolIndex { groups, spans }
    }

    fn pool(&self, clip: usize) -> ShufflePool<'_> {
        let (g, span) = &self.spans[clip];
        let pixels = &self.groups[*g];
        if span.len() == pixels.len() {
            ShufflePool { pixels: &pixels[span.clone()], skip: 0..0 }
        } else {
            ShufflePool { pixels, skip: span.clone() }
        }
    }
}

/// Average over `sets` uniform draws of frames (without replacement within a set),
/// first within each set and then across sets.
pub fn eval_protocol(clips: &[EvalClip], source: &dyn SaliencySource, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    if cfg.sets == 0 || cfg.frames_per_set == 0 {
        return Err(Error::Config("protocol needs at least one set of one frame".into()));
    }
    let eligible: Vec<(usize, usize)> =
        clips.iter().enumerate().flat_map(|(k, c)| c.frames.keys().map(move |&f| (k, f))).collect();
    if eligible.is_empty() {
        return Err(Error::Contract("no frames with fixations to evaluate".into()));
    }
    let pools = PoolIndex::new(clips);
    let per_set_n = cfg.frames_per_set.min(eligible.len());
    let mut cache: Vec<Option<FrameScores>> = vec![None; eligible.len()];
    let mut per_set = Vec::with_capacity(cfg.sets);
    let mut total = FrameScores { sim: 0.0, cc: 0.0, sauc: 0.0, auc: 0.0 };
    for s in 0..cfg.sets {
        let mut r = rng(derive_seed(cfg.seed, 0x7365_7400 + s as u64));
        let mut acc = FrameScores { sim: 0.0, cc: 0.0, sauc: 0.0, auc: 0.0 };
        for i in sample(&mut r, eligible.len(), per_set_n).iter() {
            let scores = match cache[i] {
                Some(v) => v,
                None => {
                    let (k, f) = eligible[i];
                    let v = score_frame(clips, source, k, f, &pools.pool(k), cfg)?;
                    cache[i] = Some(v);
                    v
                }
            };
            acc.add(&scores);
        }
        let mean = acc.scaled(1.0 / per_set_n as f64);
        total.add(&mean);
        per_set.push(mean);
    }
    Ok(ProtocolReport {
        scores: total.scaled(1.0 / cfg.sets as f64),
        per_set,
        eligible_frames: eligible.len(),
        frames_per_set: per_set_n,
    })
}
