//! Fixation records to gaze maps: training targets on the 49×49 grid and
//! evaluation-resolution map pairs.

use std::collections::BTreeMap;

use gean_tensor::Tensor;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Side of the gaze grid.
pub const GAZE_GRID: usize = 49;
/// Blur applied to binary fixation maps to form training targets.
pub const TARGET_SIGMA: f64 = 2.0;
/// Blur applied to predicted maps before evaluation.
pub const PRED_EVAL_SIGMA: f64 = 2.0;
/// Blur applied to averaged subject fixations at frame resolution.
pub const GT_EVAL_SIGMA: f64 = 19.0;

/// One subject's fixation at one (sampled) frame. Coordinates are normalized
/// to `[0,1]`, `x` rightward and `y` downward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixationRecord {
    pub frame: usize,
    pub subject: u32,
    pub x: f64,
    pub y: f64,
}

impl FixationRecord {
    pub fn new(frame: usize, subject: u32, x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Config(format!("fixation ({x}, {y}) outside [0,1]²")));
        }
        Ok(FixationRecord { frame, subject, x, y })
    }

    /// `(row, col)` cell on an `rows×cols` raster: `floor(coord·n)` clamped to `n−1`.
    pub fn cell(&self, rows: usize, cols: usize) -> (usize, usize) {
        let bin = |v: f64, n: usize| ((v * n as f64).floor() as usize).min(n - 1);
        (bin(self.y, rows), bin(self.x, cols))
    }

    pub fn mirrored(&self) -> Self {
        FixationRecord { x: 1.0 - self.x, ..*self }
    }
}

/// Groups records by frame index, keeping file order within a frame.
pub fn group_by_frame(records: &[FixationRecord]) -> BTreeMap<usize, Vec<FixationRecord>> {
    let mut frames: BTreeMap<usize, Vec<FixationRecord>> = BTreeMap::new();
    for r in records {
        frames.entry(r.frame).or_default().push(*r);
    }
    frames
}

/// An ℓ1-normalized, non-negative 49×49 distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeMap(Grid);

impl GazeMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.shape() != (GAZE_GRID, GAZE_GRID) {
            return Err(Error::Dimension(format!("gaze map must be 49×49, got {:?}", grid.shape())));
        }
        if grid.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Contract("gaze map has negative or NaN entries".into()));
        }
        if (grid.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("gaze map sums to {}", grid.sum())));
        }
        Ok(GazeMap(grid))
    }

    pub fn uniform() -> Self {
        let n = (GAZE_GRID * GAZE_GRID) as f64;
        GazeMap(Grid::full(GAZE_GRID, GAZE_GRID, 1.0 / n))
    }

    /// From a flat probability vector of 2401 entries.
    pub fn from_probabilities(t: &Tensor) -> Result<Self> {
        Self::new(Grid::from_vec(GAZE_GRID, GAZE_GRID, t.data().to_vec())?)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn mirrored(&self) -> Self {
        GazeMap(self.0.flip_cols())
    }

    pub fn entropy(&self) -> f64 {
        -self.0.data().iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }
}

/// Binary map with a 1 in every cell hit by at least one fixation.
pub fn build_fixation_map(fixations: &[FixationRecord], frame: usize, size: usize) -> Result<Grid> {
    if fixations.is_empty() {
        return Err(Error::NoFixation(frame));
    }
    let mut map = Grid::zeros(size, size);
    for f in fixations {
        let (r, c) = f.cell(size, size);
        map.set(r, c, 1.0);
    }
    Ok(map)
}

/// ℓ1-renormalized 1-D Gaussian truncated at `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> =
        (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter with zero padding. `sigma = 0` is the identity.
pub fn gaussian_blur(map: &Grid, sigma: f64) -> Result<Grid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let (rows, cols) = map.shape();
    let pass = |src: &Grid, horizontal: bool| -> Grid {
        let mut out = Grid::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for (t, w) in k.iter().enumerate() {
                    let d = t as isize - radius;
                    let (rr, cc) = if horizontal { (r as isize, c as isize + d) } else { (r as isize + d, c as isize) };
                    if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        acc += w * src.get(rr as usize, cc as usize);
                    }
                }
                out.set(r, c, acc);
            }
        }
        out
    };
    Ok(pass(&pass(map, true), false))
}

pub fn normalize_l1(map: &Grid) -> Result<Grid> {
    let total = map.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMap(format!("cannot ℓ1-normalize a map with sum {total}")));
    }
    Ok(map.scale(1.0 / total))
}

pub fn normalize_minmax(map: &Grid) -> Result<Grid> {
    let (lo, hi) = (map.min(), map.max());
    if !(hi > lo) {
        return Err(Error::DegenerateMap("cannot min-max normalize a constant map".into()));
    }
    let span = hi - lo;
    Ok(map.map(|v| (v - lo) / span))
}

/// Binary fixation map → blur σ=2 → ℓ1 normalization.
pub fn make_training_target(fixations: &[FixationRecord], frame: usize) -> Result<GazeMap> {
    let binary = build_fixation_map(fixations, frame, GAZE_GRID)?;
    GazeMap::new(normalize_l1(&gaussian_blur(&binary, TARGET_SIGMA)?)?)
}

/// One target per frame; `None` for frames with no fixation (masked out of the loss).
pub fn training_targets(records: &[FixationRecord], n_frames: usize) -> Result<Vec<Option<GazeMap>>> {
    let frames = group_by_frame(records);
    (0..n_frames)
        .map(|f| match frames.get(&f) {
            Some(fix) => make_training_target(fix, f).map(Some),
            None => Ok(None),
        })
        .collect()
}

/// Pixel coordinates of fixations on an `height×width` frame.
pub fn fixation_pixels(fixations: &[FixationRecord], height: usize, width: usize) -> Vec<(usize, usize)> {
    fixations.iter().map(|f| f.cell(height, width)).collect()
}

/// Mean over subjects of per-subject binary fixation maps at frame resolution.
pub fn averaged_subject_map(fixations: &[FixationRecord], height: usize, width: usize) -> Result<Grid> {
    let mut per_subject: BTreeMap<u32, Grid> = BTreeMap::new();
    for f in fixations {
        let (r, c) = f.cell(height, width);
        per_subject.entry(f.subject).or_insert_with(|| Grid::zeros(height, width)).set(r, c, 1.0);
    }
    let n = per_subject.len();
    if n == 0 {
        return Err(Error::NoFixation(fixations.first().map_or(0, |f| f.frame)));
    }
    let mut mean = Grid::zeros(height, width);
    for g in per_subject.values() {
        for (m, v) in mean.data_mut().iter_mut().zip(g.data()) {
            *m += v / n as f64;
        }
    }
    Ok(mean)
}

/// Prediction side of an evaluation pair: blur on the grid, bilinear upsample, min-max.
pub fn prepare_prediction(pred: &GazeMap, height: usize, width: usize) -> Result<Grid> {
    let blurred = gaussian_blur(pred.grid(), PRED_EVAL_SIGMA)?;
    normalize_minmax(&blurred.resize_bilinear(height, width))
}

/// Ground-truth side: averaged subject fixations, blur σ=19, min-max.
pub fn prepare_ground_truth(fixations: &[FixationRecord], height: usize, width: usize) -> Result<Grid> {
    let mean = averaged_subject_map(fixations, height, width)?;
    normalize_minmax(&gaussian_blur(&mean, GT_EVAL_SIGMA)?)
}

/// `(pred_eval, gt_eval)`, both `height×width` in `[0,1]`.
pub fn make_eval_pair(
    pred: &GazeMap,
    gt_fixations: &[FixationRecord],
    height: usize,
    width: usize,
) -> Result<(Grid, Grid)> {
    if height < GAZE_GRID || width < GAZE_GRID {
        return Err(Error::Config(format!("evaluation frame {height}×{width} smaller than the gaze grid")));
    }
    Ok((prepare_prediction(pred, height, width)?, prepare_ground_truth(gt_fixations, height, width)?))
}

/// Flip a `7×7×C` feature sequence and its targets along the width axis.
pub fn mirror_augment(features: &[Tensor], targets: &[Option<GazeMap>]) -> (Vec<Tensor>, Vec<Option<GazeMap>>) {
    let f = features.iter().map(|t| t.flip_axis(1)).collect();
    let t = targets.iter().map(|g| g.as_ref().map(GazeMap::mirrored)).collect();
    (f, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fix(frame: usize, subject: u32, x: f64, y: f64) -> FixationRecord {
        FixationRecord::new(frame, subject, x, y).unwrap()
    }

    #[test]
    fn binning_rule() {
        let m = build_fixation_map(&[fix(0, 0, 0.5, 0.5)], 0, 49).unwrap();
        assert_eq!(m.sum(), 1.0);
        assert_eq!(m.get(24, 24), 1.0);
        let m = build_fixation_map(&[fix(0, 0, 1.0, 1.0)], 0, 49).unwrap();
        assert_eq!(m.get(48, 48), 1.0);
        let m = build_fixation_map(&[fix(0, 0, 0.1, 0.2), fix(0, 1, 0.9, 0.7)], 0, 49).unwrap();
        assert_eq!(m.sum(), 2.0);
        // floor(0.2·49)=9, floor(0.1·49)=4; floor(0.7·49)=34, floor(0.9·49)=44
        assert_eq!(m.get(9, 4), 1.0);
        assert_eq!(m.get(34, 44), 1.0);
        assert!(matches!(build_fixation_map(&[], 3, 49), Err(Error::NoFixation(3))));
        assert!(FixationRecord::new(0, 0, 1.2, 0.0).is_err());
    }

    #[test]
    fn blur_identity_and_delta() {
        let g = Grid::from_fn(10, 10, |r, c| (r * 10 + c) as f64);
        assert_eq!(gaussian_blur(&g, 0.0).unwrap(), g);
        assert!(matches!(gaussian_blur(&g, -1.0), Err(Error::Config(_))));

        let mut delta = Grid::zeros(49, 49);
        delta.set(24, 24, 1.0);
        let b = gaussian_blur(&delta, 2.0).unwrap();
        // direct 2-D kernel evaluation: exp(−(dx²+dy²)/2σ²) / Z² with Z the 1-D sum over |d| ≤ 6
        let z: f64 = (-6i32..=6).map(|d| (-(d * d) as f64 / 8.0).exp()).sum();
        assert!((b.get(24, 24) - 1.0 / (z * z)).abs() < 1e-15);
        let off = (-(4.0 + 9.0) / 8.0f64).exp() / (z * z);
        assert!((b.get(26, 27) - off).abs() < 1e-15);
        assert!((b.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constant_interior() {
        let g = Grid::full(40, 40, 3.0);
        let b = gaussian_blur(&g, 2.0).unwrap();
        for r in 6..34 {
            for c in 6..34 {
                assert!((b.get(r, c) - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalizations() {
        let g = Grid::from_vec(1, 2, vec![0.5, 1.5]).unwrap();
        assert_eq!(normalize_l1(&g).unwrap().data(), &[0.25, 0.75]);
        let twice = normalize_l1(&normalize_l1(&g).unwrap()).unwrap();
        assert!(twice.data().iter().zip([0.25, 0.75]).all(|(a, b)| (a - b).abs() < 1e-12));
        let mm = normalize_minmax(&Grid::from_vec(1, 2, vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(mm.data(), &[0.0, 1.0]);
        assert!(matches!(normalize_l1(&Grid::zeros(3, 3)), Err(Error::DegenerateMap(_))));
        assert!(matches!(normalize_minmax(&Grid::full(3, 3, 2.0)), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn training_target_shape() {
        let t = make_training_target(&[fix(0, 0, 0.5, 0.5)], 0).unwrap();
        assert_eq!(t.grid().argmax(), (24, 24));
        assert!((t.grid().sum() - 1.0).abs() < 1e-6);

        let a = fix(0, 0, 10.5 / 49.0, 24.5 / 49.0);
        let b = fix(0, 1, 38.5 / 49.0, 24.5 / 49.0);
        let t = make_training_target(&[a, b], 0).unwrap();
        let (pa, pb) = (t.grid().get(24, 10), t.grid().get(24, 38));
        assert!((pa - pb).abs() < 1e-15, "mirrored peaks {pa} vs {pb}");
        assert!(pa > t.grid().get(24, 24) * 10.0);
    }

    #[test]
    fn target_is_mirror_equivariant() {
        let fx = [fix(0, 0, 0.2, 0.3), fix(0, 1, 0.75, 0.6)];
        let mirrored: Vec<_> = fx.iter().map(FixationRecord::mirrored).collect();
        let a = make_training_target(&fx, 0).unwrap();
        let b = make_training_target(&mirrored, 0).unwrap();
        assert!(a.mirrored().grid().l1_distance(b.grid()) < 1e-12);
    }

    #[test]
    fn eval_pair_peaks() {
        let mut g = Grid::full(49, 49, 1e-6);
        g.set(10, 30, 1.0);
        let pred = GazeMap::new(normalize_l1(&g).unwrap()).unwrap();
        let (p, gt) = make_eval_pair(&pred, &[fix(0, 0, 0.25, 0.75)], 98, 98).unwrap();
        let (r, c) = p.argmax();
        assert!((20..22).contains(&r) && (60..62).contains(&c), "argmax {r},{c}");
        assert_eq!(gt.argmax(), (73, 24));
        for m in [&p, &gt] {
            assert_eq!(m.min(), 0.0);
            assert_eq!(m.max(), 1.0);
        }
        let up = GazeMap::uniform().grid().resize_bilinear(60, 60);
        assert!(up.data().iter().all(|&v| (v - 1.0 / 2401.0).abs() < 1e-15));
        assert!(matches!(normalize_minmax(&up), Err(Error::DegenerateMap(_))));
        assert!(matches!(make_eval_pair(&pred, &[fix(0, 0, 0.5, 0.5)], 40, 60), Err(Error::Config(_))));
    }

    #[test]
    fn mirror_is_involution() {
        let f = vec![Tensor::from_fn(&[7, 7, 3], |i| i as f64)];
        let t = vec![Some(make_training_target(&[fix(0, 0, 0.1, 0.4)], 0).unwrap()), None];
        let (f1, t1) = mirror_augment(&f, &t);
        let (f2, t2) = mirror_augment(&f1, &t1);
        assert_eq!(f2, f);
        assert_eq!(t2, t);
        let mut delta = Grid::zeros(49, 49);
        delta.set(5, 11, 1.0);
        let d = GazeMap::new(delta).unwrap();
        assert_eq!(d.mirrored().grid().get(5, 37), 1.0);
        let sym = GazeMap::uniform();
        assert_eq!(sym.mirrored(), sym);
    }
}
