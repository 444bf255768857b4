//! Spatial attention from gaze maps, gaze-weighted feature vectors and the
//! fixed-length pools fed to the decoder.

use std::fmt;
use std::str::FromStr;

use gean_tensor::rng::{derive_seed, rng};
use gean_tensor::Tensor;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gaze::{gaussian_blur, normalize_l1, GazeMap, GAZE_GRID};
use crate::grid::Grid;

/// Side of the CNN feature grid.
pub const FEATURE_GRID: usize = 7;
pub const DEFAULT_LAMBDA: f64 = 0.6;
pub const SCENE_POOL: usize = 20;
pub const MOTION_POOL: usize = 35;
pub const FOVEA_POOL: usize = 35;

const BLOCK: usize = GAZE_GRID / FEATURE_GRID;
const FIXED_GAZE_SIGMA: f64 = 1.0;

/// A 7×7 distribution over feature cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttentionMap(Grid);

impl SpatialAttentionMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.shape() != (FEATURE_GRID, FEATURE_GRID) {
            return Err(Error::Dimension(format!("spatial attention must be 7×7, got {:?}", grid.shape())));
        }
        if grid.data().iter().any(|&v| !(v >= 0.0)) || (grid.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::Contract("spatial attention is not a distribution".into()));
        }
        Ok(SpatialAttentionMap(grid))
    }

    pub fn uniform() -> Self {
        SpatialAttentionMap(Grid::full(FEATURE_GRID, FEATURE_GRID, 1.0 / 49.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0.get(r, c)
    }
}

/// Mean-pool the gaze map to 7×7, add `λ/49` per cell, renormalize.
pub fn spatial_attention(g: &GazeMap, lambda: f64) -> Result<SpatialAttentionMap> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let src = g.grid();
    let mut mixed = Grid::from_fn(FEATURE_GRID, FEATURE_GRID, |i, j| {
        let mut acc = 0.0;
        for r in i * BLOCK..(i + 1) * BLOCK {
            for c in j * BLOCK..(j + 1) * BLOCK {
                acc += src.get(r, c);
            }
        }
        acc / (BLOCK * BLOCK) as f64
    });
    let u = lambda / (FEATURE_GRID * FEATURE_GRID) as f64;
    mixed.data_mut().iter_mut().for_each(|v| *v += u);
    SpatialAttentionMap::new(normalize_l1(&mixed)?)
}

/// `v(k) = Σ_ij α(i,j)·f(i,j,k)` over a `7×7×C` feature grid.
pub fn attend_features(alpha: &SpatialAttentionMap, f: &Tensor) -> Result<Vec<f64>> {
    let shape = f.shape();
    if shape.len() != 3 || shape[0] != FEATURE_GRID || shape[1] != FEATURE_GRID {
        return Err(Error::Dimension(format!("expected 7×7×C features, got {shape:?}")));
    }
    let c = shape[2];
    let mut v = vec![0.0; c];
    for (cell, a) in alpha.grid().data().iter().enumerate() {
        let row = &f.data()[cell * c..(cell + 1) * c];
        for (acc, x) in v.iter_mut().zip(row) {
            *acc += a * x;
        }
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Scene,
    Motion,
    Fovea,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Scene, Channel::Motion, Channel::Fovea];

    pub fn pool_size(self) -> usize {
        match self {
            Channel::Scene => SCENE_POOL,
            Channel::Motion => MOTION_POOL,
            Channel::Fovea => FOVEA_POOL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Scene => "scene",
            Channel::Motion => "motion",
            Channel::Fovea => "fovea",
        }
    }
}

/// Which frames of an `n`-frame clip fill `n_max` pool slots.
pub fn pool_indices(n: usize, n_max: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Contract("cannot build a pool from zero frames".into()));
    }
    if n_max == 0 {
        return Err(Error::Config("pool size must be positive".into()));
    }
    Ok(if n < n_max { (0..n_max).map(|i| i % n).collect() } else { (0..n_max).map(|i| i * n / n_max).collect() })
}

/// A fixed-length sequence of feature vectors, stored as an `n_max×D` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePool {
    pub channel: Channel,
    vectors: Tensor,
}

impl FeaturePool {
    pub fn from_matrix(channel: Channel, vectors: Tensor) -> Result<Self> {
        if vectors.ndim() != 2 {
            return Err(Error::Dimension(format!("pool must be a matrix, got {:?}", vectors.shape())));
        }
        Ok(FeaturePool { channel, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.data()[i * d..(i + 1) * d]
    }

    /// Reorder pool slots; `perm[i]` is the source slot of new slot `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let rows: Vec<Tensor> = perm.iter().map(|&i| Tensor::vector(self.vector(i).to_vec())).collect();
        FeaturePool::from_matrix(self.channel, Tensor::stack(&rows)?)
    }
}

/// Pad cyclically or subsample uniformly to exactly `n_max` vectors.
pub fn build_pool(channel: Channel, vectors: &[Vec<f64>], n_max: usize) -> Result<FeaturePool> {
    let idx = pool_indices(vectors.len(), n_max)?;
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("pool vectors must share a positive dimension".into()));
    }
    let mut data = Vec::with_capacity(n_max * d);
    for i in idx {
        data.extend_from_slice(&vectors[i]);
    }
    FeaturePool::from_matrix(channel, Tensor::new(&[n_max, d], data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GazeKind {
    Learned,
    /// Attend with the recorded fixations instead of the RGP prediction.
    Human,
    Uniform,
    Random,
    Central,
    Peripheral,
}

impl GazeKind {
    pub fn is_fixed(self) -> bool {
        matches!(self, GazeKind::Uniform | GazeKind::Random | GazeKind::Central | GazeKind::Peripheral)
    }
}

impl FromStr for GazeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "learned" => GazeKind::Learned,
            "human" => GazeKind::Human,
            "uniform" => GazeKind::Uniform,
            "random" => GazeKind::Random,
            "central" => GazeKind::Central,
            "peripheral" => GazeKind::Peripheral,
            other => return Err(Error::Config(format!("unknown gaze kind {other:?}"))),
        })
    }
}

impl fmt::Display for GazeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GazeKind::Learned => "learned",
            GazeKind::Human => "human",
            GazeKind::Uniform => "uniform",
            GazeKind::Random => "random",
            GazeKind::Central => "central",
            GazeKind::Peripheral => "peripheral",
        };
        f.write_str(s)
    }
}

fn blurred_peak(r: usize, c: usize) -> Result<Grid> {
    let mut g = Grid::zeros(FEATURE_GRID, FEATURE_GRID);
    g.set(r, c, 1.0);
    normalize_l1(&gaussian_blur(&g, FIXED_GAZE_SIGMA)?)
}

/// Hand-designed attention maps used as baselines. `seed` only matters for `Random`.
pub fn fixed_gaze(kind: GazeKind, seed: u64) -> Result<SpatialAttentionMap> {
    let centre = FEATURE_GRID / 2;
    let grid = match kind {
        GazeKind::Uniform => return Ok(SpatialAttentionMap::uniform()),
        GazeKind::Random => {
            let mut r = rng(derive_seed(seed, 0x6761_7a65));
            let cell = r.random_range(0..FEATURE_GRID * FEATURE_GRID);
            blurred_peak(cell / FEATURE_GRID, cell % FEATURE_GRID)?
        }
        GazeKind::Central => blurred_peak(centre, centre)?,
        GazeKind::Peripheral => {
            let central = blurred_peak(centre, centre)?;
            let top = central.max();
            normalize_l1(&central.map(|v| top - v))?
        }
        GazeKind::Learned | GazeKind::Human => {
            return Err(Error::Config(format!("{kind} gaze is not a fixed map")));
        }
    };
    SpatialAttentionMap::new(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_gaze(bi: usize, bj: usize) -> GazeMap {
        let g = Grid::from_fn(49, 49, |r, c| if r / 7 == bi && c / 7 == bj { 1.0 / 49.0 } else { 0.0 });
        GazeMap::new(g).unwrap()
    }

    #[test]
    fn attention_closed_form() {
        let a = spatial_attention(&block_gaze(0, 0), 0.6).unwrap();
        assert!((a.get(0, 0) - 1.0 / 19.0).abs() < 1e-12);
        assert!((a.get(3, 5) - 3.0 / 152.0).abs() < 1e-12);
        let u = spatial_attention(&GazeMap::uniform(), 0.6).unwrap();
        assert!(u.grid().data().iter().all(|&v| (v - 1.0 / 49.0).abs() < 1e-15));
        let onehot = spatial_attention(&block_gaze(2, 4), 0.0).unwrap();
        assert!((onehot.get(2, 4) - 1.0).abs() < 1e-12);
        assert_eq!(onehot.grid().sum(), onehot.get(2, 4));
        assert!(spatial_attention(&GazeMap::uniform(), -0.1).is_err());
    }

    #[test]
    fn attend_examples() {
        let f = Tensor::from_fn(&[7, 7, 3], |i| (i / 21) as f64);
        let v = attend_features(&SpatialAttentionMap::uniform(), &f).unwrap();
        assert!(v.iter().all(|&x| (x - 3.0).abs() < 1e-12));

        let f = Tensor::from_fn(&[7, 7, 4], |i| (i as f64).sin());
        let mut g = Grid::zeros(7, 7);
        g.set(5, 2, 1.0);
        let v = attend_features(&SpatialAttentionMap::new(g).unwrap(), &f).unwrap();
        for k in 0..4 {
            assert_eq!(v[k], f.at(&[5, 2, k]));
        }
        assert!(attend_features(&SpatialAttentionMap::uniform(), &Tensor::zeros(&[6, 7, 2])).is_err());
    }

    #[test]
    fn pool_rules() {
        assert_eq!(pool_indices(2, 5).unwrap(), vec![0, 1, 0, 1, 0]);
        assert_eq!(pool_indices(35, 35).unwrap(), (0..35).collect::<Vec<_>>());
        assert_eq!(pool_indices(70, 35).unwrap(), (0..35).map(|i| 2 * i).collect::<Vec<_>>());
        assert!(matches!(pool_indices(0, 5), Err(Error::Contract(_))));
        let vs = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let p = build_pool(Channel::Scene, &vs, 5).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.vector(4), &[1.0, 2.0]);
        assert_eq!(p.vector(3), &[3.0, 4.0]);
    }

    #[test]
    fn fixed_maps() {
        let u = fixed_gaze(GazeKind::Uniform, 0).unwrap();
        assert!(u.grid().data().iter().all(|&v| v == 1.0 / 49.0));
        let c = fixed_gaze(GazeKind::Central, 0).unwrap();
        assert_eq!(c.grid().argmax(), (3, 3));
        let p = fixed_gaze(GazeKind::Peripheral, 0).unwrap();
        assert_eq!(p.get(3, 3), 0.0);
        assert_eq!(p.grid().min(), 0.0);
        let rot = Grid::from_fn(7, 7, |r, c| p.get(6 - c, r));
        assert!(rot.l1_distance(p.grid()) < 1e-15);
        let r1 = fixed_gaze(GazeKind::Random, 5).unwrap();
        assert_eq!(r1, fixed_gaze(GazeKind::Random, 5).unwrap());
        assert!((r1.grid().sum() - 1.0).abs() < 1e-12);
        assert!(fixed_gaze(GazeKind::Learned, 0).is_err());
        assert!("sideways".parse::<GazeKind>().is_err());
        assert_eq!("peripheral".parse::<GazeKind>().unwrap(), GazeKind::Peripheral);
    }
}
