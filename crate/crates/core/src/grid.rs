//! Small dense 2-D maps (gaze grids, attention maps, evaluation saliency maps).

use gean_tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid extents must be positive");
        Grid { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!("{rows}×{cols} grid from {} values", data.len())));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid extents must be positive");
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Grid { rows, cols, data }
    }

    /// Accepts `H×W` or `H×W×1` tensors.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [r, c] | [r, c, 1] => Grid::from_vec(*r, *c, t.data().to_vec()),
            s => Err(Error::Dimension(format!("expected H×W map, got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.rows, self.cols], self.data.clone()).expect("grid shape is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row-major first position of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: f64) -> Grid {
        self.map(|v| v * s)
    }

    /// Mirror along the width axis.
    pub fn flip_cols(&self) -> Grid {
        Grid::from_fn(self.rows, self.cols, |r, c| self.get(r, self.cols - 1 - c))
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn l1_distance(&self, other: &Grid) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, rows: usize, cols: usize) -> Grid {
        let sy = self.rows as f64 / rows as f64;
        let sx = self.cols as f64 / cols as f64;
        let coord = |dst: usize, scale: f64, extent: usize| -> (usize, usize, f64) {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, src - lo as f64)
        };
        let mut out = Grid::zeros(rows, cols);
        for r in 0..rows {
            let (r0, r1, fy) = coord(r, sy, self.rows);
            for c in 0..cols {
                let (c0, c1, fx) = coord(c, sx, self.cols);
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let top = lerp(self.get(r0, c0), self.get(r0, c1), fx);
                let bottom = lerp(self.get(r1, c0), self.get(r1, c1), fx);
                out.set(r, c, lerp(top, bottom, fy));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_of_constant_is_constant() {
        let g = Grid::full(49, 49, 0.25).resize_bilinear(120, 90);
        assert!(g.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn bilinear_identity_at_same_size() {
        let g = Grid::from_fn(5, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(g.resize_bilinear(5, 4), g);
    }

    #[test]
    fn flip_and_argmax() {
        let mut g = Grid::zeros(3, 4);
        g.set(1, 0, 2.0);
        assert_eq!(g.argmax(), (1, 0));
        assert_eq!(g.flip_cols().argmax(), (1, 3));
        assert_eq!(g.flip_cols().flip_cols(), g);
    }
}
