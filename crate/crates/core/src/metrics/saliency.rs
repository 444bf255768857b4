//! Saliency agreement: histogram intersection, Pearson CC, AUC-Judd and shuffled AUC.

use std::collections::BTreeSet;

use gean_tensor::rng::rng;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::grid::Grid;

fn l1_normalized(m: &Grid) -> Result<Vec<f64>> {
    let s = m.sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateMap("map has no mass".into()));
    }
    Ok(m.data().iter().map(|v| v / s).collect())
}

/// `Σ min(p̂, q̂)` of the ℓ1-normalized maps.
pub fn sim(p: &Grid, q: &Grid) -> Result<f64> {
    check_shapes(p, q)?;
    let (a, b) = (l1_normalized(p)?, l1_normalized(q)?);
    Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum())
}

/// Pearson correlation of the flattened maps.
pub fn cc(p: &Grid, q: &Grid) -> Result<f64> {
    check_shapes(p, q)?;
    pearson(p.data(), q.data())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::DegenerateMap("correlation of a constant map".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn check_shapes(p: &Grid, q: &Grid) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(Error::Dimension(format!("maps {:?} and {:?}", p.shape(), q.shape())));
    }
    Ok(())
}

/// ROC area with thresholds at the distinct positive scores (descending), ties
/// counted as above threshold, closed at (0,0) and (1,1).
pub fn roc_area(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Contract("no positive samples".into()));
    }
    let mut pos = positives.to_vec();
    let mut neg = negatives.to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| b.total_cmp(a));
    let (np, nn) = (pos.len() as f64, neg.len().max(1) as f64);
    let mut area = 0.0;
    let (mut last_fpr, mut last_tpr) = (0.0, 0.0);
    let mut i = 0;
    while i < pos.len() {
        let theta = pos[i];
        while i < pos.len() && pos[i] >= theta {
            i += 1;
        }
        let tpr = i as f64 / np;
        let fpr = neg.partition_point(|&v| v >= theta) as f64 / nn;
        area += (fpr - last_fpr) * (tpr + last_tpr) / 2.0;
        last_fpr = fpr;
        last_tpr = tpr;
    }
    area += (1.0 - last_fpr) * (1.0 + last_tpr) / 2.0;
    Ok(area)
}

fn distinct(pixels: &[(usize, usize)], map: &Grid) -> Result<BTreeSet<(usize, usize)>> {
    let (h, w) = map.shape();
    let set: BTreeSet<_> = pixels.iter().copied().collect();
    if let Some(&(r, c)) = set.iter().find(|&&(r, c)| r >= h || c >= w) {
        return Err(Error::Dimension(format!("fixation pixel ({r},{c}) outside {h}×{w}")));
    }
    Ok(set)
}

/// AUC with every non-fixated pixel as a negative.
pub fn auc_judd(saliency: &Grid, fixations: &[(usize, usize)]) -> Result<f64> {
    if fixations.is_empty() {
        return Err(Error::Contract("AUC needs at least one fixation".into()));
    }
    let fix = distinct(fixations, saliency)?;
    let pos: Vec<f64> = fix.iter().map(|&(r, c)| saliency.get(r, c)).collect();
    let (h, w) = saliency.shape();
    let mut neg = Vec::with_capacity(h * w - fix.len());
    for r in 0..h {
        for c in 0..w {
            if !fix.contains(&(r, c)) {
                neg.push(saliency.get(r, c));
            }
        }
    }
    roc_area(&pos, &neg)
}

/// Candidate negatives for shuffled AUC, addressable by index.
pub trait PixelPool {
    fn len(&self) -> usize;
    fn pixel(&self, i: usize) -> (usize, usize);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PixelPool for [(usize, usize)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn pixel(&self, i: usize) -> (usize, usize) {
        self[i]
    }
}

/// AUC with negatives drawn from other stimuli's fixations, averaged over `n_splits` draws.
pub fn sauc(
    saliency: &Grid,
    fixations: &[(usize, usize)],
    shuffle_pool: &[(usize, usize)],
    n_splits: usize,
    seed: u64,
) -> Result<f64> {
    sauc_pool(saliency, fixations, shuffle_pool, n_splits, seed)
}

pub fn sauc_pool<P: PixelPool + ?Sized>(
    saliency: &Grid,
    fixations: &[(usize, usize)],
    shuffle_pool: &P,
    n_splits: usize,
    seed: u64,
) -> Result<f64> {
    if fixations.is_empty() {
        return Err(Error::Contract("sAUC needs at least one fixation".into()));
    }
    if shuffle_pool.is_empty() {
        return Err(Error::Contract("sAUC needs a non-empty shuffle pool".into()));
    }
    if n_splits == 0 {
        return Err(Error::Config("sAUC needs at least one split".into()));
    }
    let fix = distinct(fixations, saliency)?;
    let pos: Vec<f64> = fix.iter().map(|&(r, c)| saliency.get(r, c)).collect();
    let k = pos.len().min(shuffle_pool.len());
    let (h, w) = saliency.shape();
    let mut r = rng(seed);
    let mut total = 0.0;
    for _ in 0..n_splits {
        // Pools can be large; only the drawn pixels are bounds-checked.
        let mut neg = Vec::with_capacity(k);
        for i in sample(&mut r, shuffle_pool.len(), k).iter() {
            let (y, x) = shuffle_pool.pixel(i);
            if y >= h || x >= w {
                return Err(Error::Dimension(format!("shuffle pixel ({y},{x}) outside {h}×{w}")));
            }
            neg.push(saliency.get(y, x));
        }
        total += roc_area(&pos, &neg)?;
    }
    Ok(total / n_splits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_examples() {
        let p = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as f64 + 1.0);
        assert!((sim(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let a = Grid::from_vec(1, 4, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Grid::from_vec(1, 4, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(sim(&a, &b).unwrap(), 0.0);
        let u = Grid::from_vec(1, 4, vec![0.25; 4]).unwrap();
        let one = Grid::from_vec(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((sim(&u, &one).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(sim(&Grid::zeros(1, 4), &u), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn cc_examples() {
        let p = Grid::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let q = Grid::from_vec(1, 4, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((cc(&p, &q).unwrap() - 0.8).abs() < 1e-12);
        assert!((cc(&p, &p.map(|v| 3.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((cc(&p, &p.map(|v| 5.0 - v)).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cc(&p, &Grid::full(1, 4, 2.0)), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn auc_examples() {
        let s = Grid::from_fn(5, 5, |r, c| if (r, c) == (1, 1) || (r, c) == (3, 2) { 10.0 } else { (r + c) as f64 * 0.1 });
        assert_eq!(auc_judd(&s, &[(1, 1), (3, 2)]).unwrap(), 1.0);
        assert_eq!(auc_judd(&Grid::full(5, 5, 0.3), &[(0, 0), (4, 4)]).unwrap(), 0.5);
        assert!(matches!(auc_judd(&s, &[]), Err(Error::Contract(_))));
        assert!(auc_judd(&s, &[(5, 0)]).is_err());
    }

    #[test]
    fn roc_hand_example() {
        // positives {0.9, 0.4}, negatives {0.8, 0.3}:
        // θ=0.9 gives (0, ½), θ=0.4 gives (½, 1), then (1, 1).
        // trapezoids: 0 + ½·(½+1)/2 + ½·(1+1)/2 = 0.875
        assert!((roc_area(&[0.9, 0.4], &[0.8, 0.3]).unwrap() - 0.875).abs() < 1e-15);
    }

    #[test]
    fn sauc_examples() {
        let s = Grid::from_fn(6, 6, |r, c| (r * 6 + c) as f64);
        let fix = [(5, 5), (5, 4)];
        let pool = [(0, 0), (1, 2), (2, 3), (0, 5)];
        assert_eq!(sauc(&s, &fix, &pool, 10, 1).unwrap(), 1.0);
        assert_eq!(sauc(&Grid::full(6, 6, 1.0), &fix, &pool, 10, 1).unwrap(), 0.5);
        assert_eq!(sauc(&s, &fix, &pool, 10, 3).unwrap(), sauc(&s, &fix, &pool, 10, 3).unwrap());
        assert!(matches!(sauc(&s, &fix, &[], 10, 1), Err(Error::Contract(_))));
    }
}
