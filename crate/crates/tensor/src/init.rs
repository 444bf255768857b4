//! Parameter initializers.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;
use crate::Tensor;

/// `(fan_in, fan_out)` for matrices `[out, in]`, conv kernels
/// `[kh, kw, a, b]` and vectors.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [kh, kw, a, b] => (kh * kw * a, kh * kw * b),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier(shape: &[usize], rng: &mut Rng) -> Tensor {
    let (fi, fo) = fans(shape);
    let limit = (6.0 / (fi + fo) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

pub fn gaussian(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// Matrix with orthonormal rows or columns, whichever is shorter.
///
/// QR of a Gaussian matrix; columns of Q are multiplied by sign(diag R) so
/// the result is uniformly distributed over the orthogonal group.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    // q is tall×short with orthonormal columns.
    let data = if rows >= cols {
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect()
    } else {
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| q[(j, i)]).collect()
    };
    Tensor::new(&[rows, cols], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::matmul;
    use crate::rng::rng;

    fn assert_identity(m: &Tensor, tol: f64) {
        let n = m.shape()[0];
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.at(&[i, j]) - want).abs() < tol, "({i},{j}) = {}", m.at(&[i, j]));
            }
        }
    }

    #[test]
    fn orthogonal_square() {
        let q = orthogonal(4, 4, &mut rng(7));
        assert_identity(&matmul(&q, true, &q, false).unwrap(), 1e-10);
    }

    #[test]
    fn orthogonal_rectangular() {
        let wide = orthogonal(3, 8, &mut rng(1));
        assert_identity(&matmul(&wide, false, &wide, true).unwrap(), 1e-10);
        let tall = orthogonal(8, 3, &mut rng(2));
        assert_identity(&matmul(&tall, true, &tall, false).unwrap(), 1e-10);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let a = xavier(&[3, 3, 4, 5], &mut rng(3));
        let limit = (6.0f64 / (36.0 + 45.0)).sqrt();
        assert!(a.data().iter().all(|v| v.abs() < limit));
        assert_eq!(a, xavier(&[3, 3, 4, 5], &mut rng(3)));
    }
}
