//! Forward math on plain tensors. Nothing here touches a tape, so every
//! function is reentrant.
//!
//! Spatial tensors are stored `H×W×C` (channels last). Convolution kernels
//! are `kh×kw×Cin×Cout`; transposed-convolution kernels are `kh×kw×Cout×Cin`
//! so that a transposed convolution is exactly the adjoint of the forward
//! convolution that uses the same kernel buffer.

use crate::error::{dim_err, Result};
use crate::Tensor;

pub const STANH_SCALE: f64 = 1.7159;
pub const STANH_SLOPE: f64 = 2.0 / 3.0;

/// `c = a·b + beta·c` with optional transposes; all buffers row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the pointer/stride pairs describe exactly the m×k, k×n and m×n
    // buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Plain `[m,k]·[k,n]` product with optional transposes of the stored operands.
pub fn matmul(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return dim_err(format!("matmul needs matrices, got {:?} and {:?}", a.shape(), b.shape()));
    }
    let (m, k) = if trans_a { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
    let (k2, n) = if trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
    if k != k2 {
        return dim_err(format!("matmul inner mismatch {:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), trans_a, b.data(), trans_b, 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.ndim() != 2 || x.ndim() != 1 || w.shape()[1] != x.len() {
        return dim_err(format!("matvec {:?} x {:?}", w.shape(), x.shape()));
    }
    let n = x.len();
    let out = w
        .data()
        .chunks_exact(n)
        .map(|row| row.iter().zip(x.data()).map(|(a, b)| a * b).sum())
        .collect();
    Ok(Tensor::vector(out))
}

/// `W·x + b`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matvec(w, x)?;
    y.add_assign(b)?;
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// `1.7159·tanh(2x/3)`
    Stanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Stanh => STANH_SCALE * (STANH_SLOPE * x).tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Stanh => {
                let t = y / STANH_SCALE;
                STANH_SCALE * STANH_SLOPE * (1.0 - t * t)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

/// Softmax over all entries (the tensor is treated as flat), stabilized by
/// subtracting the maximum.
pub fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(x.shape(), exps.into_iter().map(|e| e / total).collect()).unwrap()
}

pub fn log_softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.data().iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    x.map(|v| v - lse)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Geometry of a forward convolution of `input` (`H×W×Cin`) with `kernel`
    /// (`kh×kw×Cin×Cout`).
    pub fn conv(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return dim_err(format!("conv2d expects H×W×C input and 4-d kernel, got {input:?} / {kernel:?}"));
        }
        if stride == 0 {
            return dim_err("stride must be >= 1");
        }
        let (h, w, c) = (input[0], input[1], input[2]);
        let (kh, kw, kc, oc) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c {
            return dim_err(format!("kernel expects {kc} input channels, input has {c}"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return dim_err(format!("kernel {kh}×{kw} larger than padded input {h}×{w} (pad {pad})"));
        }
        Ok(ConvGeometry {
            in_h: h,
            in_w: w,
            in_c: c,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
            out_c: oc,
            kh,
            kw,
            stride,
            pad,
        })
    }

    /// Geometry of the forward convolution whose adjoint maps `input`
    /// (`H×W×Cin`) through a transposed kernel (`kh×kw×Cout×Cin`).
    /// The returned geometry's *input* is the transposed convolution's output.
    pub fn conv_transpose(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return dim_err(format!(
                "conv_transpose2d expects H×W×C input and 4-d kernel, got {input:?} / {kernel:?}"
            ));
        }
        if stride == 0 {
            return dim_err("stride must be >= 1");
        }
        let (h, w, c) = (input[0], input[1], input[2]);
        let (kh, kw, oc, kc) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c {
            return dim_err(format!("transposed kernel expects {kc} input channels, input has {c}"));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        if oh <= 2 * pad || ow <= 2 * pad {
            return dim_err(format!("transposed convolution output extent is not positive (pad {pad})"));
        }
        Ok(ConvGeometry {
            in_h: oh - 2 * pad,
            in_w: ow - 2 * pad,
            in_c: oc,
            out_h: h,
            out_w: w,
            out_c: c,
            kh,
            kw,
            stride,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        // f(output position, column offset of tap, input pixel offset)
        let (s, p) = (self.stride as isize, self.pad as isize);
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = oy * self.out_w + ox;
                for ky in 0..self.kh {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let col = (ky * self.kw + kx) * self.in_c;
                        let pix = (iy as usize * self.in_w + ix as usize) * self.in_c;
                        f(row, col, pix);
                    }
                }
            }
        }
    }

    pub(crate) fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let patch = self.patch();
        let c = self.in_c;
        let mut cols = vec![0.0; self.positions() * patch];
        self.for_each_tap(|row, col, pix| {
            let dst = row * patch + col;
            cols[dst..dst + c].copy_from_slice(&input[pix..pix + c]);
        });
        cols
    }

    pub(crate) fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let patch = self.patch();
        let c = self.in_c;
        let mut out = vec![0.0; self.in_h * self.in_w * c];
        self.for_each_tap(|row, col, pix| {
            let src = row * patch + col;
            for (o, v) in out[pix..pix + c].iter_mut().zip(&cols[src..src + c]) {
                *o += v;
            }
        });
        out
    }

    pub(crate) fn input_shape(&self) -> [usize; 3] {
        [self.in_h, self.in_w, self.in_c]
    }

    pub(crate) fn output_shape(&self) -> [usize; 3] {
        [self.out_h, self.out_w, self.out_c]
    }

    /// Forward convolution: `input` has `input_shape()`, result `output_shape()`.
    pub(crate) fn forward(&self, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let cols = self.im2col(input);
        let mut out = vec![0.0; self.positions() * self.out_c];
        gemm(self.positions(), self.patch(), self.out_c, &cols, false, kernel, false, 0.0, &mut out);
        out
    }

    /// Adjoint of `forward` with respect to its input.
    pub(crate) fn adjoint(&self, grad_out: &[f64], kernel: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.positions() * self.patch()];
        gemm(self.positions(), self.out_c, self.patch(), grad_out, false, kernel, true, 0.0, &mut cols);
        self.col2im(&cols)
    }

    /// Gradient of `⟨forward(input, k), grad_out⟩` with respect to `k`.
    pub(crate) fn kernel_grad(&self, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let cols = self.im2col(input);
        let mut gk = vec![0.0; self.patch() * self.out_c];
        gemm(self.patch(), self.positions(), self.out_c, &cols, true, grad_out, false, 0.0, &mut gk);
        gk
    }
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::conv(input.shape(), kernel.shape(), stride, pad)?;
    Tensor::new(&g.output_shape(), g.forward(input.data(), kernel.data()))
}

pub fn conv_transpose2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::conv_transpose(input.shape(), kernel.shape(), stride, pad)?;
    Tensor::new(&g.input_shape(), g.adjoint(input.data(), kernel.data()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(shape: &[usize], kh: usize, kw: usize, stride: usize) -> Result<Self> {
        let (h, w, c) = match shape {
            [h, w] => (*h, *w, 1),
            [h, w, c] => (*h, *w, *c),
            _ => return dim_err(format!("avg_pool2d expects H×W or H×W×C, got {shape:?}")),
        };
        if stride == 0 || kh == 0 || kw == 0 {
            return dim_err("pool window and stride must be >= 1");
        }
        if kh > h || kw > w {
            return dim_err(format!("pool window {kh}×{kw} larger than input {h}×{w}"));
        }
        Ok(PoolGeometry { h, w, c, kh, kw, stride, out_h: (h - kh) / stride + 1, out_w: (w - kw) / stride + 1 })
    }

    pub(crate) fn output_shape(&self, input_rank: usize) -> Vec<usize> {
        if input_rank == 2 {
            vec![self.out_h, self.out_w]
        } else {
            vec![self.out_h, self.out_w, self.c]
        }
    }

    pub(crate) fn forward(&self, input: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (self.kh * self.kw) as f64;
        let mut out = vec![0.0; self.out_h * self.out_w * self.c];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let dst = (oy * self.out_w + ox) * self.c;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let src = ((oy * self.stride + ky) * self.w + ox * self.stride + kx) * self.c;
                        for ch in 0..self.c {
                            out[dst + ch] += input[src + ch];
                        }
                    }
                }
                out[dst..dst + self.c].iter_mut().for_each(|v| *v *= scale);
            }
        }
        out
    }

    pub(crate) fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (self.kh * self.kw) as f64;
        let mut grad = vec![0.0; self.h * self.w * self.c];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let src = (oy * self.out_w + ox) * self.c;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = ((oy * self.stride + ky) * self.w + ox * self.stride + kx) * self.c;
                        for ch in 0..self.c {
                            grad[dst + ch] += grad_out[src + ch] * scale;
                        }
                    }
                }
            }
        }
        grad
    }
}

pub fn avg_pool2d(input: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor> {
    let g = PoolGeometry::new(input.shape(), kh, kw, stride)?;
    Tensor::new(&g.output_shape(input.ndim()), g.forward(input.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    /// Direct six-loop convolution used as an oracle.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, _, oc) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[oh, ow, oc]);
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..oc {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for i in 0..c {
                                acc += x.at(&[iy as usize, ix as usize, i]) * k.at(&[ky, kx, i, o]);
                            }
                        }
                    }
                    out.set(&[oy, ox, o], acc);
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn conv_identity_kernel() {
        let x = pseudo(&[4, 5, 3], 1);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for i in 0..3 {
            k.set(&[0, 0, i, i], 1.0);
        }
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_ones_sums_nine() {
        let x = Tensor::full(&[5, 5, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_zero_kernel() {
        let x = pseudo(&[6, 6, 2], 3);
        let y = conv2d(&x, &Tensor::zeros(&[3, 3, 2, 4]), 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_direct_summation() {
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let x = pseudo(&[7, 6, 3], 11 + stride as u64);
            let k = pseudo(&[3, 3, 3, 2], 5 + pad as u64);
            let fast = conv2d(&x, &k, stride, pad).unwrap();
            let slow = conv_oracle(&x, &k, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!(close(*a, *b, 1e-12));
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[5, 5, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(crate::TensorError::Dimension(_))));
    }

    #[test]
    fn conv_transpose_single_pixel() {
        let x = Tensor::full(&[1, 1, 1], 1.0);
        let k = Tensor::full(&[4, 4, 1, 1], 1.0);
        let y = conv_transpose2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_transpose_zero_input() {
        let y = conv_transpose2d(&Tensor::zeros(&[3, 3, 2]), &pseudo(&[4, 4, 3, 2], 8), 2, 1).unwrap();
        assert_eq!(y.shape(), &[6, 6, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_transpose_non_positive_extent() {
        let k = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(conv_transpose2d(&Tensor::zeros(&[1, 1, 1]), &k, 1, 1).is_err());
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        for seed in 0..20u64 {
            let x = pseudo(&[3, 3, 2], seed);
            let k = pseudo(&[4, 4, 3, 2], seed + 100);
            let y = conv_transpose2d(&x, &k, 2, 1).unwrap();
            let probe = pseudo(y.shape(), seed + 200);
            let lhs = conv2d(&probe, &k, 2, 1).unwrap().dot(&x).unwrap();
            let rhs = y.dot(&probe).unwrap();
            assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn pooling_examples() {
        let c = avg_pool2d(&Tensor::full(&[6, 6, 2], 3.5), 3, 3, 3).unwrap();
        assert!(c.data().iter().all(|&v| close(v, 3.5, 1e-15)));
        let x = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(avg_pool2d(&x, 2, 2, 2).unwrap().data(), &[4.0]);
        let mut g = Tensor::zeros(&[49, 49]);
        for r in 0..7 {
            for c in 0..7 {
                g.set(&[r, c], 1.0 / 49.0);
            }
        }
        let p = avg_pool2d(&g, 7, 7, 7).unwrap();
        assert!(close(p.at(&[0, 0]), 1.0 / 49.0, 1e-15));
        assert_eq!(p.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(avg_pool2d(&x, 3, 3, 1).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Stanh.apply(0.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        // 1.7159·tanh(1.0)
        assert!(close(Activation::Stanh.apply(1.5), 1.306_819_412, 1e-9));
        let x = Tensor::vector(vec![1.0, -2.0]);
        let mut eye = Tensor::zeros(&[2, 2]);
        eye.set(&[0, 0], 1.0);
        eye.set(&[1, 1], 1.0);
        assert_eq!(affine(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        assert!(affine(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn softmax_values() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        for (a, b) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!(close(*a, b, 1e-5));
        }
        assert_eq!(softmax(&Tensor::vector(vec![-4.2])).data(), &[1.0]);
    }
}
