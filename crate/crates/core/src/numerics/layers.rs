//! Forward and backward kernels for the differentiable layers.
//!
//! Convolutions use true-convolution orientation with symmetric "same" zero
//! padding: for an odd kernel `w` of length `k` and `h = (k - 1) / 2`,
//! `y[t] = sum_j w[j] * x[t + h - j]`. With `w = [1, 0, 0]` the output is the
//! input shifted one step to the left.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tensor::Tensor;
use crate::error::{invalid_config, invalid_input, Result};

/// Geometry of a convolution over `[c_in, rows, len]` inputs. With
/// `kernel_rows == 1` the rows are an independent batch of 1D sequences;
/// otherwise the kernel also slides across rows (same-padded 2D).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub rows: usize,
    pub len: usize,
    pub kernel_rows: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        self.validate_kernel()?;
        if self.kernel > self.len {
            return Err(invalid_config!(
                "kernel {} longer than sequence {}",
                self.kernel,
                self.len
            ));
        }
        Ok(())
    }

    /// Odd kernel only; rows shorter than the kernel simply see fewer taps.
    pub fn validate_kernel(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel_rows % 2 == 0 {
            return Err(invalid_config!(
                "convolution kernel must be odd, got {}x{}",
                self.kernel_rows,
                self.kernel
            ));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.rows * self.len
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.rows * self.len
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel_rows * self.kernel
    }

    /// For kernel tap `j`, the input offset `h - j` and the output range where
    /// the shifted input stays inside `0..len`.
    fn tap(&self, j: usize) -> (isize, usize, usize) {
        shifted_range(self.kernel, j, self.len)
    }

    /// Same as [`tap`](Self::tap) across rows for kernel row `i`.
    fn row_tap(&self, i: usize) -> (isize, usize, usize) {
        shifted_range(self.kernel_rows, i, self.rows)
    }

    fn weight_index(&self, co: usize, ci: usize, i: usize, j: usize) -> usize {
        ((co * self.c_in + ci) * self.kernel_rows + i) * self.kernel + j
    }
}

fn shifted_range(kernel: usize, j: usize, len: usize) -> (isize, usize, usize) {
    let off = (kernel / 2) as isize - j as isize;
    let len = len as isize;
    let lo = (-off).clamp(0, len) as usize;
    let hi = (len - off).clamp(0, len) as usize;
    (off, lo, hi.max(lo))
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Calls `f(dst_offset, src_offset, count)` for every row pair and column run
/// that kernel tap `(i, j)` connects, offsets relative to one channel plane.
#[inline]
fn for_each_run(g: &ConvGeometry, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize)) {
    let l = g.len;
    let (roff, rlo, rhi) = g.row_tap(i);
    let (off, lo, hi) = g.tap(j);
    if lo >= hi {
        return;
    }
    for row in rlo..rhi {
        let src_row = (row as isize + roff) as usize;
        f(row * l + lo, src_row * l + (lo as isize + off) as usize, hi - lo);
    }
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    debug_assert_eq!(x.len(), g.input_len());
    debug_assert_eq!(w.len(), g.weight_len());
    let plane = g.rows * g.len;
    let mut y = vec![0.0; g.output_len()];
    for co in 0..g.c_out {
        let y_c = &mut y[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            y_c.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.c_in {
            let x_c = &x[ci * plane..(ci + 1) * plane];
            for i in 0..g.kernel_rows {
                for j in 0..g.kernel {
                    let wv = w[g.weight_index(co, ci, i, j)];
                    if wv == 0.0 {
                        continue;
                    }
                    for_each_run(g, i, j, |d, s, n| axpy(&mut y_c[d..d + n], wv, &x_c[s..s + n]));
                }
            }
        }
    }
    y
}

/// Accumulates input, weight and bias gradients of [`conv1d_forward`].
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeometry,
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let plane = g.rows * g.len;
    if let Some(gb) = gb {
        for co in 0..g.c_out {
            gb[co] += gy[co * plane..(co + 1) * plane].iter().sum::<f64>();
        }
    }
    if let Some(gw) = gw {
        for co in 0..g.c_out {
            let gy_c = &gy[co * plane..(co + 1) * plane];
            for ci in 0..g.c_in {
                let x_c = &x[ci * plane..(ci + 1) * plane];
                for i in 0..g.kernel_rows {
                    for j in 0..g.kernel {
                        let mut acc = 0.0;
                        for_each_run(g, i, j, |d, s, n| acc += dot(&gy_c[d..d + n], &x_c[s..s + n]));
                        gw[g.weight_index(co, ci, i, j)] += acc;
                    }
                }
            }
        }
    }
    if let Some(gx) = gx {
        for co in 0..g.c_out {
            let gy_c = &gy[co * plane..(co + 1) * plane];
            for ci in 0..g.c_in {
                let gx_c = &mut gx[ci * plane..(ci + 1) * plane];
                for i in 0..g.kernel_rows {
                    for j in 0..g.kernel {
                        let wv = w[g.weight_index(co, ci, i, j)];
                        if wv == 0.0 {
                            continue;
                        }
                        for_each_run(g, i, j, |d, s, n| axpy(&mut gx_c[s..s + n], wv, &gy_c[d..d + n]));
                    }
                }
            }
        }
    }
}

/// Same-padded 1D convolution of `x: [c_in, len]` with `kernels: [c_out, c_in, k]`.
pub fn conv1d(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (&[c_in, len], &[c_out, kc_in, k]) = (x.shape(), kernels.shape()) else {
        return Err(invalid_input!(
            "conv1d expects [c_in, len] and [c_out, c_in, k], got {:?} and {:?}",
            x.shape(),
            kernels.shape()
        ));
    };
    if kc_in != c_in {
        return Err(invalid_config!("kernel expects {kc_in} input channels, input has {c_in}"));
    }
    let g = ConvGeometry { c_in, c_out, rows: 1, len, kernel_rows: 1, kernel: k };
    g.validate()?;
    Tensor::new([c_out, len], conv1d_forward(x.data(), kernels.data(), None, &g))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Upper-tail probability `Q(x) = 1 - Phi(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `x * Phi(x)` with the exact erf-based CDF.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(invalid_input!("softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn softmax(v: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(softmax_slice(v.data())?))
}

/// `c[m, n] (+)= a[m, k] * b` where `b` is `[k, n]`, or `[n, k]` when `b_transposed`.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above pin every buffer to the extents described by
    // the (m, k, n) triple and the stride pairs, so all accesses are in bounds.
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
