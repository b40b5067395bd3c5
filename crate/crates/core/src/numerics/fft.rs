//! Complex FFT for arbitrary lengths.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other length
//! goes through Bluestein's chirp-z reformulation on top of it. The forward
//! transform is unnormalized and the inverse carries the `1/n` factor, so
//! `sum |X_k|^2 == n * sum |x_t|^2`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::tensor::Tensor;
use crate::error::{invalid_input, Result};

pub fn fft_forward(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// Inverse transform including the `1/n` scale.
pub fn fft_inverse(buf: &mut [Complex64]) {
    transform(buf, true);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Frequency in rad/s of bin `k` for an `n`-point transform at `sample_rate`,
/// with bins above `n/2` mapped to negative frequencies.
pub fn bin_angular_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * signed * sample_rate / n as f64
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| {
            let theta = sign * 2.0 * PI * k as f64 / n as f64;
            Complex64::new(libm::cos(theta), libm::sin(theta))
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let w = twiddles[j * step];
                let a = buf[start + j];
                let b = buf[start + j + half] * w;
                buf[start + j] = a + b;
                buf[start + j + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // k^2 mod 2n keeps the chirp phase small for large k.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            let theta = sign * PI * k2 / n as f64;
            Complex64::new(libm::cos(theta), libm::sin(theta))
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp[k];
    }
}

/// Magnitude spectrum of a real sequence, bins `0..=T/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    amplitudes: Tensor,
    source_length: usize,
}

impl Spectrum {
    pub fn amplitudes(&self) -> &[f64] {
        self.amplitudes.data()
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    /// Builds a spectrum from precomputed amplitudes; mostly useful in tests.
    pub fn from_amplitudes(amplitudes: Vec<f64>, source_length: usize) -> Result<Self> {
        if amplitudes.len() != source_length / 2 + 1 {
            return Err(invalid_input!(
                "{} amplitude bins do not match source length {}",
                amplitudes.len(),
                source_length
            ));
        }
        if amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(invalid_input!("amplitudes must be nonnegative"));
        }
        Ok(Self { amplitudes: Tensor::from_vec(amplitudes), source_length })
    }
}

/// `|DFT(x)|` over bins `0..=T/2` (unnormalized forward transform).
pub fn rfft_amplitude(x: &[f64]) -> Result<Spectrum> {
    let t = x.len();
    if t < 2 {
        return Err(invalid_input!("rfft_amplitude needs at least 2 samples, got {t}"));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    let amplitudes = buf[..t / 2 + 1].iter().map(|c| c.norm()).collect();
    Ok(Spectrum { amplitudes: Tensor::from_vec(amplitudes), source_length: t })
}
