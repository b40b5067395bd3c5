//! Direct-detection receiver: optical bandpass, square-law photodiode,
//! thermal noise and a 4th-order Bessel electrical filter.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::optics::{nm_to_hz, optical_bandpass};
use crate::numerics::{bin_angular_frequency, fft_forward, fft_inverse};
use crate::txrx::{Field, RealWaveform};

/// Denominator of the normalized 4th-order Bessel polynomial, constant first.
const BESSEL4: [f64; 5] = [105.0, 105.0, 45.0, 10.0, 1.0];

/// Receiver settings.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ReceiverParams {
    pub optical_filter_nm: f64,
    pub responsivity_a_per_w: f64,
    /// -3 dB bandwidth of the electrical low-pass.
    pub bandwidth_hz: f64,
    pub thermal_noise: bool,
    /// One-sided input-referred current noise density, pA/sqrt(Hz).
    pub thermal_noise_pa_per_rthz: f64,
}

impl Default for ReceiverParams {
    fn default() -> Self {
        Self {
            optical_filter_nm: 3.0,
            responsivity_a_per_w: 0.8,
            bandwidth_hz: 33e9,
            thermal_noise: true,
            thermal_noise_pa_per_rthz: 2000.0,
        }
    }
}

impl ReceiverParams {
    /// One-sided thermal-noise PSD in A^2/Hz.
    pub fn thermal_psd(&self) -> f64 {
        let a = self.thermal_noise_pa_per_rthz * 1e-12;
        a * a
    }
}

/// Normalized 4th-order Bessel response at angular frequency `s = j w`.
fn bessel_normalized(w: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    let mut den = Complex64::new(0.0, 0.0);
    let mut power = Complex64::new(1.0, 0.0);
    for c in BESSEL4 {
        den += power * c;
        power *= s;
    }
    Complex64::new(BESSEL4[0], 0.0) / den
}

/// Normalized frequency where the normalized Bessel magnitude is `1/sqrt(2)`.
fn bessel_3db_point() -> f64 {
    let (mut lo, mut hi) = (0.5, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if bessel_normalized(mid).norm_sqr() > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// 4th-order Bessel low-pass with its -3 dB point at `f3db_hz`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesselFilter {
    /// Angular scale mapping physical to normalized frequency.
    omega0: f64,
}

impl BesselFilter {
    pub fn new(f3db_hz: f64) -> Self {
        Self { omega0: 2.0 * PI * f3db_hz / bessel_3db_point() }
    }

    pub fn response(&self, f_hz: f64) -> Complex64 {
        bessel_normalized(2.0 * PI * f_hz / self.omega0)
    }

    /// Group delay at DC in seconds.
    pub fn dc_group_delay(&self) -> f64 {
        // the normalized polynomial has unit delay at DC
        1.0 / self.omega0
    }
}

/// Optical bandpass, square law, thermal noise, Bessel low-pass.
pub fn detect(field: &Field, rx: &ReceiverParams, wavelength_nm: f64, seed: u64) -> RealWaveform {
    let filtered = optical_bandpass(field, nm_to_hz(rx.optical_filter_nm, wavelength_nm));
    let mut current: Vec<f64> =
        filtered.samples.iter().map(|c| rx.responsivity_a_per_w * c.norm_sqr()).collect();
    if rx.thermal_noise {
        let sigma = libm::sqrt(rx.thermal_psd() * field.sample_rate / 2.0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for v in &mut current {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    let bessel = BesselFilter::new(rx.bandwidth_hz);
    let out = apply_real_filter(&current, field.sample_rate, |f| bessel.response(f));
    field.with_samples(out)
}

/// Circular filtering of a real signal by a frequency response `h(f)` with
/// Hermitian symmetry.
pub fn apply_real_filter(x: &[f64], sample_rate: f64, h: impl Fn(f64) -> Complex64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_angular_frequency(k, n, sample_rate) / (2.0 * PI);
        *v *= h(f);
    }
    fft_inverse(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}
