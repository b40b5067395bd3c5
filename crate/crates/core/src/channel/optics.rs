//! Transmitter-side optics: intensity modulation, fiber dispersion and the
//! variable attenuator.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid_config, invalid_input, Result};
use crate::numerics::{bin_angular_frequency, fft_forward, fft_inverse};
use crate::txrx::{Field, RealWaveform};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * libm::pow(10.0, dbm / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * libm::log10(watts / 1e-3)
}

/// Chirp-free intensity modulator.
///
/// The drive swing maps affinely onto optical power: the most negative drive
/// sample lands on `P_hi / ER` and the most positive on `P_hi`, and the whole
/// trace is then scaled to a mean of `launch_dbm`. An infinite extinction
/// ratio puts the lowest drive sample at zero power.
pub fn modulate_field(w: &RealWaveform, extinction_ratio_db: f64, launch_dbm: f64) -> Result<Field> {
    if w.is_empty() {
        return Err(invalid_input!("empty drive waveform"));
    }
    if !(extinction_ratio_db > 0.0) {
        return Err(invalid_config!("extinction ratio must be positive, got {extinction_ratio_db} dB"));
    }
    let (lo, hi) = w
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(invalid_input!("drive waveform is not finite"));
    }
    let floor = if extinction_ratio_db.is_infinite() {
        0.0
    } else {
        libm::pow(10.0, -extinction_ratio_db / 10.0)
    };
    let relative: Vec<f64> = if hi - lo <= 0.0 {
        w.samples.iter().map(|_| 1.0).collect()
    } else {
        w.samples.iter().map(|&d| floor + (1.0 - floor) * (d - lo) / (hi - lo)).collect()
    };
    if let Some(p) = relative.iter().find(|&&p| p < 0.0) {
        return Err(invalid_config!("bias mapping produced negative power {p}"));
    }
    let mean = relative.iter().sum::<f64>() / relative.len() as f64;
    let scale = dbm_to_watts(launch_dbm) / mean;
    let samples = relative.iter().map(|&p| Complex64::new(libm::sqrt(p * scale), 0.0)).collect();
    Ok(w.with_samples(samples))
}

/// Group-velocity dispersion `beta2` in s^2/m for dispersion `D` (ps/nm/km)
/// at `wavelength_nm`: `beta2 = -D lambda^2 / (2 pi c)`.
pub fn beta2(dispersion_ps_nm_km: f64, wavelength_nm: f64) -> f64 {
    let d = dispersion_ps_nm_km * 1e-6;
    let lambda = wavelength_nm * 1e-9;
    -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
}

/// All-pass dispersion filter `H(w) = exp(+j beta2 w^2 L / 2)`.
pub fn apply_dispersion(field: &Field, beta2_s2_per_m: f64, length_m: f64) -> Field {
    if length_m == 0.0 || beta2_s2_per_m == 0.0 {
        return field.clone();
    }
    let n = field.len();
    let mut buf = field.samples.clone();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let w = bin_angular_frequency(k, n, field.sample_rate);
        let phase = 0.5 * beta2_s2_per_m * w * w * length_m;
        *v *= Complex64::new(libm::cos(phase), libm::sin(phase));
    }
    fft_inverse(&mut buf);
    field.with_samples(buf)
}

/// Scales the field so its mean power is `rop_dbm`.
pub fn attenuate_to_rop(field: &Field, rop_dbm: f64) -> Result<Field> {
    let current = field.mean_power();
    if !(current > 0.0) {
        return Err(invalid_input!("cannot attenuate a dark field"));
    }
    let current_dbm = watts_to_dbm(current);
    if rop_dbm > current_dbm + 1e-9 {
        return Err(invalid_config!(
            "attenuator cannot amplify: target {rop_dbm} dBm above current {current_dbm:.3} dBm"
        ));
    }
    let scale = libm::sqrt(dbm_to_watts(rop_dbm) / current);
    Ok(field.with_samples(field.samples.iter().map(|c| c * scale).collect()))
}

/// Ideal rectangular optical bandpass of `bandwidth_hz` centred on the carrier.
pub fn optical_bandpass(field: &Field, bandwidth_hz: f64) -> Field {
    let n = field.len();
    if bandwidth_hz >= field.sample_rate {
        return field.clone();
    }
    let mut buf = field.samples.clone();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_angular_frequency(k, n, field.sample_rate) / (2.0 * PI);
        if libm::fabs(f) > bandwidth_hz / 2.0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_inverse(&mut buf);
    field.with_samples(buf)
}

/// Optical bandwidth in Hz of a filter `width_nm` wide at `wavelength_nm`.
pub fn nm_to_hz(width_nm: f64, wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT * width_nm * 1e-9 / (wavelength_nm * 1e-9 * wavelength_nm * 1e-9)
}
