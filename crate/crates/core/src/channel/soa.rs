//! Reservoir model of a saturable semiconductor optical amplifier.
//!
//! The integrated log-gain `h` obeys
//! `dh/dt = (h0 - h) / tau - P_in(t) / E_sat * (e^h - 1)`, `h0 = ln G0`, and
//! the output field is `E_in * e^(h/2)` (no linewidth enhancement). The input
//! power is linearly interpolated between samples and each sample interval
//! is covered by `substeps` classic Runge-Kutta steps.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid_config, numeric, Result};
use crate::txrx::Field;

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SoaParams {
    /// `false` bypasses the amplifier entirely (unit gain, no noise).
    pub enabled: bool,
    pub small_signal_gain_db: f64,
    pub saturation_energy_j: f64,
    pub carrier_lifetime_s: f64,
    /// `false` freezes the gain at `G0` (infinite saturation energy).
    pub saturation: bool,
    /// Adds amplified spontaneous emission at the output.
    pub ase: bool,
    pub noise_figure_db: f64,
    /// Runge-Kutta steps per sample interval.
    pub substeps: usize,
}

impl Default for SoaParams {
    fn default() -> Self {
        Self {
            enabled: true,
            small_signal_gain_db: 20.0,
            saturation_energy_j: 5e-12,
            carrier_lifetime_s: 200e-12,
            saturation: true,
            ase: true,
            noise_figure_db: 7.0,
            substeps: 1,
        }
    }
}

impl SoaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.small_signal_gain_db > 0.0) {
            return Err(invalid_config!("SOA gain must be positive, got {} dB", self.small_signal_gain_db));
        }
        if !(self.carrier_lifetime_s > 0.0) {
            return Err(invalid_config!("carrier lifetime must be positive"));
        }
        if !(self.saturation_energy_j > 0.0) {
            return Err(invalid_config!("saturation energy must be positive"));
        }
        if self.substeps == 0 {
            return Err(invalid_config!("SOA needs at least one integration step per sample"));
        }
        Ok(())
    }

    /// `h0 = ln(G0)`.
    pub fn unsaturated_log_gain(&self) -> f64 {
        self.small_signal_gain_db / 10.0 * core::f64::consts::LN_10
    }

    /// Saturation power `E_sat / tau` in watts.
    pub fn saturation_power(&self) -> f64 {
        self.saturation_energy_j / self.carrier_lifetime_s
    }
}

/// Steady-state linear gain for constant input power `p_in`: the root of
/// `G = 1 + (E_sat / (P_in tau)) ln(G0 / G)`.
pub fn steady_state_gain(p_in: f64, p: &SoaParams) -> f64 {
    let h0 = p.unsaturated_log_gain();
    if !(p_in > 0.0) || !p.saturation {
        return libm::exp(h0);
    }
    let a = p_in / p.saturation_power();
    // f(h) = (h0 - h) - a (e^h - 1) is strictly decreasing on [0, h0]
    let (mut lo, mut hi) = (0.0, h0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (h0 - mid) - a * (libm::exp(mid) - 1.0) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    libm::exp(0.5 * (lo + hi))
}

/// Integrates the log-gain for input power samples `p_in` spaced `dt`.
///
/// The trace starts from the steady state of the mean input power.
pub fn log_gain_trace(p_in: &[f64], dt: f64, p: &SoaParams) -> Result<Vec<f64>> {
    p.validate()?;
    let h0 = p.unsaturated_log_gain();
    if !p.saturation || p_in.is_empty() {
        return Ok(alloc::vec![h0; p_in.len()]);
    }
    let tau = p.carrier_lifetime_s;
    let e_sat = p.saturation_energy_j;
    let mean = p_in.iter().sum::<f64>() / p_in.len() as f64;
    let mut h = libm::log(steady_state_gain(mean, p));
    let rate = |h: f64, power: f64| (h0 - h) / tau - power / e_sat * (libm::exp(h) - 1.0);
    let step = dt / p.substeps as f64;
    let mut out = Vec::with_capacity(p_in.len());
    out.push(h);
    for i in 1..p_in.len() {
        let (p0, p1) = (p_in[i - 1], p_in[i]);
        for s in 0..p.substeps {
            let f0 = s as f64 / p.substeps as f64;
            let f1 = (s as f64 + 0.5) / p.substeps as f64;
            let f2 = (s as f64 + 1.0) / p.substeps as f64;
            let pa = p0 + (p1 - p0) * f0;
            let pm = p0 + (p1 - p0) * f1;
            let pb = p0 + (p1 - p0) * f2;
            let k1 = rate(h, pa);
            let k2 = rate(h + 0.5 * step * k1, pm);
            let k3 = rate(h + 0.5 * step * k2, pm);
            let k4 = rate(h + step * k3, pb);
            h += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if !h.is_finite() || h > h0 + 1e-6 || h < -1.0 {
            return Err(numeric!(
                "SOA log-gain diverged to {h} at sample {i} (dt = {dt:e} s, {} substeps)",
                p.substeps
            ));
        }
        out.push(h);
    }
    Ok(out)
}

/// Amplifies `field`, optionally adding ASE drawn from `seed`.
///
/// ASE is circular complex Gaussian with one-polarization power spectral
/// density `n_sp h nu (G(t) - 1)` over the simulated bandwidth, `n_sp = NF / 2`.
pub fn apply_soa(field: &Field, p: &SoaParams, wavelength_nm: f64, seed: u64) -> Result<Field> {
    if !p.enabled {
        return Ok(field.clone());
    }
    let p_in: Vec<f64> = field.samples.iter().map(|c| c.norm_sqr()).collect();
    let h = log_gain_trace(&p_in, field.dt(), p)?;
    let mut out: Vec<Complex64> = field.samples.iter().zip(&h).map(|(e, &h)| e * libm::exp(0.5 * h)).collect();
    if p.ase {
        let nu = super::optics::SPEED_OF_LIGHT / (wavelength_nm * 1e-9);
        let n_sp = libm::pow(10.0, p.noise_figure_db / 10.0) / 2.0;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for (e, &h) in out.iter_mut().zip(&h) {
            let psd = n_sp * PLANCK * nu * (libm::exp(h) - 1.0);
            let sigma = libm::sqrt(psd * field.sample_rate / 2.0);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *e += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(field.with_samples(out))
}
