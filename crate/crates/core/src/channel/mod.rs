//! Simulated upstream link: intensity modulator, standard single-mode fiber,
//! attenuator, SOA pre-amplifier and direct-detection receiver.

mod optics;
mod receiver;
mod soa;

use alloc::vec::Vec;

pub use optics::{
    apply_dispersion, attenuate_to_rop, beta2, dbm_to_watts, modulate_field, nm_to_hz, optical_bandpass,
    watts_to_dbm, SPEED_OF_LIGHT,
};
pub use receiver::{apply_real_filter, detect, BesselFilter, ReceiverParams};
pub use soa::{apply_soa, log_gain_trace, steady_state_gain, SoaParams, PLANCK};

use num_complex::Complex64;

use crate::error::{invalid_config, Result};
use crate::seeds;
use crate::txrx::{decimate, rrc_frequency_response, shape_pulse, Field, RealWaveform, SymbolSequence};

/// Everything that defines one simulated link and operating point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LinkConfig {
    pub baud: f64,
    pub wavelength_nm: f64,
    pub fiber_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub launch_dbm: f64,
    pub rop_dbm: f64,
    /// Power ratio between the brightest and darkest drive sample.
    pub extinction_ratio_db: f64,
    pub rolloff: f64,
    /// Samples per symbol of the internal simulation grid.
    pub sim_sps: usize,
    pub soa: SoaParams,
    pub receiver: ReceiverParams,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            baud: 56e9,
            wavelength_nm: 1540.0,
            fiber_km: 2.2,
            dispersion_ps_nm_km: 17.0,
            launch_dbm: 3.9,
            rop_dbm: -8.0,
            extinction_ratio_db: 8.0,
            rolloff: 0.1,
            sim_sps: 4,
            soa: SoaParams::default(),
            receiver: ReceiverParams::default(),
            seed: 1,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baud > 0.0) || !self.baud.is_finite() {
            return Err(invalid_config!("baud must be positive, got {}", self.baud));
        }
        if !(self.fiber_km >= 0.0) {
            return Err(invalid_config!("fiber length must be nonnegative, got {} km", self.fiber_km));
        }
        if !self.launch_dbm.is_finite() || !self.rop_dbm.is_finite() {
            return Err(invalid_config!("launch and received powers must be finite"));
        }
        if self.rop_dbm > self.launch_dbm {
            return Err(invalid_config!(
                "received power {} dBm exceeds launch power {} dBm",
                self.rop_dbm,
                self.launch_dbm
            ));
        }
        if self.sim_sps != 4 {
            return Err(invalid_config!("the link simulates at 4 samples per symbol, got {}", self.sim_sps));
        }
        if !(self.receiver.bandwidth_hz > 0.0) || !(self.receiver.responsivity_a_per_w > 0.0) {
            return Err(invalid_config!("receiver bandwidth and responsivity must be positive"));
        }
        if !(self.receiver.thermal_noise_pa_per_rthz >= 0.0) {
            return Err(invalid_config!("thermal noise density must be nonnegative"));
        }
        self.soa.validate()
    }

    pub fn beta2(&self) -> f64 {
        beta2(self.dispersion_ps_nm_km, self.wavelength_nm)
    }
}

/// Receiver output at the two equalizer input rates.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkOutput {
    /// Sample `2n` is the instant of symbol `n`.
    pub two_sps: RealWaveform,
    /// Sample `n` is the instant of symbol `n`.
    pub one_sps: RealWaveform,
    /// Residual alignment shift applied on the simulation grid, in samples.
    pub lag: isize,
}

/// Optical field after the attenuator, before amplification.
pub fn transmit(sym: &SymbolSequence, cfg: &LinkConfig) -> Result<Field> {
    cfg.validate()?;
    let drive = shape_pulse(sym, cfg.sim_sps, cfg.rolloff, cfg.baud)?;
    let field = modulate_field(&drive, cfg.extinction_ratio_db, cfg.launch_dbm)?;
    let field = apply_dispersion(&field, cfg.beta2(), cfg.fiber_km * 1e3);
    attenuate_to_rop(&field, cfg.rop_dbm)
}

/// Full chain from symbols to timing-aligned samples at 2 and 1 SpS.
///
/// After detection the receiver applies the RRC matched filter (which also
/// band-limits for the 2 SpS grid) and removes the Bessel filter's DC group
/// delay; a residual integer shift is found by correlating against the
/// transmitted levels, standing in for clock recovery.
pub fn run_link(sym: &SymbolSequence, cfg: &LinkConfig) -> Result<LinkOutput> {
    let field = transmit(sym, cfg)?;
    let amplified = apply_soa(&field, &cfg.soa, cfg.wavelength_nm, seeds::derive(cfg.seed, 0x50A))?;
    let current = detect(&amplified, &cfg.receiver, cfg.wavelength_nm, seeds::derive(cfg.seed, 0xDE7));

    let bessel = BesselFilter::new(cfg.receiver.bandwidth_hz);
    let delay = bessel.dc_group_delay();
    let baud = cfg.baud;
    let rolloff = cfg.rolloff;
    let filtered = apply_real_filter(&current.samples, current.sample_rate, |f| {
        let w = 2.0 * core::f64::consts::PI * f * delay;
        Complex64::new(libm::cos(w), libm::sin(w)) * rrc_frequency_response(f / baud, rolloff)
    });

    let sps = cfg.sim_sps;
    let levels = sym.levels_f64();
    let span = 2 * sps as isize;
    let len = filtered.len() as isize;
    let score = |lag: isize| -> f64 {
        levels
            .iter()
            .enumerate()
            .map(|(n, a)| a * filtered[((n * sps) as isize + lag).rem_euclid(len) as usize])
            .sum()
    };
    let lag = (-span..=span).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap_or(0);
    let aligned: Vec<f64> = (0..len).map(|i| filtered[(i + lag).rem_euclid(len) as usize]).collect();

    let two = decimate(&aligned, sps / 2, 0);
    let one = decimate(&aligned, sps, 0);
    Ok(LinkOutput {
        two_sps: RealWaveform { samples: two, sample_rate: 2.0 * baud, sps: 2 },
        one_sps: RealWaveform { samples: one, sample_rate: baud, sps: 1 },
        lag,
    })
}

#[cfg(test)]
mod tests;
