//! PAM4 symbol streams, gray labelling and root-raised-cosine shaping.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid_config, invalid_input, Result};
use crate::numerics::{fft_forward, fft_inverse};

/// The four PAM4 amplitudes in ascending order.
pub const PAM4_LEVELS: [i8; 4] = [-3, -1, 1, 3];

/// Gray label of each entry of [`PAM4_LEVELS`]: 00, 01, 11, 10.
const GRAY_LABELS: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

/// Bits per PAM4 symbol.
pub const BITS_PER_SYMBOL: usize = 2;

/// Maps a two-bit label (`0b00..=0b11`) to its PAM4 level.
pub fn gray_map(bits2: u8) -> Result<i8> {
    GRAY_LABELS
        .iter()
        .position(|&b| b == bits2)
        .map(|i| PAM4_LEVELS[i])
        .ok_or_else(|| invalid_input!("{bits2:#b} is not a two-bit label"))
}

/// Inverse of [`gray_map`].
pub fn gray_demap(level: i8) -> Result<u8> {
    PAM4_LEVELS
        .iter()
        .position(|&l| l == level)
        .map(|i| GRAY_LABELS[i])
        .ok_or_else(|| invalid_input!("{level} is not a PAM4 level"))
}

/// Nearest PAM4 level to `x` (thresholds at -2, 0, 2).
pub fn slice_pam4(x: f64) -> i8 {
    if x < -2.0 {
        -3
    } else if x < 0.0 {
        -1
    } else if x < 2.0 {
        1
    } else {
        3
    }
}

/// PAM4 symbols together with their gray bit labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSequence {
    levels: Vec<i8>,
    bits: Vec<u8>,
    seed: u64,
}

impl SymbolSequence {
    /// Wraps decided or known levels; labels follow the gray map.
    pub fn from_levels(levels: Vec<i8>, seed: u64) -> Result<Self> {
        let bits = levels.iter().map(|&l| gray_demap(l)).collect::<Result<Vec<_>>>()?;
        Ok(Self { levels, bits, seed })
    }

    pub fn levels(&self) -> &[i8] {
        &self.levels
    }

    /// Two-bit label per symbol.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels_f64(&self) -> Vec<f64> {
        self.levels.iter().map(|&l| f64::from(l)).collect()
    }

    /// Symbols `range` as a new sequence with the same seed.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            levels: self.levels[start..end].to_vec(),
            bits: self.bits[start..end].to_vec(),
            seed: self.seed,
        }
    }
}

/// Random non-repeating PAM4 stream from a ChaCha20 bit source.
pub fn generate_rns_pam4(seed: u64, n_symbols: usize) -> Result<SymbolSequence> {
    if n_symbols == 0 {
        return Err(invalid_input!("symbol count must be at least 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n_symbols);
    let mut levels = Vec::with_capacity(n_symbols);
    for _ in 0..n_symbols {
        let b: u8 = rng.random_range(0..4);
        bits.push(b);
        levels.push(gray_map(b)?);
    }
    Ok(SymbolSequence { levels, bits, seed })
}

/// Uniformly sampled signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    /// Hz.
    pub sample_rate: f64,
    pub sps: usize,
}

/// Real-valued electrical signal.
pub type RealWaveform = Waveform<f64>;
/// Complex envelope of an optical field, `|E|^2` in watts.
pub type Field = Waveform<Complex64>;

impl<T> Waveform<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn baud(&self) -> f64 {
        self.sample_rate / self.sps as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn with_samples<U>(&self, samples: Vec<U>) -> Waveform<U> {
        Waveform { samples, sample_rate: self.sample_rate, sps: self.sps }
    }
}

impl Field {
    /// Mean of `|E|^2`.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.samples.len().max(1) as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.dt()
    }
}

/// Shaping filter span in symbols.
pub const RRC_SPAN_SYMBOLS: usize = 64;

/// Root-raised-cosine impulse response at `t` symbol periods, unit DC gain.
pub fn rrc_impulse(t: f64, rolloff: f64) -> f64 {
    let b = rolloff;
    if libm::fabs(t) < 1e-12 {
        return 1.0 - b + 4.0 * b / PI;
    }
    if b > 0.0 && libm::fabs(libm::fabs(t) - 1.0 / (4.0 * b)) < 1e-9 {
        let a = PI / (4.0 * b);
        return b * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * libm::sin(a) + (1.0 - 2.0 / PI) * libm::cos(a));
    }
    let num = libm::sin(PI * t * (1.0 - b)) + 4.0 * b * t * libm::cos(PI * t * (1.0 + b));
    let den = PI * t * (1.0 - (4.0 * b * t) * (4.0 * b * t));
    num / den
}

/// Root-raised-cosine amplitude response at `f` in units of the baud rate.
pub fn rrc_frequency_response(f: f64, rolloff: f64) -> f64 {
    let f = libm::fabs(f);
    let lo = (1.0 - rolloff) / 2.0;
    let hi = (1.0 + rolloff) / 2.0;
    if f <= lo {
        1.0
    } else if f >= hi {
        0.0
    } else {
        libm::cos(PI / (2.0 * rolloff) * (f - lo))
    }
}

fn check_shaping(sps: usize, rolloff: f64) -> Result<()> {
    if sps != 2 && sps != 4 {
        return Err(invalid_config!("shaping supports 2 or 4 samples per symbol, got {sps}"));
    }
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(invalid_config!("rolloff must lie in (0, 1], got {rolloff}"));
    }
    Ok(())
}

/// Upsamples `sym` to `sps` samples per symbol through an RRC filter.
///
/// Sample `n * sps` is the instant of symbol `n`; the output holds exactly
/// `len * sps` samples with the filter delay removed. `sample_rate` is
/// `baud * sps`.
pub fn shape_pulse(sym: &SymbolSequence, sps: usize, rolloff: f64, baud: f64) -> Result<RealWaveform> {
    shape_amplitudes(&sym.levels_f64(), sps, rolloff, baud)
}

/// [`shape_pulse`] over arbitrary real amplitudes.
pub fn shape_amplitudes(amplitudes: &[f64], sps: usize, rolloff: f64, baud: f64) -> Result<RealWaveform> {
    check_shaping(sps, rolloff)?;
    let half = RRC_SPAN_SYMBOLS / 2 * sps;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| rrc_impulse((i as f64 - half as f64) / sps as f64, rolloff))
        .collect();
    let len = amplitudes.len() * sps;
    let mut out = vec![0.0; len];
    for (n, &a) in amplitudes.iter().enumerate() {
        let centre = n * sps;
        let lo = centre.saturating_sub(half);
        let hi = (centre + half + 1).min(len);
        for (i, o) in out[lo..hi].iter_mut().enumerate() {
            *o += a * taps[lo + i + half - centre];
        }
    }
    Ok(Waveform { samples: out, sample_rate: baud * sps as f64, sps })
}

/// Circular RRC matched filter applied in the frequency domain.
pub fn matched_filter(samples: &[f64], sps: usize, rolloff: f64) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let f_baud = signed * sps as f64 / n as f64;
        *v *= rrc_frequency_response(f_baud, rolloff);
    }
    fft_inverse(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Every `factor`-th sample starting at `phase`.
pub fn decimate(samples: &[f64], factor: usize, phase: usize) -> Vec<f64> {
    samples.iter().skip(phase).step_by(factor.max(1)).copied().collect()
}
