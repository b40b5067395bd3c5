//! Bit-error counting, the BER-complexity figure of merit and receiver
//! sensitivity extraction from BER-versus-ROP curves.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid_input, Error, Result};
use crate::txrx::{slice_pam4, SymbolSequence, BITS_PER_SYMBOL};

/// Errors needed before a BER point counts as statistically solid.
pub const MIN_CONFIDENT_ERRORS: u64 = 100;
/// Bits a headline BER point should be measured over.
pub const MIN_HEADLINE_BITS: u64 = 100_000;
/// Pre-FEC target used for sensitivity comparisons.
pub const TARGET_BER: f64 = 5e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerCount {
    pub ber: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    pub symbols: u64,
}

impl BerCount {
    pub fn ser(&self) -> f64 {
        self.symbol_errors as f64 / self.symbols.max(1) as f64
    }

    /// Adds the tallies of `other` into `self`.
    pub fn merge(&mut self, other: &BerCount) {
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.symbol_errors += other.symbol_errors;
        self.symbols += other.symbols;
        self.ber = self.bit_errors as f64 / self.bits.max(1) as f64;
    }

    pub fn empty() -> Self {
        Self { ber: 0.0, bit_errors: 0, bits: 0, symbol_errors: 0, symbols: 0 }
    }

    pub fn low_confidence(&self) -> bool {
        self.bit_errors < MIN_CONFIDENT_ERRORS || self.bits < MIN_HEADLINE_BITS
    }
}

/// Bit-level comparison of gray-labelled decisions, skipping `skip_edges`
/// symbols at each end.
pub fn ber_count(estimates: &SymbolSequence, truth: &SymbolSequence, skip_edges: usize) -> Result<BerCount> {
    if estimates.len() != truth.len() {
        return Err(invalid_input!(
            "estimate length {} differs from truth length {}",
            estimates.len(),
            truth.len()
        ));
    }
    let n = truth.len();
    if 2 * skip_edges >= n {
        return Err(invalid_input!("skipping {skip_edges} symbols per edge leaves nothing of {n}"));
    }
    let range = skip_edges..n - skip_edges;
    let mut bit_errors = 0u64;
    let mut symbol_errors = 0u64;
    for (a, b) in estimates.bits()[range.clone()].iter().zip(&truth.bits()[range.clone()]) {
        let diff = (a ^ b).count_ones() as u64;
        bit_errors += diff;
        symbol_errors += u64::from(diff > 0);
    }
    let symbols = range.len() as u64;
    let bits = symbols * BITS_PER_SYMBOL as u64;
    Ok(BerCount { ber: bit_errors as f64 / bits as f64, bit_errors, bits, symbol_errors, symbols })
}

/// Least-squares `gain, offset` with `y ~ gain * x + offset`.
pub fn fit_affine(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len()).max(1) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let gain = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (gain, my - gain * mx)
}

/// Slices real-valued estimates already on the PAM4 level scale.
pub fn decide(estimates: &[f64], seed: u64) -> SymbolSequence {
    let levels = estimates.iter().map(|&v| slice_pam4(v)).collect();
    SymbolSequence::from_levels(levels, seed).expect("slicer emits PAM4 levels")
}

/// Decisions after the least-squares affine map from samples onto the known
/// levels, i.e. an unequalized receiver with ideal gain and threshold setting.
pub fn affine_decisions(samples: &[f64], truth: &SymbolSequence) -> SymbolSequence {
    let (gain, offset) = fit_affine(samples, &truth.levels_f64());
    let mapped: Vec<f64> = samples.iter().map(|v| gain * v + offset).collect();
    decide(&mapped, truth.seed())
}

/// Median of a nonempty set; even counts average the middle pair.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid_input!("median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// `1 / (mBER * RMpS)`; higher is better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerC {
    pub value: f64,
    /// Set when the median BER was zero and `value` is `+inf`.
    pub zero_ber: bool,
}

pub fn ber_c(median_ber: f64, rmps: f64) -> Result<BerC> {
    if !(rmps > 0.0) {
        return Err(invalid_input!("RMpS must be positive, got {rmps}"));
    }
    if !(median_ber >= 0.0) {
        return Err(invalid_input!("median BER must be nonnegative, got {median_ber}"));
    }
    if median_ber == 0.0 {
        return Ok(BerC { value: f64::INFINITY, zero_ber: true });
    }
    Ok(BerC { value: 1.0 / (median_ber * rmps), zero_ber: false })
}

/// BER measured over a received-power sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BerCurve {
    pub name: String,
    /// `(rop_dbm, ber)` with strictly increasing ROP.
    pub points: Vec<(f64, f64)>,
}

/// Floor applied before taking logarithms of counted BERs.
const LOG_BER_FLOOR: f64 = 1e-12;

/// Pool-adjacent-violators fit of a non-increasing sequence.
pub fn isotonic_nonincreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 2];
            let (s2, c2) = blocks[blocks.len() - 1];
            if s1 / c1 as f64 >= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s1 + s2, c1 + c2);
        }
    }
    blocks.into_iter().flat_map(|(s, c)| core::iter::repeat_n(s / c as f64, c)).collect()
}

impl BerCurve {
    /// ROP where the smoothed curve crosses `target`, by linear
    /// interpolation of `log(BER)` between the bracketing points.
    pub fn crossing(&self, target: f64) -> Result<f64> {
        if self.points.len() < 2 {
            return Err(Error::OutOfRange(alloc::format!("curve {} has fewer than two points", self.name)));
        }
        if self.points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(invalid_input!("curve {} ROP values are not strictly increasing", self.name));
        }
        let bers: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        let smooth = isotonic_nonincreasing(&bers);
        let log_t = libm::log(target);
        for i in 0..smooth.len() - 1 {
            let (b0, b1) = (smooth[i], smooth[i + 1]);
            if b0 >= target && b1 <= target && b0 > b1 {
                let (r0, r1) = (self.points[i].0, self.points[i + 1].0);
                let l0 = libm::log(b0.max(LOG_BER_FLOOR));
                let l1 = libm::log(b1.max(LOG_BER_FLOOR));
                let t = ((log_t - l0) / (l1 - l0)).clamp(0.0, 1.0);
                return Ok(r0 + t * (r1 - r0));
            }
        }
        Err(Error::OutOfRange(alloc::format!(
            "curve {} does not cross BER {target:e} within its ROP range",
            self.name
        )))
    }
}

/// Receiver-sensitivity advantage of `a` over `b` at `target` BER in dB:
/// `ROP_b(target) - ROP_a(target)`.
pub fn sensitivity_gain(a: &BerCurve, b: &BerCurve, target: f64) -> Result<f64> {
    Ok(b.crossing(target)? - a.crossing(target)?)
}

/// Outcome of one equalizer at one received power.
#[derive(Clone, Debug, PartialEq)]
pub struct EqualizerReport {
    pub model: String,
    pub config_hash: String,
    pub rop_dbm: f64,
    pub ber: f64,
    pub bit_errors: u64,
    pub bits_counted: u64,
    pub symbol_errors: u64,
    /// Mean BER across restarts where the model reports one (Sato).
    pub ber_mean: Option<f64>,
    pub rmps: u64,
    pub seed: u64,
    pub low_confidence: bool,
    /// Epochs run and best validation MSE, for trained models.
    pub epochs: Option<usize>,
    pub best_val_mse: Option<f64>,
}
