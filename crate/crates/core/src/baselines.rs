//! Reference equalizers: a blind T/2-spaced Sato FFE and two neural
//! detectors (fully connected and convolutional) that estimate the center
//! symbol of a window.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::TargetMode;
use crate::error::{invalid_config, invalid_input, numeric, Result};
use crate::numerics::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::seeds;
use crate::training::Model;
use crate::txrx::{slice_pam4, PAM4_LEVELS};

/// `E[a^2] / E[|a|]` over equiprobable PAM4 levels: `5 / 2`.
pub fn sato_gamma() -> f64 {
    let n = PAM4_LEVELS.len() as f64;
    let sq: f64 = PAM4_LEVELS.iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>() / n;
    let abs: f64 = PAM4_LEVELS.iter().map(|&a| f64::from(a).abs()).sum::<f64>() / n;
    sq / abs
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SatoConfig {
    pub taps: usize,
    /// Step size of the blind passes.
    pub step_size: f64,
    /// Step size of the decision-directed passes.
    pub dd_step_size: f64,
    pub gamma: f64,
    pub sps: usize,
    /// Blind adaptation passes over the data.
    pub train_passes: usize,
    /// Decision-directed refinement passes after the blind ones.
    pub dd_passes: usize,
    /// Restarts from random data offsets; min and mean BER are reported.
    pub restarts: usize,
}

impl Default for SatoConfig {
    fn default() -> Self {
        Self {
            taps: 51,
            step_size: 2e-4,
            dd_step_size: 5e-5,
            gamma: 2.5,
            sps: 2,
            train_passes: 2,
            dd_passes: 2,
            restarts: 10,
        }
    }
}

impl SatoConfig {
    pub fn with_taps(taps: usize) -> Self {
        Self { taps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps % 2 == 0 || self.taps == 0 {
            return Err(invalid_config!("Sato needs an odd tap count, got {}", self.taps));
        }
        if !(self.step_size > 0.0) || !(self.dd_step_size >= 0.0) {
            return Err(invalid_config!("Sato step sizes must be positive, got {} / {}", self.step_size, self.dd_step_size));
        }
        if self.sps != 2 {
            return Err(invalid_config!("Sato runs at 2 samples per symbol, got {}", self.sps));
        }
        if self.restarts == 0 {
            return Err(invalid_config!("Sato needs at least one restart"));
        }
        Ok(())
    }
}

/// Converged filter and its symbol-rate output.
#[derive(Clone, Debug, PartialEq)]
pub struct SatoOutput {
    pub taps: Vec<f64>,
    /// One equalized value per symbol, on the PAM4 level scale.
    pub estimates: Vec<f64>,
}

/// Removes the mean and scales to the RMS of unit-spaced PAM4 (`sqrt 5`).
fn condition(rx: &[f64]) -> Result<Vec<f64>> {
    let n = rx.len() as f64;
    let mean = rx.iter().sum::<f64>() / n;
    let rms = libm::sqrt(rx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    if !(rms > 0.0) {
        return Err(invalid_input!("Sato input has no signal"));
    }
    let g = libm::sqrt(5.0) / rms;
    Ok(rx.iter().map(|v| (v - mean) * g).collect())
}

struct Ffe<'a> {
    u: &'a [f64],
    taps: usize,
}

impl Ffe<'_> {
    /// Regressor for symbol `n`: samples `2n + c - j` for tap `j`, circular.
    fn regressor(&self, n: usize, buf: &mut [f64]) {
        let len = self.u.len() as isize;
        let c = (self.taps / 2) as isize;
        for (j, b) in buf.iter_mut().enumerate() {
            *b = self.u[((2 * n) as isize + c - j as isize).rem_euclid(len) as usize];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adapts a T/2-spaced FFE blindly (Sato error `z - gamma sign z`), refines
/// it decision-directed, then filters the whole sequence. Adaptation starts
/// at symbol `offset` and wraps around.
pub fn sato_equalize(rx: &[f64], cfg: &SatoConfig, offset: usize) -> Result<SatoOutput> {
    cfg.validate()?;
    if rx.len() % 2 != 0 {
        return Err(invalid_input!("2 SpS input must have even length, got {}", rx.len()));
    }
    if cfg.taps > rx.len() / 4 {
        return Err(invalid_input!("{} taps exceed a quarter of the {} input samples", cfg.taps, rx.len()));
    }
    let u = condition(rx)?;
    let n_sym = u.len() / 2;
    let ffe = Ffe { u: &u, taps: cfg.taps };
    let mut w = vec![0.0; cfg.taps];
    w[cfg.taps / 2] = 1.0;
    let mut reg = vec![0.0; cfg.taps];
    let passes = (0..cfg.train_passes).map(|_| false).chain((0..cfg.dd_passes).map(|_| true));
    for dd in passes {
        let mu = if dd { cfg.dd_step_size } else { cfg.step_size };
        for i in 0..n_sym {
            let n = (offset + i) % n_sym;
            ffe.regressor(n, &mut reg);
            let z = dot(&w, &reg);
            let e = if dd { z - f64::from(slice_pam4(z)) } else { z - cfg.gamma * z.signum() };
            w.iter_mut().zip(&reg).for_each(|(wj, r)| *wj -= mu * e * r);
        }
        let peak = w.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        if !(peak <= 1e6) {
            return Err(numeric!("Sato taps diverged (max |w| = {peak:e}) with step size {mu}"));
        }
    }
    let estimates = (0..n_sym)
        .map(|n| {
            ffe.regressor(n, &mut reg);
            dot(&w, &reg)
        })
        .collect();
    Ok(SatoOutput { taps: w, estimates })
}

/// Adaptation start offsets of the restarts.
pub fn sato_offsets(cfg: &SatoConfig, n_symbols: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(seed, 0x5A70));
    (0..cfg.restarts).map(|_| rng.random_range(0..n_symbols.max(1))).collect()
}

/// `sum of in * out` over the layers of a dense stack.
pub fn rmps_dense(n_in: usize, widths: &[usize]) -> u64 {
    let mut prev = n_in as u64;
    let mut total = 0;
    for &w in widths {
        total += prev * w as u64;
        prev = w as u64;
    }
    total
}

/// Same counting rule as the FConvNet formula: `k c_in c_out (n - k + 1)`.
pub fn rmps_conv(n: usize, kernel: usize, c_in: usize, c_out: usize) -> u64 {
    (kernel * c_in * c_out) as u64 * (n + 1).saturating_sub(kernel) as u64
}

fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Dense GeLU stack ending in a scalar output.
#[derive(Clone, Debug)]
struct DenseStack {
    layers: Vec<(ParamId, ParamId)>,
}

impl DenseStack {
    fn build(params: &mut ParamSet, prefix: &str, n_in: usize, hidden: &[usize], rng: &mut ChaCha20Rng) -> Self {
        let mut layers = Vec::new();
        let mut prev = n_in;
        for (i, &w) in hidden.iter().chain(core::iter::once(&1)).enumerate() {
            let weight = params.push(alloc::format!("{prefix}{i}.weight"), uniform_fan_in(&[w, prev], prev, rng));
            let bias = params.push(alloc::format!("{prefix}{i}.bias"), Tensor::zeros([w]));
            layers.push((weight, bias));
            prev = w;
        }
        Self { layers }
    }

    fn graph(&self, tape: &mut Tape, params: &ParamSet, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(params, w);
            let bv = tape.param(params, b);
            x = tape.linear(x, wv, Some(bv))?;
            if i < last {
                x = tape.gelu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DnnConfig {
    pub ws: usize,
    pub widths: Vec<usize>,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self { ws: 64, widths: vec![2048, 256] }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ws == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(invalid_config!("DNN window and widths must be positive"));
        }
        Ok(())
    }
}

/// Multiplications per output symbol of the DNN, output neuron included.
pub fn rmps_dnn(cfg: &DnnConfig) -> u64 {
    let mut widths = cfg.widths.clone();
    widths.push(1);
    rmps_dense(cfg.ws, &widths)
}

#[derive(Clone, Debug)]
pub struct Dnn {
    cfg: DnnConfig,
    params: ParamSet,
    stack: DenseStack,
}

impl Dnn {
    pub fn new(cfg: DnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let stack = DenseStack::build(&mut params, "dense", cfg.ws, &cfg.widths, &mut rng);
        Ok(Self { cfg, params, stack })
    }

    pub fn config(&self) -> &DnnConfig {
        &self.cfg
    }
}

impl Model for Dnn {
    fn name(&self) -> &str {
        "dnn"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn ws(&self) -> usize {
        self.cfg.ws
    }

    fn target_mode(&self) -> TargetMode {
        TargetMode::Center
    }

    fn forward_batch(&self, tape: &mut Tape, inputs: &[f64], batch: usize) -> Result<Var> {
        let x = tape.constant(Tensor::new([batch, self.cfg.ws], inputs.to_vec())?);
        self.stack.graph(tape, &self.params, x)
    }

    fn rmps(&self) -> u64 {
        rmps_dnn(&self.cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CnnConfig {
    pub ws: usize,
    pub channels: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    /// Hidden widths of the dense head; `[48]` or `[2048, 256]`.
    pub head: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { ws: 64, channels: 16, kernel: 5, conv_layers: 2, head: vec![48] }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ws == 0 || self.channels == 0 || self.conv_layers == 0 || self.head.iter().any(|&w| w == 0) {
            return Err(invalid_config!("CNN window, channels, layers and head widths must be positive"));
        }
        if self.kernel % 2 == 0 || self.kernel > self.ws {
            return Err(invalid_config!("CNN kernel {} must be odd and at most ws", self.kernel));
        }
        Ok(())
    }
}

pub fn rmps_cnn(cfg: &CnnConfig) -> u64 {
    let mut total = 0;
    let mut c_in = 1;
    for _ in 0..cfg.conv_layers {
        total += rmps_conv(cfg.ws, cfg.kernel, c_in, cfg.channels);
        c_in = cfg.channels;
    }
    let mut head = cfg.head.clone();
    head.push(1);
    total + rmps_dense(cfg.channels * cfg.ws, &head)
}

#[derive(Clone, Debug)]
pub struct Cnn {
    cfg: CnnConfig,
    params: ParamSet,
    convs: Vec<(ParamId, ParamId)>,
    head: DenseStack,
}

impl Cnn {
    pub fn new(cfg: CnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut convs = Vec::new();
        let mut c_in = 1;
        for i in 0..cfg.conv_layers {
            let w = params.push(
                alloc::format!("conv{i}.weight"),
                uniform_fan_in(&[cfg.channels, c_in, cfg.kernel], c_in * cfg.kernel, &mut rng),
            );
            let b = params.push(alloc::format!("conv{i}.bias"), Tensor::zeros([cfg.channels]));
            convs.push((w, b));
            c_in = cfg.channels;
        }
        let head = DenseStack::build(&mut params, "head", cfg.channels * cfg.ws, &cfg.head, &mut rng);
        Ok(Self { cfg, params, convs, head })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }
}

impl Model for Cnn {
    fn name(&self) -> &str {
        "cnn"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn ws(&self) -> usize {
        self.cfg.ws
    }

    fn target_mode(&self) -> TargetMode {
        TargetMode::Center
    }

    fn forward_batch(&self, tape: &mut Tape, inputs: &[f64], batch: usize) -> Result<Var> {
        let ws = self.cfg.ws;
        let mut h = tape.constant(Tensor::new([1, batch, ws], inputs.to_vec())?);
        for &(w, b) in &self.convs {
            let wv = tape.param(&self.params, w);
            let bv = tape.param(&self.params, b);
            h = tape.conv1d(h, wv, Some(bv))?;
            h = tape.gelu(h);
        }
        let rows = tape.swap_leading(h)?;
        let flat = tape.reshape(rows, &[batch, self.cfg.channels * ws])?;
        self.head.graph(tape, &self.params, flat)
    }

    fn rmps(&self) -> u64 {
        rmps_cnn(&self.cfg)
    }
}

/// Identifier of a baseline or FConvNet variant in sweep configs and reports.
pub fn model_label(kind: &str, size: usize) -> String {
    alloc::format!("{kind}-{size}")
}
