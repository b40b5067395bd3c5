//! FConvNet: decomposition, embedding, FFT period partition, a shared
//! Inception ConvNet over each 2D period view, and spectral-softmax
//! reconstruction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::TargetMode;
use crate::error::{invalid_config, invalid_input, Result};
use crate::numerics::{rfft_amplitude, softmax_slice, ParamId, ParamSet, Spectrum, Tape, Tensor, Var};
use crate::training::Model;

/// Parallel kernel sizes of every Inception block.
pub const INCEPTION_KERNELS: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FConvNetConfig {
    pub ws: usize,
    pub d_model: usize,
    /// Number of spectral peaks (branches).
    pub k: usize,
    /// Embedding kernel.
    pub s_k1: usize,
    /// Kernel length used in complexity accounting of the Inception blocks.
    pub n_k2: usize,
    pub d_i: usize,
    pub d_ii: usize,
    /// Moving-average length of the decomposition.
    pub ma_len: usize,
    /// Adds the embedding back after reconstruction.
    pub residual: bool,
    /// Square Inception kernels over the period matrix; 1D along the period
    /// axis when false.
    pub kernel_2d: bool,
}

impl Default for FConvNetConfig {
    fn default() -> Self {
        Self { ws: 64, d_model: 16, k: 3, s_k1: 3, n_k2: 3, d_i: 16, d_ii: 16, ma_len: 25, residual: true, kernel_2d: true }
    }
}

impl FConvNetConfig {
    pub fn with_ws(ws: usize) -> Self {
        Self { ws, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ws < 4 {
            return Err(invalid_config!("window size {} is too short", self.ws));
        }
        if self.k == 0 || self.k > self.ws / 2 {
            return Err(invalid_config!("peak count {} outside 1..={}", self.k, self.ws / 2));
        }
        if self.s_k1 % 2 == 0 || self.s_k1 > self.ws {
            return Err(invalid_config!("embedding kernel {} must be odd and at most ws", self.s_k1));
        }
        if self.ma_len % 2 == 0 || self.ma_len >= self.ws {
            return Err(invalid_config!("moving-average length {} must be odd and below ws {}", self.ma_len, self.ws));
        }
        if self.d_model == 0 || self.d_ii == 0 {
            return Err(invalid_config!("channel counts must be positive"));
        }
        if self.d_i != self.d_model {
            return Err(invalid_config!(
                "the first Inception block reads the embedding, so d_I ({}) must equal d_model ({})",
                self.d_i,
                self.d_model
            ));
        }
        Ok(())
    }
}

/// Real multiplications per symbol as the accounting formula states it:
/// `n_k1 d_model (n_s - n_k1 + 1) + 2 n_s^2 + 2 d_I n_k2 d_II (n_s - n_k2 + 1)`.
pub fn rmps_fconvnet(cfg: &FConvNetConfig) -> u64 {
    let ns = cfg.ws as u64;
    let nk1 = cfg.s_k1 as u64;
    let nk2 = cfg.n_k2 as u64;
    let embed = nk1 * cfg.d_model as u64 * (ns + 1).saturating_sub(nk1);
    let spectral = 2 * ns * ns;
    let inception = 2 * (cfg.d_i as u64 * nk2 * cfg.d_ii as u64) * (ns + 1).saturating_sub(nk2);
    embed + spectral + inception
}

/// Centered moving average with edge replication, and `x - trend`.
pub fn decompose(x: &[f64], ma_len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if ma_len % 2 == 0 || ma_len >= x.len() {
        return Err(invalid_config!("moving-average length {ma_len} must be odd and below {}", x.len()));
    }
    let h = (ma_len / 2) as isize;
    let last = x.len() as isize - 1;
    let trend: Vec<f64> = (0..x.len() as isize)
        .map(|t| (-h..=h).map(|i| x[(t + i).clamp(0, last) as usize]).sum::<f64>() / ma_len as f64)
        .collect();
    let residual = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok((trend, residual))
}

/// Amplitudes at or below this fraction of the largest are treated as zero.
const ZERO_AMPLITUDE: f64 = 1e-12;

/// The `k` strongest non-DC bins, strongest first, ties to the lower index.
pub fn select_peaks(spec: &Spectrum, k: usize) -> Result<Vec<(usize, f64)>> {
    let half = spec.source_length() / 2;
    if k == 0 || k > half {
        return Err(invalid_config!("cannot select {k} peaks from {half} non-DC bins"));
    }
    let amps = spec.amplitudes();
    let scale = amps.iter().copied().fold(0.0, f64::max);
    let mut bins: Vec<(usize, f64)> = (1..=half)
        .map(|f| {
            let a = amps[f];
            (f, if a <= ZERO_AMPLITUDE * scale { 0.0 } else { a })
        })
        .collect();
    bins.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    bins.truncate(k);
    Ok(bins)
}

/// Sub-series length `ceil(ws / f)` for frequency index `f`.
pub fn period_length(ws: usize, f: usize) -> usize {
    ws.div_ceil(f)
}

/// One branch's 2D view of a `[d, ws]` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodPartition {
    pub f: usize,
    pub w: usize,
    pub ws: usize,
    pub amplitude: f64,
    /// `[d, f, w]`, zero beyond position `ws` of each flattened channel.
    pub view2d: Tensor,
}

impl PeriodPartition {
    pub fn rows(&self) -> usize {
        self.f
    }

    pub fn padded_len(&self) -> usize {
        self.f * self.w
    }

    /// Flattens each channel and drops the padding: `[d, ws]`.
    pub fn flatten(&self) -> Tensor {
        let d = self.view2d.shape()[0];
        let p = self.padded_len();
        let mut out = Vec::with_capacity(d * self.ws);
        for c in 0..d {
            out.extend_from_slice(&self.view2d.data()[c * p..c * p + self.ws]);
        }
        Tensor::new([d, self.ws], out).expect("shape matches data")
    }
}

pub fn partition(x: &Tensor, f: usize) -> Result<PeriodPartition> {
    partition_with_amplitude(x, f, 0.0)
}

pub fn partition_with_amplitude(x: &Tensor, f: usize, amplitude: f64) -> Result<PeriodPartition> {
    let &[d, ws] = x.shape() else {
        return Err(invalid_input!("partition expects [d, ws], got {:?}", x.shape()));
    };
    if f == 0 || f > ws / 2 {
        return Err(invalid_input!("frequency index {f} outside 1..={}", ws / 2));
    }
    let w = period_length(ws, f);
    let p = f * w;
    let mut data = vec![0.0; d * p];
    for c in 0..d {
        data[c * p..c * p + ws].copy_from_slice(&x.data()[c * ws..(c + 1) * ws]);
    }
    Ok(PeriodPartition { f, w, ws, amplitude, view2d: Tensor::new([d, f, w], data)? })
}

/// Softmax weights of the branch amplitudes.
pub fn reconstruction_weights(amps: &[f64]) -> Result<Vec<f64>> {
    if amps.is_empty() {
        return Err(invalid_input!("reconstruction needs at least one branch"));
    }
    softmax_slice(amps)
}

/// `sum_k softmax(amps)_k branch_k + input`.
pub fn reconstruct(branches: &[Tensor], amps: &[f64], input: Option<&Tensor>) -> Result<Tensor> {
    if branches.len() != amps.len() {
        return Err(invalid_input!("{} branches but {} amplitudes", branches.len(), amps.len()));
    }
    let alpha = reconstruction_weights(amps)?;
    let shape = branches[0].shape().to_vec();
    let mut out = match input {
        Some(x) => x.data().to_vec(),
        None => vec![0.0; branches[0].len()],
    };
    for (b, a) in branches.iter().zip(&alpha) {
        if b.shape() != shape.as_slice() || out.len() != b.len() {
            return Err(invalid_input!("branch shape {:?} differs from {:?}", b.shape(), shape));
        }
        out.iter_mut().zip(b.data()).for_each(|(o, v)| *o += a * v);
    }
    Tensor::new(shape, out)
}

/// Parameter handles of one Inception block: one kernel per size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionBlock {
    pub kernels: [ParamId; 3],
}

/// Same-padded convolutions of sizes 1/3/5 over `x: [c_in, f, w]` (square
/// kernels across periods and phases, or along `w` only), averaged, GeLU,
/// then positions past `ws` zeroed.
pub fn inception_block(tape: &mut Tape, params: &ParamSet, block: &InceptionBlock, x: Var, ws: usize) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for id in block.kernels {
        let w = tape.param(params, id);
        let y = match params.get(id).shape().len() {
            4 => tape.conv2d(x, w, None)?,
            _ => tape.conv1d(x, w, None)?,
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, y)?,
            None => y,
        });
    }
    let avg = tape.scale(acc.expect("three kernels"), 1.0 / INCEPTION_KERNELS.len() as f64);
    let act = tape.gelu(avg);
    let shape = tape.value(act).shape().to_vec();
    let (c, p) = (shape[0], shape[1] * shape[2]);
    if p == ws {
        return Ok(act);
    }
    let mut mask = vec![0.0; c * p];
    for ch in 0..c {
        mask[ch * p..ch * p + ws].iter_mut().for_each(|m| *m = 1.0);
    }
    tape.mask(act, mask)
}

/// Two stacked Inception blocks applied to a partition view.
pub fn inception_forward(v: &PeriodPartition, params: &ParamSet, blocks: &[InceptionBlock; 2]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(v.view2d.clone());
    let h = inception_block(&mut tape, params, &blocks[0], x, v.ws)?;
    let y = inception_block(&mut tape, params, &blocks[1], h, v.ws)?;
    Ok(tape.value(y).clone())
}

#[derive(Clone, Debug)]
pub struct FConvNet {
    cfg: FConvNetConfig,
    name: String,
    params: ParamSet,
    embed: ParamId,
    blocks: [InceptionBlock; 2],
    proj: ParamId,
}

fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl FConvNet {
    pub fn new(cfg: FConvNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.d_model;
        let embed = params.push("embed", uniform_fan_in(&[d, 1, cfg.s_k1], cfg.s_k1, &mut rng));
        let square = cfg.kernel_2d;
        let mut make_block = |name: &str, c_in: usize, c_out: usize, params: &mut ParamSet| {
            let kernels = INCEPTION_KERNELS.map(|k| {
                let (shape, fan_in) = if square {
                    (vec![c_out, c_in, k, k], c_in * k * k)
                } else {
                    (vec![c_out, c_in, k], c_in * k)
                };
                params.push(alloc::format!("{name}.k{k}"), uniform_fan_in(&shape, fan_in, &mut rng))
            });
            InceptionBlock { kernels }
        };
        let b1 = make_block("inception1", d, cfg.d_ii, &mut params);
        let b2 = make_block("inception2", cfg.d_ii, d, &mut params);
        let proj = params.push("proj", uniform_fan_in(&[1, d, 1], d, &mut rng));
        Ok(Self { name: alloc::format!("fconvnet-{}", cfg.ws), cfg, params, embed, blocks: [b1, b2], proj })
    }

    pub fn config(&self) -> &FConvNetConfig {
        &self.cfg
    }

    pub fn embed_id(&self) -> ParamId {
        self.embed
    }

    pub fn blocks(&self) -> &[InceptionBlock; 2] {
        &self.blocks
    }

    pub fn proj_id(&self) -> ParamId {
        self.proj
    }

    /// Zeroes everything except the embedding, leaving the trend path.
    pub fn zero_non_embedding(&mut self) {
        let embed = self.embed;
        for id in self.params.ids().collect::<Vec<_>>() {
            if id != embed {
                self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Graph of one window, returning `[ws]`.
    pub fn window_graph(&self, tape: &mut Tape, x: &[f64]) -> Result<Var> {
        let ws = self.cfg.ws;
        if x.len() != ws {
            return Err(invalid_input!("window of {} samples, model expects {ws}", x.len()));
        }
        let (trend, residual) = decompose(x, self.cfg.ma_len)?;
        let spectrum = rfft_amplitude(&residual)?;
        let peaks = select_peaks(&spectrum, self.cfg.k)?;
        let d = self.cfg.d_model;

        let r = tape.constant(Tensor::new([1, ws], residual)?);
        let we = tape.param(&self.params, self.embed);
        let emb = tape.conv1d(r, we, None)?;

        let amps: Vec<f64> = peaks.iter().map(|p| p.1).collect();
        let alpha = reconstruction_weights(&amps)?;
        let mut combined = if self.cfg.residual { Some(emb) } else { None };
        for (&(f, _), &a) in peaks.iter().zip(&alpha) {
            let w = period_length(ws, f);
            let padded = tape.pad(emb, f * w)?;
            let view = tape.reshape(padded, &[d, f, w])?;
            let h = inception_block(tape, &self.params, &self.blocks[0], view, ws)?;
            let h = inception_block(tape, &self.params, &self.blocks[1], h, ws)?;
            let flat = tape.reshape(h, &[d, f * w])?;
            let branch = tape.truncate(flat, ws)?;
            let weighted = tape.scale(branch, a);
            combined = Some(match combined {
                Some(c) => tape.add(c, weighted)?,
                None => weighted,
            });
        }
        let combined = combined.expect("at least one branch");
        let wp = tape.param(&self.params, self.proj);
        let y = tape.conv1d(combined, wp, None)?;
        let y = tape.reshape(y, &[ws])?;
        let t = tape.constant(Tensor::from_vec(trend));
        tape.add(y, t)
    }

    /// Plain forward pass of one window.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.window_graph(&mut tape, x)?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl Model for FConvNet {
    fn name(&self) -> &str {
        &self.name
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
        TargetMode::Sequence
    }

    fn forward_batch(&self, tape: &mut Tape, inputs: &[f64], batch: usize) -> Result<Var> {
        let ws = self.cfg.ws;
        if inputs.len() != batch * ws || batch == 0 {
            return Err(invalid_input!("{} inputs for {batch} windows of {ws}", inputs.len()));
        }
        let outs = inputs.chunks(ws).map(|x| self.window_graph(tape, x)).collect::<Result<Vec<_>>>()?;
        tape.stack(&outs)
    }

    fn rmps(&self) -> u64 {
        rmps_fconvnet(&self.cfg)
    }
}
