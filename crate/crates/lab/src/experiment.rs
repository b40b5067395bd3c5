//! One (model, ROP) point: simulate recordings, train or adapt, count bits.

use std::ops::Range;

use ponlab_core::baselines::{sato_equalize, sato_offsets, Cnn, Dnn};
use ponlab_core::channel::run_link;
use ponlab_core::dataset::{build_windows, normalize, split_75_10_15, Normalization, Splits, TargetMode, WindowedDataset};
use ponlab_core::fconvnet::{FConvNet, FConvNetConfig};
use ponlab_core::metrics::{ber_count, decide, BerCount, EqualizerReport};
use ponlab_core::seeds::{derive, fnv1a};
use ponlab_core::training::{equalize_sequence, train, History, Model};
use ponlab_core::txrx::{generate_rns_pam4, SymbolSequence};

use crate::config::{ModelId, SweepConfig, TrialMode};
use crate::LabError;

/// Offset of the record index of the evaluation-only recordings.
const EXTRA_RECORDING_BASE: u64 = 1 << 20;

/// Integer tag of a ROP, stable to 1 mdB.
fn rop_tag(rop_dbm: f64) -> u64 {
    (rop_dbm * 1000.0).round() as i64 as u64
}

/// Seed of the link realizations at one ROP; shared by all models so that
/// every equalizer sees the same recordings.
pub fn link_seed(master: u64, rop_dbm: f64) -> u64 {
    derive(derive(master, fnv1a(b"link")), rop_tag(rop_dbm))
}

/// Seed of model initialization and batch order at one (model, ROP).
pub fn model_seed(master: u64, model: ModelId, rop_dbm: f64) -> u64 {
    derive(derive(master, fnv1a(model.to_string().as_bytes())), rop_tag(rop_dbm))
}

/// Received samples of one recording at both equalizer rates.
#[derive(Clone, Debug)]
pub struct Trace {
    pub symbols: SymbolSequence,
    pub one_sps: Vec<f64>,
    pub two_sps: Vec<f64>,
}

impl Trace {
    fn concat(traces: &[Trace]) -> Result<Trace, LabError> {
        let levels = traces.iter().flat_map(|t| t.symbols.levels().iter().copied()).collect();
        Ok(Trace {
            symbols: SymbolSequence::from_levels(levels, traces[0].symbols.seed())?,
            one_sps: traces.iter().flat_map(|t| t.one_sps.iter().copied()).collect(),
            two_sps: traces.iter().flat_map(|t| t.two_sps.iter().copied()).collect(),
        })
    }
}

/// Recording `index` at `rop_dbm`.
pub fn record(cfg: &SweepConfig, rop_dbm: f64, index: u64) -> Result<Trace, LabError> {
    let seed = derive(link_seed(cfg.master_seed, rop_dbm), index);
    let symbols = generate_rns_pam4(derive(seed, 1), cfg.symbols)?;
    let mut link = cfg.link.clone();
    link.rop_dbm = rop_dbm;
    link.seed = derive(seed, 2);
    let out = run_link(&symbols, &link)?;
    Ok(Trace { symbols, one_sps: out.one_sps.samples, two_sps: out.two_sps.samples })
}

/// Training recordings (joined when trials are concatenated) and the
/// evaluation-only recordings of one ROP.
pub struct Recordings {
    pub train: Vec<Trace>,
    pub extra: Vec<Trace>,
}

pub fn recordings(cfg: &SweepConfig, rop_dbm: f64) -> Result<Recordings, LabError> {
    let trials = (0..cfg.trials as u64).map(|i| record(cfg, rop_dbm, i)).collect::<Result<Vec<_>, _>>()?;
    let train = match cfg.trial_mode {
        TrialMode::Batched => trials,
        TrialMode::Concatenated => vec![Trace::concat(&trials)?],
    };
    let extra = (0..cfg.extra_eval_sequences as u64)
        .map(|i| record(cfg, rop_dbm, EXTRA_RECORDING_BASE + i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Recordings { train, extra })
}

pub fn fconvnet_config(cfg: &SweepConfig, ws: usize) -> FConvNetConfig {
    FConvNetConfig { ws, ..cfg.fconvnet.clone() }
}

/// Untrained network for `id`; `None` for the blind FFE.
pub fn build_model(cfg: &SweepConfig, id: ModelId, seed: u64) -> Result<Option<Box<dyn Model + Send>>, LabError> {
    Ok(match id {
        ModelId::FConvNet(ws) => Some(Box::new(FConvNet::new(fconvnet_config(cfg, ws), seed)?)),
        ModelId::Dnn => Some(Box::new(Dnn::new(cfg.dnn.clone(), seed)?)),
        ModelId::Cnn => Some(Box::new(Cnn::new(cfg.cnn.clone(), seed)?)),
        ModelId::Sato(_) => None,
    })
}

pub fn rmps(cfg: &SweepConfig, id: ModelId) -> Result<u64, LabError> {
    Ok(match id {
        ModelId::FConvNet(ws) => ponlab_core::fconvnet::rmps_fconvnet(&fconvnet_config(cfg, ws)),
        ModelId::Dnn => ponlab_core::baselines::rmps_dnn(&cfg.dnn),
        ModelId::Cnn => ponlab_core::baselines::rmps_cnn(&cfg.cnn),
        // one product per tap per symbol, taps at T/2
        ModelId::Sato(taps) => taps as u64,
    })
}

/// A trained network with the normalization it was trained under.
pub struct TrainedNet {
    pub model: Box<dyn Model + Send>,
    pub norm: Normalization,
    pub history: History,
    /// Normalized test windows, for dumps and offline evaluation.
    pub test_set: WindowedDataset,
}

pub struct PointResult {
    pub report: EqualizerReport,
    pub net: Option<TrainedNet>,
}

fn train_stride(cfg: &SweepConfig, model: &dyn Model) -> usize {
    match model.target_mode() {
        TargetMode::Sequence => (model.ws() / 2).max(1),
        TargetMode::Center => cfg.center_train_stride,
    }
}

/// Pooled splits over the training recordings plus, per recording, the first
/// symbol of its test split.
fn pooled_splits(traces: &[Trace], ws: usize, stride: usize, mode: TargetMode) -> Result<(Splits, Vec<usize>), LabError> {
    let mut pooled: Option<Splits> = None;
    let mut test_starts = Vec::new();
    let mut offset = 0;
    for t in traces {
        let d = build_windows(&t.one_sps, &t.symbols.levels_f64(), ws, stride, mode)?;
        let s = split_75_10_15(&d)?;
        test_starts.push(s.test.source_range().start);
        match pooled.as_mut() {
            None => pooled = Some(s),
            Some(p) => {
                p.train.append(&s.train, offset)?;
                p.val.append(&s.val, offset)?;
                p.test.append(&s.test, offset)?;
            }
        }
        offset += t.one_sps.len();
    }
    Ok((pooled.expect("at least one trial"), test_starts))
}

/// Denormalized network estimates for the symbols in `range` of `x`, using
/// enough context on both sides that padding never reaches `range`.
pub fn net_estimates(model: &dyn Model, norm: &Normalization, x: &[f64], range: Range<usize>) -> Result<Vec<f64>, LabError> {
    let ctx = model.ws();
    let a = range.start.saturating_sub(ctx);
    let b = (range.end + ctx).min(x.len());
    let xn: Vec<f64> = x[a..b].iter().map(|&v| norm.input(v)).collect();
    let y = equalize_sequence(model, &xn)?;
    Ok(y[range.start - a..range.end - a].iter().map(|&v| norm.denormalize_target(v)).collect())
}

fn count(estimates: &[f64], truth: &SymbolSequence, range: Range<usize>) -> Result<BerCount, LabError> {
    let d = decide(estimates, truth.seed());
    Ok(ber_count(&d, &truth.slice(range.start, range.end), 0)?)
}

fn check_range(range: &Range<usize>, n: usize) -> Result<(), LabError> {
    if range.start >= range.end || range.end > n {
        return Err(LabError::Format(format!("evaluation range {range:?} is empty for {n} symbols")));
    }
    Ok(())
}

/// Counted symbols of a training recording (`test_start..n - edge`) or of an
/// evaluation-only recording (`edge..n - edge`).
fn eval_ranges(rec: &Recordings, test_starts: &[usize], edge: usize) -> Result<Vec<Range<usize>>, LabError> {
    let mut ranges = Vec::new();
    for (t, &s) in rec.train.iter().zip(test_starts) {
        ranges.push(s.max(edge)..t.symbols.len().saturating_sub(edge));
    }
    for t in &rec.extra {
        ranges.push(edge..t.symbols.len().saturating_sub(edge));
    }
    for (r, t) in ranges.iter().zip(rec.train.iter().chain(&rec.extra)) {
        check_range(r, t.symbols.len())?;
    }
    Ok(ranges)
}

fn report(cfg: &SweepConfig, hash: &str, id: ModelId, rop_dbm: f64, c: &BerCount) -> Result<EqualizerReport, LabError> {
    Ok(EqualizerReport {
        model: id.to_string(),
        config_hash: hash.to_string(),
        rop_dbm,
        ber: c.ber,
        bit_errors: c.bit_errors,
        bits_counted: c.bits,
        symbol_errors: c.symbol_errors,
        ber_mean: None,
        rmps: rmps(cfg, id)?,
        seed: model_seed(cfg.master_seed, id, rop_dbm),
        low_confidence: c.low_confidence(),
        epochs: None,
        best_val_mse: None,
    })
}

/// Blind FFE from each restart offset; the report carries the run with the
/// lowest pooled BER and the mean over runs.
fn run_sato(cfg: &SweepConfig, hash: &str, taps: usize, rop_dbm: f64, rec: &Recordings) -> Result<PointResult, LabError> {
    let sato = ponlab_core::baselines::SatoConfig { taps, ..cfg.sato.clone() };
    let id = ModelId::Sato(taps);
    let seed = model_seed(cfg.master_seed, id, rop_dbm);
    let traces: Vec<&Trace> = rec.train.iter().chain(&rec.extra).collect();
    let test_starts: Vec<usize> = rec.train.iter().map(|t| (t.symbols.len() as f64 * 0.85).round() as usize).collect();
    let ranges = eval_ranges(rec, &test_starts, taps)?;
    let offsets: Vec<Vec<usize>> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| sato_offsets(&sato, t.symbols.len(), derive(seed, i as u64)))
        .collect();
    let mut runs = Vec::with_capacity(sato.restarts);
    for r in 0..sato.restarts {
        let mut total = BerCount::empty();
        for (i, (t, range)) in traces.iter().zip(&ranges).enumerate() {
            let out = sato_equalize(&t.two_sps, &sato, offsets[i][r])?;
            total.merge(&count(&out.estimates[range.clone()], &t.symbols, range.clone())?);
        }
        runs.push(total);
    }
    let best = runs.iter().min_by(|a, b| a.ber.total_cmp(&b.ber)).expect("at least one restart");
    let mut rep = report(cfg, hash, id, rop_dbm, best)?;
    rep.ber_mean = Some(runs.iter().map(|c| c.ber).sum::<f64>() / runs.len() as f64);
    Ok(PointResult { report: rep, net: None })
}

/// Trains a network on the pooled training splits and returns it with its
/// normalization and history, before any BER counting.
pub fn train_net(cfg: &SweepConfig, id: ModelId, rop_dbm: f64, rec: &Recordings) -> Result<(TrainedNet, Vec<usize>), LabError> {
    let seed = model_seed(cfg.master_seed, id, rop_dbm);
    let mut model = build_model(cfg, id, seed)?
        .ok_or_else(|| LabError::Config(format!("{id} is not a trainable network")))?;
    let stride = train_stride(cfg, model.as_ref());
    let (raw, test_starts) = pooled_splits(&rec.train, model.ws(), stride, model.target_mode())?;
    let splits = normalize(&raw)?;
    let tc = ponlab_core::training::TrainConfig { seed: derive(seed, fnv1a(b"train")), ..cfg.train.clone() };
    let history = train(model.as_mut(), &splits.train, &splits.val, &tc)?;
    let norm = splits.train.normalization();
    Ok((TrainedNet { model, norm, history, test_set: splits.test }, test_starts))
}

fn run_net(cfg: &SweepConfig, hash: &str, id: ModelId, rop_dbm: f64, rec: &Recordings) -> Result<PointResult, LabError> {
    let (net, test_starts) = train_net(cfg, id, rop_dbm, rec)?;
    let edge = net.model.ws();
    let ranges = eval_ranges(rec, &test_starts, edge)?;
    let mut total = BerCount::empty();
    for (t, range) in rec.train.iter().chain(&rec.extra).zip(ranges) {
        let est = net_estimates(net.model.as_ref(), &net.norm, &t.one_sps, range.clone())?;
        total.merge(&count(&est, &t.symbols, range)?);
    }
    let mut rep = report(cfg, hash, id, rop_dbm, &total)?;
    rep.epochs = Some(net.history.epochs.len());
    rep.best_val_mse = Some(net.history.best_val_mse);
    Ok(PointResult { report: rep, net: Some(net) })
}

/// Runs one point on already simulated recordings.
pub fn run_point_on(
    cfg: &SweepConfig,
    hash: &str,
    id: ModelId,
    rop_dbm: f64,
    rec: &Recordings,
) -> Result<PointResult, LabError> {
    match id {
        ModelId::Sato(taps) => run_sato(cfg, hash, taps, rop_dbm, rec),
        _ => run_net(cfg, hash, id, rop_dbm, rec),
    }
}

pub fn run_point(cfg: &SweepConfig, hash: &str, id: ModelId, rop_dbm: f64) -> Result<PointResult, LabError> {
    let rec = recordings(cfg, rop_dbm)?;
    run_point_on(cfg, hash, id, rop_dbm, &rec)
}
