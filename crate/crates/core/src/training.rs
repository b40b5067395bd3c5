//! Shared optimizer, loss and training loop for every gradient-trained model,
//! plus sequence-level inference.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::{TargetMode, WindowedDataset};
use crate::error::{invalid_config, invalid_input, numeric, Result};
use crate::numerics::{Gradients, ParamSet, Tape, Tensor, Var};
use crate::seeds;

/// A trainable equalizer operating on windows of normalized samples.
pub trait Model {
    fn name(&self) -> &str;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn ws(&self) -> usize;
    fn target_mode(&self) -> TargetMode;
    /// Graph for `batch` windows stored row-major in `inputs`; the result is
    /// `[batch, target_width]`.
    fn forward_batch(&self, tape: &mut Tape, inputs: &[f64], batch: usize) -> Result<Var>;
    fn rmps(&self) -> u64;

    fn target_width(&self) -> usize {
        match self.target_mode() {
            TargetMode::Sequence => self.ws(),
            TargetMode::Center => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            l2: 1e-6,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid_config!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0) {
            return Err(invalid_config!("L2 weight must be nonnegative, got {}", self.l2));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(invalid_config!("batch size, epoch cap and patience must be at least 1"));
        }
        Ok(())
    }
}

/// `mean((pred - target)^2) + l2 * sum(params^2)` on the tape.
pub fn mse_l2_loss(tape: &mut Tape, pred: Var, target: Var, params: &ParamSet, l2: f64) -> Result<Var> {
    let mse = tape.mse(pred, target)?;
    if l2 == 0.0 {
        return Ok(mse);
    }
    let mut total = mse;
    for id in params.ids() {
        let p = tape.param(params, id);
        let sq = tape.sum_squares(p);
        let term = tape.scale(sq, l2);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Adaptive-moment or plain gradient descent state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { kind, lr, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.t += 1;
        let (c1, c2) = (1.0 - libm::pow(BETA1, self.t as f64), 1.0 - libm::pow(BETA2, self.t as f64));
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads.iter()).enumerate() {
            match self.kind {
                Optimizer::Sgd => {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= self.lr * d);
                }
                Optimizer::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * d;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * d * d;
                        *w -= self.lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + EPSILON);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn check_dataset<M: Model + ?Sized>(model: &M, d: &WindowedDataset, what: &str) -> Result<()> {
    if d.ws() != model.ws() || d.mode() != model.target_mode() {
        return Err(invalid_input!(
            "{what} split has ws {} / {:?}, model {} expects ws {} / {:?}",
            d.ws(),
            d.mode(),
            model.name(),
            model.ws(),
            model.target_mode()
        ));
    }
    if d.is_empty() {
        return Err(invalid_input!("{what} split is empty"));
    }
    Ok(())
}

/// Windows evaluated per inference graph.
const PREDICT_CHUNK: usize = 256;

/// Model outputs for `n` windows stored row-major in `inputs`.
pub fn predict<M: Model + ?Sized>(model: &M, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
    let ws = model.ws();
    if inputs.len() != n * ws {
        return Err(invalid_input!("{} inputs for {n} windows of {ws}", inputs.len()));
    }
    let mut out = Vec::with_capacity(n * model.target_width());
    for chunk in inputs.chunks(PREDICT_CHUNK * ws) {
        let mut tape = Tape::new();
        let y = model.forward_batch(&mut tape, chunk, chunk.len() / ws)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(out)
}

/// Mean squared error of the model on a dataset.
pub fn evaluate_mse<M: Model + ?Sized>(model: &M, d: &WindowedDataset) -> Result<f64> {
    let pred = predict(model, d.inputs(), d.len())?;
    let sum: f64 = pred.iter().zip(d.targets()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.len().max(1) as f64)
}

/// Mini-batch training with validation-based early stopping. The parameters
/// with the lowest validation MSE are restored before returning.
pub fn train<M: Model + ?Sized>(
    model: &mut M,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    check_dataset(model, train_set, "training")?;
    check_dataset(model, val_set, "validation")?;
    let ws = model.ws();
    let tw = model.target_width();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, model.params());
    let mut best = (evaluate_mse(model, val_set)?, model.params().flatten(), 0usize);
    let mut history = History { epochs: Vec::new(), best_epoch: 0, best_val_mse: best.0 };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_in = Vec::with_capacity(cfg.batch_size * ws);
    let mut batch_tg = Vec::with_capacity(cfg.batch_size * tw);

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut mse_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_in.clear();
            batch_tg.clear();
            for &i in idx {
                batch_in.extend_from_slice(train_set.input(i));
                batch_tg.extend_from_slice(train_set.target(i));
            }
            let mut tape = Tape::new();
            let pred = model.forward_batch(&mut tape, &batch_in, idx.len())?;
            let target = tape.constant(Tensor::new([idx.len(), tw], batch_tg.clone())?);
            let mse = tape.mse(pred, target)?;
            let loss = mse_l2_loss(&mut tape, pred, target, model.params(), cfg.l2)?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(numeric!(
                    "loss became {loss_value} for {} (lr {}, epoch {epoch}, batch {b})",
                    model.name(),
                    cfg.learning_rate
                ));
            }
            let grads = tape.backward(loss, model.params())?;
            if !grads.is_finite() {
                return Err(numeric!(
                    "non-finite gradient for {} (lr {}, epoch {epoch}, batch {b})",
                    model.name(),
                    cfg.learning_rate
                ));
            }
            mse_sum += tape.value(mse).data()[0] * idx.len() as f64;
            opt.step(model.params_mut(), &grads);
        }
        let val_mse = evaluate_mse(model, val_set)?;
        if !val_mse.is_finite() {
            return Err(numeric!("validation MSE became {val_mse} for {} at epoch {epoch}", model.name()));
        }
        history.epochs.push(EpochRecord { epoch, train_mse: mse_sum / train_set.len() as f64, val_mse });
        if val_mse < best.0 {
            best = (val_mse, model.params().flatten(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    model.params_mut().load_flat(&best.1)?;
    history.best_epoch = best.2;
    history.best_val_mse = best.0;
    Ok(history)
}

/// Runs the model over a whole normalized sequence and returns one output per
/// input sample. Center-target models slide one step at a time; sequence
/// models hop by half a window and keep the central half of each output.
/// The sequence is zero-padded at both ends so every sample gets an output.
pub fn equalize_sequence<M: Model + ?Sized>(model: &M, x: &[f64]) -> Result<Vec<f64>> {
    let ws = model.ws();
    let n = x.len();
    if n == 0 {
        return Err(invalid_input!("empty sequence"));
    }
    match model.target_mode() {
        TargetMode::Center => {
            let front = ws / 2;
            let mut padded = vec![0.0; front];
            padded.extend_from_slice(x);
            padded.resize(n + ws - 1, 0.0);
            let mut out = Vec::with_capacity(n);
            let mut windows = Vec::with_capacity(PREDICT_CHUNK * ws);
            for start in (0..n).step_by(PREDICT_CHUNK) {
                let end = (start + PREDICT_CHUNK).min(n);
                windows.clear();
                for s in start..end {
                    windows.extend_from_slice(&padded[s..s + ws]);
                }
                out.extend(predict(model, &windows, end - start)?);
            }
            Ok(out)
        }
        TargetMode::Sequence => {
            let hop = (ws / 2).max(1);
            let front = (ws - hop) / 2;
            let count = n.div_ceil(hop);
            let mut padded = vec![0.0; front];
            padded.extend_from_slice(x);
            padded.resize((count - 1) * hop + ws, 0.0);
            let mut windows = Vec::with_capacity(count * ws);
            for j in 0..count {
                windows.extend_from_slice(&padded[j * hop..j * hop + ws]);
            }
            let y = predict(model, &windows, count)?;
            let mut out = Vec::with_capacity(count * hop);
            for j in 0..count {
                out.extend_from_slice(&y[j * ws + front..j * ws + front + hop]);
            }
            out.truncate(n);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_windows, split_75_10_15};

    /// `y = a * x + b` per sample, the smallest possible model.
    #[derive(Clone)]
    struct Affine {
        params: ParamSet,
        ws: usize,
        mode: TargetMode,
    }

    impl Affine {
        fn new(ws: usize, mode: TargetMode) -> Self {
            let mut params = ParamSet::new();
            params.push("a", Tensor::new([1, 1], vec![0.2]).unwrap());
            params.push("b", Tensor::new([1], vec![0.0]).unwrap());
            Self { params, ws, mode }
        }
    }

    impl Model for Affine {
        fn name(&self) -> &str {
            "affine"
        }
        fn params(&self) -> &ParamSet {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamSet {
            &mut self.params
        }
        fn ws(&self) -> usize {
            self.ws
        }
        fn target_mode(&self) -> TargetMode {
            self.mode
        }
        fn forward_batch(&self, tape: &mut Tape, inputs: &[f64], batch: usize) -> Result<Var> {
            let x: Vec<f64> = match self.mode {
                TargetMode::Sequence => inputs.to_vec(),
                TargetMode::Center => inputs.chunks(self.ws).map(|w| w[self.ws / 2]).collect(),
            };
            let rows = x.len();
            let xv = tape.constant(Tensor::new([rows, 1], x)?);
            let a = tape.param(&self.params, crate::numerics::ParamId(0));
            let b = tape.param(&self.params, crate::numerics::ParamId(1));
            let y = tape.linear(xv, a, Some(b))?;
            tape.reshape(y, &[batch, self.target_width()])
        }
        fn rmps(&self) -> u64 {
            1
        }
    }

    fn linear_data(mode: TargetMode) -> crate::dataset::Splits {
        let x: Vec<f64> = (0..2000).map(|i| libm::sin(i as f64 * 0.37) * 1.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 0.5).collect();
        split_75_10_15(&build_windows(&x, &y, 8, 4, mode).unwrap()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_vec(vec![1.0, -1.0]));
        let z = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let empty = ParamSet::new();
        let l = mse_l2_loss(&mut t, p, z, &empty, 0.0).unwrap();
        assert_eq!(t.value(l).data()[0], 1.0);
        let l0 = mse_l2_loss(&mut t, p, p, &empty, 0.0).unwrap();
        assert_eq!(t.value(l0).data()[0], 0.0);
        let mut one = ParamSet::new();
        one.push("w", Tensor::from_vec(vec![2.0]));
        let l2 = mse_l2_loss(&mut t, p, p, &one, 0.1).unwrap();
        assert!((t.value(l2).data()[0] - 0.4).abs() < 1e-15);
        let q = t.constant(Tensor::from_vec(vec![1.0]));
        assert!(mse_l2_loss(&mut t, p, q, &empty, 0.0).is_err());
    }

    #[test]
    fn learns_a_linear_map() {
        for mode in [TargetMode::Sequence, TargetMode::Center] {
            let s = linear_data(mode);
            let mut m = Affine::new(8, mode);
            let cfg = TrainConfig { learning_rate: 0.05, l2: 0.0, max_epochs: 200, ..Default::default() };
            let h = train(&mut m, &s.train, &s.val, &cfg).unwrap();
            assert!(h.best_val_mse < 1e-3, "{mode:?}: {}", h.best_val_mse);
        }
    }

    #[test]
    fn restores_the_best_validation_parameters() {
        let s = linear_data(TargetMode::Sequence);
        let mut m = Affine::new(8, TargetMode::Sequence);
        let cfg = TrainConfig { learning_rate: 0.3, l2: 0.0, max_epochs: 15, patience: 3, ..Default::default() };
        let h = train(&mut m, &s.train, &s.val, &cfg).unwrap();
        let min = h.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min).min(h.best_val_mse);
        assert_eq!(evaluate_mse(&m, &s.val).unwrap(), min);
        assert_eq!(h.best_val_mse, min);
    }

    #[test]
    fn heavy_l2_shrinks_weights() {
        let s = linear_data(TargetMode::Sequence);
        let cfg = TrainConfig { learning_rate: 0.05, l2: 0.0, max_epochs: 30, ..Default::default() };
        let mut free = Affine::new(8, TargetMode::Sequence);
        train(&mut free, &s.train, &s.val, &cfg).unwrap();
        let mut tied = Affine::new(8, TargetMode::Sequence);
        train(&mut tied, &s.train, &s.val, &TrainConfig { l2: 1e3, ..cfg }).unwrap();
        assert!(tied.params().sum_squares() < free.params().sum_squares());
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = linear_data(TargetMode::Center);
        let cfg = TrainConfig { learning_rate: 0.01, max_epochs: 5, seed: 9, ..Default::default() };
        let mut a = Affine::new(8, TargetMode::Center);
        let mut b = Affine::new(8, TargetMode::Center);
        train(&mut a, &s.train, &s.val, &cfg).unwrap();
        train(&mut b, &s.train, &s.val, &cfg).unwrap();
        let bytes = |m: &Affine| m.params().flatten().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let s = linear_data(TargetMode::Sequence);
        let mut m = Affine::new(8, TargetMode::Sequence);
        let batch = s.train.select(0..16);
        let loss = |m: &Affine| evaluate_mse(m, &batch).unwrap();
        let before = loss(&m);
        let mut tape = Tape::new();
        let pred = m.forward_batch(&mut tape, batch.inputs(), 16).unwrap();
        let target = tape.constant(Tensor::new([16, 8], batch.targets().to_vec()).unwrap());
        let l = mse_l2_loss(&mut tape, pred, target, m.params(), 0.0).unwrap();
        let g = tape.backward(l, m.params()).unwrap();
        OptimizerState::new(Optimizer::Sgd, 1e-6, m.params()).step(m.params_mut(), &g);
        assert!(loss(&m) <= before);
    }

    #[test]
    fn nan_loss_aborts_with_context() {
        let s = linear_data(TargetMode::Sequence);
        let mut m = Affine::new(8, TargetMode::Sequence);
        m.params_mut().get_mut(crate::numerics::ParamId(0)).data_mut()[0] = f64::NAN;
        let err = train(&mut m, &s.train, &s.val, &TrainConfig::default()).unwrap_err();
        assert!(matches!(&err, crate::Error::Numeric(msg) if msg.contains("lr") && msg.contains("epoch")), "{err:?}");
    }

    #[test]
    fn sequence_inference_covers_every_sample() {
        let x: Vec<f64> = (0..1001).map(|i| i as f64 * 0.01).collect();
        for mode in [TargetMode::Sequence, TargetMode::Center] {
            let mut m = Affine::new(8, mode);
            m.params_mut().get_mut(crate::numerics::ParamId(0)).data_mut()[0] = 1.0;
            let y = equalize_sequence(&m, &x).unwrap();
            assert_eq!(y.len(), x.len());
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12, "{mode:?}");
            }
        }
    }
}
