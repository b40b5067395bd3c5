//! Sliding-window supervised examples built from an aligned
//! (received, transmitted) pair, with a leakage-free contiguous split.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{invalid_config, invalid_input, Result};

/// What each window is paired with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TargetMode {
    /// The co-located target window (`ws` values).
    Sequence,
    /// The single target at offset `ws / 2`.
    Center,
}

impl TargetMode {
    pub fn code(self) -> u64 {
        match self {
            TargetMode::Sequence => 0,
            TargetMode::Center => 1,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(TargetMode::Sequence),
            1 => Ok(TargetMode::Center),
            _ => Err(invalid_input!("unknown target mode code {code}")),
        }
    }
}

/// Affine maps applied to inputs and targets, fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalization {
    pub input_mean: f64,
    pub input_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { input_mean: 0.0, input_std: 1.0, target_mean: 0.0, target_std: 1.0 }
    }

    pub fn input(&self, x: f64) -> f64 {
        (x - self.input_mean) / self.input_std
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    /// Maps a normalized model output back to the level scale.
    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    pub fn denormalize_input(&self, z: f64) -> f64 {
        z * self.input_std + self.input_mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    ws: usize,
    stride: usize,
    mode: TargetMode,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// Start index of each window in the source sequence.
    starts: Vec<usize>,
    norm: Normalization,
}

pub fn build_windows(x: &[f64], y: &[f64], ws: usize, stride: usize, mode: TargetMode) -> Result<WindowedDataset> {
    if x.len() != y.len() {
        return Err(invalid_input!("input length {} differs from target length {}", x.len(), y.len()));
    }
    if ws == 0 || stride == 0 {
        return Err(invalid_input!("window size and stride must be positive"));
    }
    if ws > x.len() {
        return Err(invalid_input!("window size {ws} exceeds sequence length {}", x.len()));
    }
    let n = (x.len() - ws) / stride + 1;
    let starts: Vec<usize> = (0..n).map(|i| i * stride).collect();
    let mut inputs = Vec::with_capacity(n * ws);
    let mut targets = Vec::with_capacity(n * if mode == TargetMode::Sequence { ws } else { 1 });
    for &s in &starts {
        inputs.extend_from_slice(&x[s..s + ws]);
        match mode {
            TargetMode::Sequence => targets.extend_from_slice(&y[s..s + ws]),
            TargetMode::Center => targets.push(y[s + ws / 2]),
        }
    }
    Ok(WindowedDataset { ws, stride, mode, inputs, targets, starts, norm: Normalization::identity() })
}

impl WindowedDataset {
    /// Assembles a dataset from raw parts, e.g. after reading a dump.
    pub fn from_parts(
        ws: usize,
        mode: TargetMode,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        norm: Normalization,
    ) -> Result<Self> {
        if ws == 0 || inputs.len() % ws != 0 {
            return Err(invalid_input!("{} input values do not form windows of {ws}", inputs.len()));
        }
        let n = inputs.len() / ws;
        let width = if mode == TargetMode::Sequence { ws } else { 1 };
        if targets.len() != n * width {
            return Err(invalid_input!("{} targets for {n} windows in {mode:?} mode", targets.len()));
        }
        Ok(Self { ws, stride: ws, mode, inputs, targets, starts: (0..n).map(|i| i * ws).collect(), norm })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn ws(&self) -> usize {
        self.ws
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    pub fn target_width(&self) -> usize {
        match self.mode {
            TargetMode::Sequence => self.ws,
            TargetMode::Center => 1,
        }
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.ws..(i + 1) * self.ws]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let w = self.target_width();
        &self.targets[i * w..(i + 1) * w]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    /// Source sample indices covered by window `i`.
    pub fn span(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i] + self.ws
    }

    /// Source range covered by all windows, empty for an empty dataset.
    pub fn source_range(&self) -> Range<usize> {
        match (self.starts.first(), self.starts.last()) {
            (Some(&a), Some(&b)) => a..b + self.ws,
            _ => 0..0,
        }
    }

    /// Windows `range` as a new dataset.
    pub fn select(&self, range: Range<usize>) -> Self {
        let w = self.target_width();
        Self {
            ws: self.ws,
            stride: self.stride,
            mode: self.mode,
            inputs: self.inputs[range.start * self.ws..range.end * self.ws].to_vec(),
            targets: self.targets[range.start * w..range.end * w].to_vec(),
            starts: self.starts[range].to_vec(),
            norm: self.norm,
        }
    }

    /// Appends the windows of `other`; the source offsets of `other` are
    /// shifted by `offset` so that distinct recordings stay distinguishable.
    pub fn append(&mut self, other: &WindowedDataset, offset: usize) -> Result<()> {
        if other.ws != self.ws || other.mode != self.mode || other.norm != self.norm {
            return Err(invalid_input!("cannot append datasets with different geometry or normalization"));
        }
        self.inputs.extend_from_slice(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
        self.starts.extend(other.starts.iter().map(|s| s + offset));
        Ok(())
    }

    fn apply(&self, norm: Normalization) -> Self {
        let mut out = self.clone();
        out.inputs.iter_mut().for_each(|v| *v = norm.input(*v));
        out.targets.iter_mut().for_each(|v| *v = norm.target(*v));
        out.norm = norm;
        out
    }

    /// Mapped back to physical units.
    pub fn denormalized(&self) -> Self {
        let n = self.norm;
        let mut out = self.clone();
        out.inputs.iter_mut().for_each(|v| *v = n.denormalize_input(*v));
        out.targets.iter_mut().for_each(|v| *v = n.denormalize_target(*v));
        out.norm = Normalization::identity();
        out
    }
}

/// Guard windows needed so that no source sample is shared across splits.
pub fn guard_windows(ws: usize, stride: usize) -> usize {
    ws.div_ceil(stride.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

/// Window index ranges of a contiguous 75/10/15 split with `guard` windows
/// dropped between neighbouring blocks.
pub fn split_ranges(n: usize, guard: usize) -> Result<[Range<usize>; 3]> {
    let usable = n.checked_sub(2 * guard).unwrap_or(0);
    let train = (usable as f64 * 0.75).round() as usize;
    let val = (usable as f64 * 0.10).round() as usize;
    let test = usable.saturating_sub(train + val);
    if train == 0 || val == 0 || test == 0 || n < 20 {
        return Err(invalid_config!("{n} windows are too few for a 75/10/15 split with guard gaps of {guard}"));
    }
    let a = 0..train;
    let b = train + guard..train + guard + val;
    let c = b.end + guard..n;
    Ok([a, b, c])
}

/// Contiguous train | val | test split with guard gaps wide enough that no
/// source sample lands in two splits.
pub fn split_75_10_15(d: &WindowedDataset) -> Result<Splits> {
    let guard = guard_windows(d.ws, d.stride);
    let [a, b, c] = split_ranges(d.len(), guard)?;
    Ok(Splits { train: d.select(a), val: d.select(b), test: d.select(c) })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let rough = values.iter().sum::<f64>() / n;
    // second pass removes the rounding error of the first
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Zero-mean, unit-variance scaling fitted on the training split and applied
/// to all three splits. Inputs and targets each get their own affine map
/// because they live in different units (photocurrent vs. PAM4 levels).
pub fn normalize(s: &Splits) -> Result<Splits> {
    if s.train.is_empty() {
        return Err(invalid_input!("training split is empty"));
    }
    let (im, is) = mean_std(&s.train.inputs);
    let (tm, ts) = mean_std(&s.train.targets);
    if !(is > 0.0) || !(ts > 0.0) {
        return Err(invalid_input!("training split has zero variance"));
    }
    let norm = Normalization { input_mean: im, input_std: is, target_mean: tm, target_std: ts };
    Ok(Splits { train: s.train.apply(norm), val: s.val.apply(norm), test: s.test.apply(norm) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn window_count_and_starts() {
        let x = ramp(10);
        let d = build_windows(&x, &x, 4, 2, TargetMode::Sequence).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.starts(), &[0, 2, 4, 6]);
        assert_eq!(d.input(3), &[6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn tiling_reconstructs_targets() {
        let x = ramp(128);
        let y: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let d = build_windows(&x, &y, 64, 64, TargetMode::Sequence).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.targets(), y.as_slice());
    }

    #[test]
    fn center_target_offset() {
        let x = ramp(100);
        let d = build_windows(&x, &x, 64, 1, TargetMode::Center).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.target(i)[0], d.input(i)[0] + 32.0);
        }
    }

    #[test]
    fn oversized_window_rejected() {
        let x = ramp(10);
        assert!(matches!(build_windows(&x, &x, 11, 1, TargetMode::Center), Err(crate::Error::InvalidInput(_))));
    }

    fn sample_sets(d: &WindowedDataset) -> BTreeSet<usize> {
        (0..d.len()).flat_map(|i| d.span(i)).collect()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let x = ramp(1000);
        let d = build_windows(&x, &x, 1, 1, TargetMode::Center).unwrap();
        let s = split_75_10_15(&d).unwrap();
        assert!((748..=752).contains(&s.train.len()), "{}", s.train.len());
        assert!((98..=102).contains(&s.val.len()));
        assert!((148..=152).contains(&s.test.len()));
        let (a, b, c) = (sample_sets(&s.train), sample_sets(&s.val), sample_sets(&s.test));
        assert!(a.is_disjoint(&b) && b.is_disjoint(&c) && a.is_disjoint(&c));
    }

    #[test]
    fn minimal_split_is_disjoint() {
        let x = ramp(20);
        let d = build_windows(&x, &x, 1, 1, TargetMode::Center).unwrap();
        let s = split_75_10_15(&d).unwrap();
        let (a, b, c) = (sample_sets(&s.train), sample_sets(&s.val), sample_sets(&s.test));
        assert!(a.is_disjoint(&b) && b.is_disjoint(&c) && a.is_disjoint(&c));
        assert_eq!(split_75_10_15(&d).unwrap(), s);
    }

    #[test]
    fn too_few_windows_for_guards() {
        let x = ramp(40);
        let d = build_windows(&x, &x, 16, 1, TargetMode::Center).unwrap();
        assert!(matches!(split_75_10_15(&d), Err(crate::Error::InvalidConfig(_))));
    }

    #[test]
    fn normalization_statistics() {
        let x: Vec<f64> = (0..500).map(|i| 3.0 + libm::sin(i as f64 * 0.7) * 0.01).collect();
        let y: Vec<f64> = (0..500).map(|i| [-3.0, -1.0, 1.0, 3.0][i % 4]).collect();
        let d = build_windows(&x, &y, 8, 1, TargetMode::Center).unwrap();
        let s = normalize(&split_75_10_15(&d).unwrap()).unwrap();
        let (m, sd) = mean_std(s.train.inputs());
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12, "{m} {sd}");
        let back = s.test.denormalized();
        let raw = split_75_10_15(&d).unwrap().test;
        for (a, b) in back.inputs().iter().zip(raw.inputs()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in back.targets().iter().zip(raw.targets()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_cannot_be_normalized() {
        let x = vec![1.0; 200];
        let d = build_windows(&x, &ramp(200), 4, 1, TargetMode::Center).unwrap();
        assert!(normalize(&split_75_10_15(&d).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn splits_never_share_samples(len in 200usize..800, ws in 1usize..32, stride in 1usize..8) {
            let x = ramp(len);
            let d = build_windows(&x, &x, ws, stride, TargetMode::Sequence).unwrap();
            if let Ok(s) = split_75_10_15(&d) {
                let (a, b, c) = (sample_sets(&s.train), sample_sets(&s.val), sample_sets(&s.test));
                prop_assert!(a.is_disjoint(&b) && b.is_disjoint(&c) && a.is_disjoint(&c));
                let n = d.len() - 2 * guard_windows(ws, stride);
                prop_assert!((s.train.len() as f64 - 0.75 * n as f64).abs() <= 1.0);
                prop_assert!((s.val.len() as f64 - 0.10 * n as f64).abs() <= 1.0);
                prop_assert!((s.test.len() as f64 - 0.15 * n as f64).abs() <= 1.0);
            }
        }
    }
}
