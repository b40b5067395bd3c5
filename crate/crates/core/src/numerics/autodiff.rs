//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its variables. Trainable
//! tensors live in a [`ParamSet`]; [`Tape::param`] lifts one onto the tape
//! (once per tape) and [`Tape::backward`] returns a [`Gradients`] entry for
//! every parameter of the set, zero-filled when the loss does not touch it.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{invalid_config, invalid_input, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a tensor in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// All parameter values concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat buffer produced by [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.scalar_count() {
            return Err(invalid_input!(
                "expected {} parameter values, got {}",
                self.scalar_count(),
                values.len()
            ));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// One gradient tensor per parameter of a [`ParamSet`], shapes matching.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self { grads: params.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Mask(Var, Vec<f64>),
    Conv1d { x: Var, w: Var, bias: Option<Var>, geometry: ConvGeometry },
    Linear { x: Var, w: Var, bias: Option<Var>, rows: usize, d_in: usize, d_out: usize },
    Gelu(Var),
    Softmax(Var),
    Pad { x: Var, channels: usize, from: usize, to: usize },
    Truncate { x: Var, channels: usize, from: usize, to: usize },
    Reshape(Var),
    SwapLeading { x: Var, a: usize, b: usize, inner: usize },
    Stack(Vec<Var>),
    Sum(Var),
    SumSquares(Var),
    Mse(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation supporting a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Lifts a trainable tensor onto the tape, reusing the leaf on repeat calls.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id));
        self.params.push((id, v));
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid_input!(
                "{what}: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise product with a fixed mask of the same length.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(invalid_input!("mask length {} vs tensor {}", mask.len(), self.value(a).len()));
        }
        let src = self.value(a);
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mask(a, mask)))
    }

    /// Same-padded convolution of `x: [c_in, len]` or `[c_in, rows, len]` with
    /// `w: [c_out, c_in, k]`, rows treated as an independent batch. Batched
    /// rows may be shorter than the kernel; out-of-range taps see zeros.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (c_in, rows, len, three_d) = match *self.shape(x) {
            [c, l] => (c, 1, l, false),
            [c, r, l] => (c, r, l, true),
            ref s => return Err(invalid_input!("conv1d input must be 2-D or 3-D, got {s:?}")),
        };
        let &[c_out, kc_in, kernel] = self.shape(w) else {
            return Err(invalid_input!("conv1d kernel must be [c_out, c_in, k], got {:?}", self.shape(w)));
        };
        let geometry = ConvGeometry { c_in, c_out, rows, len, kernel_rows: 1, kernel };
        if three_d {
            geometry.validate_kernel()?;
        } else {
            geometry.validate()?;
        }
        let shape = if three_d { vec![c_out, rows, len] } else { vec![c_out, len] };
        self.conv(x, w, bias, kc_in, geometry, shape)
    }

    /// Same-padded 2D convolution of `x: [c_in, rows, len]` with
    /// `w: [c_out, c_in, k_rows, k]`; out-of-range taps see zeros.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let &[c_in, rows, len] = self.shape(x) else {
            return Err(invalid_input!("conv2d input must be [c_in, rows, len], got {:?}", self.shape(x)));
        };
        let &[c_out, kc_in, kernel_rows, kernel] = self.shape(w) else {
            return Err(invalid_input!("conv2d kernel must be [c_out, c_in, k_rows, k], got {:?}", self.shape(w)));
        };
        let geometry = ConvGeometry { c_in, c_out, rows, len, kernel_rows, kernel };
        geometry.validate_kernel()?;
        self.conv(x, w, bias, kc_in, geometry, vec![c_out, rows, len])
    }

    fn conv(&mut self, x: Var, w: Var, bias: Option<Var>, kc_in: usize, geometry: ConvGeometry, shape: Vec<usize>) -> Result<Var> {
        let (c_in, c_out) = (geometry.c_in, geometry.c_out);
        if kc_in != c_in {
            return Err(invalid_config!("kernel expects {kc_in} input channels, input has {c_in}"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(invalid_config!("convolution bias shape {:?}, expected [{c_out}]", self.shape(b)));
            }
        }
        let out = layers::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geometry,
        );
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Conv1d { x, w, bias, geometry }))
    }

    /// Affine map `x: [rows, d_in] -> [rows, d_out]` with `w: [d_out, d_in]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let &[rows, d_in] = self.shape(x) else {
            return Err(invalid_input!("linear input must be [rows, d_in], got {:?}", self.shape(x)));
        };
        let &[d_out, w_in] = self.shape(w) else {
            return Err(invalid_input!("linear weight must be [d_out, d_in], got {:?}", self.shape(w)));
        };
        if w_in != d_in {
            return Err(invalid_config!("linear weight expects {w_in} inputs, got {d_in}"));
        }
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = bias {
            if self.shape(b) != [d_out] {
                return Err(invalid_config!("linear bias shape {:?}, expected [{d_out}]", self.shape(b)));
            }
            let bv = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        layers::gemm(
            rows,
            d_in,
            d_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            bias.is_some(),
        );
        let value = Tensor::new([rows, d_out], out)?;
        Ok(self.push(value, Op::Linear { x, w, bias, rows, d_in, d_out }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = layers::gelu(self.value(x));
        self.push(value, Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = layers::softmax(self.value(x))?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Zero-pads each channel of `x: [channels, from]` to length `to`.
    pub fn pad(&mut self, x: Var, to: usize) -> Result<Var> {
        let &[channels, from] = self.shape(x) else {
            return Err(invalid_input!("pad expects [channels, len], got {:?}", self.shape(x)));
        };
        if to < from {
            return Err(invalid_input!("pad target {to} shorter than {from}"));
        }
        let mut out = vec![0.0; channels * to];
        for (c, chunk) in self.value(x).data().chunks(from).enumerate() {
            out[c * to..c * to + from].copy_from_slice(chunk);
        }
        let value = Tensor::new([channels, to], out)?;
        Ok(self.push(value, Op::Pad { x, channels, from, to }))
    }

    /// Keeps the first `to` entries of each channel of `x: [channels, from]`.
    pub fn truncate(&mut self, x: Var, to: usize) -> Result<Var> {
        let &[channels, from] = self.shape(x) else {
            return Err(invalid_input!("truncate expects [channels, len], got {:?}", self.shape(x)));
        };
        if to > from {
            return Err(invalid_input!("truncate target {to} longer than {from}"));
        }
        let mut out = Vec::with_capacity(channels * to);
        for chunk in self.value(x).data().chunks(from) {
            out.extend_from_slice(&chunk[..to]);
        }
        let value = Tensor::new([channels, to], out)?;
        Ok(self.push(value, Op::Truncate { x, channels, from, to }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Exchanges the first two axes: `[a, b, ...] -> [b, a, ...]`.
    pub fn swap_leading(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(invalid_input!("swap_leading needs at least two axes, got {shape:?}"));
        }
        let (a, b) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        swap_blocks(src, &mut out, a, b, inner);
        let mut new_shape = shape;
        new_shape.swap(0, 1);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::SwapLeading { x, a, b, inner }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(invalid_input!("stack of zero tensors"));
        };
        let inner = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(items.len() * self.value(first).len());
        for &v in items {
            if self.shape(v) != inner.as_slice() {
                return Err(invalid_input!("stack: shape {:?} vs {:?}", self.shape(v), inner));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Stack(items.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum_squares());
        self.push(value, Op::SumSquares(x))
    }

    /// Mean squared difference of two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let n = self.value(pred).len().max(1) as f64;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(pred, target)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(invalid_input!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let dst = out.grads[id.0].data_mut();
                    if dst.len() != g.len() {
                        return Err(invalid_input!("parameter {} changed shape during the sweep", id.0));
                    }
                    dst.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, |_, v| v);
                    accumulate(&mut grads, *b, &g, |_, v| v);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g, |_, v| v);
                    accumulate(&mut grads, *b, &g, |_, v| -v);
                }
                Op::Mul(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    accumulate(&mut grads, *a, &g, |j, v| v * vb[j]);
                    accumulate(&mut grads, *b, &g, |j, v| v * va[j]);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, &g, |_, v| v * f),
                Op::Mask(a, m) => accumulate(&mut grads, *a, &g, |j, v| v * m[j]),
                Op::Gelu(a) => {
                    let va = self.value(*a).data();
                    accumulate(&mut grads, *a, &g, |j, v| v * layers::gelu_grad_scalar(va[j]));
                }
                Op::Softmax(a) => {
                    let s = node.value.data();
                    let dot: f64 = s.iter().zip(&g).map(|(x, y)| x * y).sum();
                    accumulate(&mut grads, *a, &g, |j, v| s[j] * (v - dot));
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, &g, |_, v| v),
                Op::SwapLeading { x, a, b, inner } => {
                    let mut gx = vec![0.0; g.len()];
                    swap_blocks(&g, &mut gx, *b, *a, *inner);
                    add_into(&mut grads, *x, &gx);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    add_into(&mut grads, *a, &vec![g[0]; n]);
                }
                Op::SumSquares(a) => {
                    let va = self.value(*a).data();
                    accumulate_full(&mut grads, *a, va.len(), |j| 2.0 * va[j] * g[0]);
                }
                Op::Mse(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let c = 2.0 * g[0] / va.len().max(1) as f64;
                    accumulate_full(&mut grads, *a, va.len(), |j| c * (va[j] - vb[j]));
                    accumulate_full(&mut grads, *b, va.len(), |j| -c * (va[j] - vb[j]));
                }
                Op::Pad { x, channels, from, to } => {
                    let mut gx = Vec::with_capacity(channels * from);
                    for c in 0..*channels {
                        gx.extend_from_slice(&g[c * to..c * to + from]);
                    }
                    add_into(&mut grads, *x, &gx);
                }
                Op::Truncate { x, channels, from, to } => {
                    let mut gx = vec![0.0; channels * from];
                    for c in 0..*channels {
                        gx[c * from..c * from + to].copy_from_slice(&g[c * to..(c + 1) * to]);
                    }
                    add_into(&mut grads, *x, &gx);
                }
                Op::Stack(items) => {
                    let n = g.len() / items.len();
                    for (k, v) in items.iter().enumerate() {
                        add_into(&mut grads, *v, &g[k * n..(k + 1) * n]);
                    }
                }
                Op::Conv1d { x, w, bias, geometry } => {
                    let mut gx = vec![0.0; geometry.input_len()];
                    let mut gw = vec![0.0; geometry.weight_len()];
                    let mut gb = bias.map(|_| vec![0.0; geometry.c_out]);
                    layers::conv1d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &g,
                        geometry,
                        Some(&mut gx),
                        Some(&mut gw),
                        gb.as_deref_mut(),
                    );
                    add_into(&mut grads, *x, &gx);
                    add_into(&mut grads, *w, &gw);
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        add_into(&mut grads, *b, &gb);
                    }
                }
                Op::Linear { x, w, bias, rows, d_in, d_out } => {
                    let (rows, d_in, d_out) = (*rows, *d_in, *d_out);
                    let mut gx = vec![0.0; rows * d_in];
                    layers::gemm(rows, d_out, d_in, &g, false, self.value(*w).data(), false, &mut gx, false);
                    let mut gw = vec![0.0; d_out * d_in];
                    layers::gemm(d_out, rows, d_in, &g, true, self.value(*x).data(), false, &mut gw, false);
                    add_into(&mut grads, *x, &gx);
                    add_into(&mut grads, *w, &gw);
                    if let Some(b) = bias {
                        let mut gb = vec![0.0; d_out];
                        for row in g.chunks(d_out) {
                            gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                        }
                        add_into(&mut grads, *b, &gb);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `src: [a, b, inner] -> dst: [b, a, inner]`.
fn swap_blocks(src: &[f64], dst: &mut [f64], a: usize, b: usize, inner: usize) {
    for i in 0..a {
        for j in 0..b {
            let from = (i * b + j) * inner;
            let to = (j * a + i) * inner;
            dst[to..to + inner].copy_from_slice(&src[from..from + inner]);
        }
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(d, s)| *d += s),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    accumulate_full(grads, v, g.len(), |j| f(j, g[j]));
}

fn accumulate_full(grads: &mut [Option<Vec<f64>>], v: Var, n: usize, f: impl Fn(usize) -> f64) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().enumerate().for_each(|(j, d)| *d += f(j)),
        slot @ None => *slot = Some((0..n).map(f).collect()),
    }
}

/// Describes a parameter for diagnostics: `name[shape]`.
pub fn describe(params: &ParamSet, id: ParamId) -> String {
    let mut s = params.name(id).to_string();
    s.push_str(&alloc::format!("{:?}", params.get(id).shape()));
    s
}
