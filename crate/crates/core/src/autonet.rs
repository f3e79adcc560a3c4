//! A small differentiable-layer kernel: exactly the layers the emotion CNN
//! needs, each with a hand-written backward pass, plus optimizers and a
//! finite-difference gradient checker.
//!
//! Everything is `f64`. Layers accumulate parameter gradients into
//! [`Param::grad`]; callers zero them between batches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod ddouble;

pub use ddouble::DoubleF64;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value {v}")));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }
}

/// A learnable tensor and its accumulated gradient. Equality looks at values
/// only; the gradient is scratch space.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows, value.cols);
        Self { value, grad }
    }

    /// A parameter whose gradient buffer is allocated on first
    /// [`Param::zero_grad`].
    pub fn frozen(value: Tensor2) -> Self {
        Self {
            value,
            grad: Tensor2::zeros(0, 0),
        }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.value.shape() {
            self.grad = Tensor2::zeros(self.value.rows, self.value.cols);
        } else {
            self.grad.fill(0.0);
        }
    }
}

/// Weight and bias of one layer. Bias is a `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Param,
    pub bias: Param,
}

impl LayerParams {
    pub fn new(weight: Tensor2, bias: Tensor2) -> Self {
        Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        out: usize,
        inp: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..out * inp).map(|_| rng.gen_range(-limit..=limit)).collect();
        Self::new(
            Tensor2 {
                rows: out,
                cols: inp,
                values,
            },
            Tensor2::zeros(1, out),
        )
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

/// Valid (unpadded) temporal convolution over a `time x dim` input.
///
/// Filter `f` is stored as row `f` of a `filters x (kernel_size * dim)` weight
/// matrix, laid out kernel-offset major: `W[f, k * dim + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel_size: usize,
    pub stride: usize,
    pub in_dim: usize,
    pub params: LayerParams,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        filters: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let width = kernel_size * in_dim;
        Self {
            kernel_size,
            stride,
            in_dim,
            params: LayerParams::glorot(filters, width, width, kernel_size * filters, rng),
        }
    }

    pub fn filters(&self) -> usize {
        self.params.weight.value.rows
    }

    pub fn output_len(&self, time: usize) -> usize {
        output_len(time, self.kernel_size, self.stride)
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        conv1d_forward(input, self.kernel_size, self.stride, self.filters(), &self.params)
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `want_input_grad` is set. Zero entries of `grad_out` are skipped, which
    /// makes the pass cheap after max pooling.
    pub fn backward(
        &mut self,
        input: &Tensor2,
        grad_out: &Tensor2,
        want_input_grad: bool,
    ) -> Option<Tensor2> {
        let width = self.kernel_size * self.in_dim;
        let mut grad_in = want_input_grad.then(|| Tensor2::zeros(input.rows, input.cols));
        for t in 0..grad_out.rows {
            let start = t * self.stride * self.in_dim;
            let window = &input.values[start..start + width];
            for f in 0..grad_out.cols {
                let g = grad_out.get(t, f);
                if g == 0.0 {
                    continue;
                }
                self.params.bias.grad.values[f] += g;
                let gw = self.params.weight.grad.row_mut(f);
                for (acc, x) in gw.iter_mut().zip(window) {
                    *acc += g * x;
                }
                if let Some(gi) = grad_in.as_mut() {
                    let w = self.params.weight.value.row(f);
                    let dst = &mut gi.values[start..start + width];
                    for (acc, wv) in dst.iter_mut().zip(w) {
                        *acc += g * wv;
                    }
                }
            }
        }
        grad_in
    }
}

fn output_len(time: usize, kernel_size: usize, stride: usize) -> usize {
    if time < kernel_size || stride == 0 {
        0
    } else {
        (time - kernel_size) / stride + 1
    }
}

/// `out[t, f] = bias[f] + sum_{k,d} input[t*stride + k, d] * W[f, k, d]`.
pub fn conv1d_forward(
    input: &Tensor2,
    kernel_size: usize,
    stride: usize,
    filters: usize,
    params: &LayerParams,
) -> Result<Tensor2> {
    if kernel_size == 0 || stride == 0 {
        return Err(Error::Config("kernel size and stride must be positive".into()));
    }
    if input.rows < kernel_size {
        return Err(Error::Shape(format!(
            "input has {} time steps, kernel needs {kernel_size}",
            input.rows
        )));
    }
    let width = kernel_size * input.cols;
    if params.weight.value.shape() != (filters, width) || params.bias.value.shape() != (1, filters) {
        return Err(Error::Shape(format!(
            "conv params {:?}/{:?} do not fit {filters} filters of width {width}",
            params.weight.value.shape(),
            params.bias.value.shape()
        )));
    }
    let out_rows = output_len(input.rows, kernel_size, stride);
    let mut out = Tensor2::zeros(out_rows, filters);
    for t in 0..out_rows {
        let start = t * stride * input.cols;
        let window = &input.values[start..start + width];
        let dst = out.row_mut(t);
        for (f, slot) in dst.iter_mut().enumerate() {
            *slot = params.bias.value.values[f] + dot(window, params.weight.value.row(f));
        }
    }
    Ok(out)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relu(t: &Tensor2) -> Tensor2 {
    t.map(|v| v.max(0.0))
}

/// Passes `grad` where the pre-activation was strictly positive.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Column maxima of a `time x filters` map.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    /// Row that produced each maximum; ties resolve to the earliest row.
    pub argmax: Vec<usize>,
    /// Whether another row attained the same maximum.
    pub tied: Vec<bool>,
    pub time: usize,
}

pub fn global_max_pool(t: &Tensor2) -> Result<Pooled> {
    if t.rows == 0 {
        return Err(Error::Shape("global max pool over an empty time axis".into()));
    }
    let mut values = t.row(0).to_vec();
    let mut argmax = vec![0; t.cols];
    let mut tied = vec![false; t.cols];
    for r in 1..t.rows {
        for (f, &v) in t.row(r).iter().enumerate() {
            if v > values[f] {
                values[f] = v;
                argmax[f] = r;
                tied[f] = false;
            } else if v == values[f] {
                tied[f] = true;
            }
        }
    }
    Ok(Pooled {
        values,
        argmax,
        tied,
        time: t.rows,
    })
}

/// Routes each filter's gradient to its retained argmax row.
pub fn max_pool_backward(pooled: &Pooled, grad: &[f64]) -> Tensor2 {
    let mut out = Tensor2::zeros(pooled.time, pooled.values.len());
    for (f, (&g, &r)) in grad.iter().zip(&pooled.argmax).enumerate() {
        out.set(r, f, g);
    }
    out
}

/// Fully connected layer, weight `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub params: LayerParams,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        Self {
            params: LayerParams::glorot(out, inp, inp, out, rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.params.weight.value.cols
    }

    pub fn output_width(&self) -> usize {
        self.params.weight.value.rows
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        dense_forward(x, &self.params)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; x.len()];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.params.bias.grad.values[o] += g;
            for (acc, xv) in self.params.weight.grad.row_mut(o).iter_mut().zip(x) {
                *acc += g * xv;
            }
            for (acc, w) in grad_in.iter_mut().zip(self.params.weight.value.row(o)) {
                *acc += g * w;
            }
        }
        grad_in
    }
}

/// `W x + b`.
pub fn dense_forward(x: &[f64], params: &LayerParams) -> Result<Vec<f64>> {
    let w = &params.weight.value;
    if w.cols != x.len() || params.bias.value.shape() != (1, w.rows) {
        return Err(Error::Shape(format!(
            "dense layer {}x{} applied to a {}-vector",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    Ok((0..w.rows)
        .map(|o| params.bias.value.values[o] + dot(w.row(o), x))
        .collect())
}

/// One named tensor of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "autonet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat parameter dump: every tensor with its shape and row-major values, in
/// a fixed order chosen by the owning network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor2) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: [t.rows, t.cols],
            values: t.values.clone(),
        });
    }

    pub fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {:?} version {}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    /// Restores tensor `name` into `dst`, which must already have the stored
    /// shape.
    pub fn restore(&self, name: &str, dst: &mut Tensor2) -> Result<()> {
        let entry = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if entry.shape != [dst.rows, dst.cols] {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                entry.shape,
                [dst.rows, dst.cols]
            )));
        }
        *dst = Tensor2::from_vec(dst.rows, dst.cols, entry.values.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor {name:?}: {e}")))?;
        Ok(())
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and, in train mode, the per-element
/// multiplier (0 or `1 / (1 - rate)`) needed for backprop.
pub fn dropout<R: Rng + ?Sized>(
    t: &Tensor2,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor2, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((t.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..t.values.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let values = t.values.iter().zip(&scale).map(|(v, s)| v * s).collect();
    Ok((
        Tensor2 {
            rows: t.rows,
            cols: t.cols,
            values,
        },
        Some(scale),
    ))
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxCrossEntropy {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<SoftmaxCrossEntropy> {
    if target >= logits.len() {
        return Err(Error::Shape(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = -(logits[target] - max - log_sum);
    let probs = softmax(logits);
    let mut grad_logits = probs.clone();
    grad_logits[target] -= 1.0;
    Ok(SoftmaxCrossEntropy {
        loss,
        probs,
        grad_logits,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub algorithm: Optimizer,
    pub step_count: u64,
    /// First and second moments per parameter, in visiting order. Adam only.
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(algorithm: Optimizer) -> Self {
        Self {
            algorithm,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to `params` from their accumulated gradients. The
    /// parameter list must be visited in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.step_count += 1;
        match self.algorithm {
            Optimizer::Sgd { learning_rate } => {
                for p in params.iter_mut() {
                    for (v, g) in p.value.values.iter_mut().zip(&p.grad.values) {
                        *v -= learning_rate * g;
                    }
                }
            }
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                if self.moments.is_empty() {
                    self.moments = params
                        .iter()
                        .map(|p| (vec![0.0; p.value.values.len()], vec![0.0; p.value.values.len()]))
                        .collect();
                }
                assert_eq!(self.moments.len(), params.len(), "parameter list changed");
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
                    assert_eq!(m.len(), p.value.values.len(), "parameter shape changed");
                    for i in 0..m.len() {
                        let g = p.grad.values[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p.value.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// A network the finite-difference checker can probe.
pub trait Differentiable {
    type Input;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Eval-mode loss.
    fn loss(&self, input: &Self::Input, target: usize) -> Result<f64>;

    /// Whatever [`Differentiable::reference_loss`] caches at the unperturbed
    /// parameters.
    type Reference;

    fn reference(&self, input: &Self::Input) -> Result<Self::Reference>;

    /// Eval-mode loss for the finite-difference side of a gradient check, at
    /// parameters that differ from those `base` was taken at only in scalar
    /// `index` of parameter `param`. Central differences of an `f64` loss
    /// cannot resolve gradients much below `ulp(loss) / eps`, so networks
    /// with small gradients should evaluate this in double-double.
    fn reference_loss(
        &self,
        base: &Self::Reference,
        input: &Self::Input,
        target: usize,
        param: usize,
        index: usize,
    ) -> Result<DoubleF64>;

    /// Eval-mode loss, with gradients accumulated into every parameter.
    fn loss_and_grad(&mut self, input: &Self::Input, target: usize) -> Result<f64>;

    /// Discrete state of the forward pass (activation masks, pooling
    /// argmaxes). The loss is smooth in any neighbourhood where this does not
    /// change. Networks without kinks return an empty vector.
    fn kink_signature(&self, _input: &Self::Input) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    /// Number of pooled columns whose maximum is tied at the current point.
    fn tied_columns(&self, _input: &Self::Input) -> Result<usize> {
        Ok(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Max over checked scalars of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Scalars whose `±eps` probe crossed a kink; not comparable.
    pub skipped: usize,
    pub tied_columns: usize,
}

/// Compares analytic gradients with central differences
/// `(L(p + eps) - L(p - eps)) / 2 eps` for every scalar parameter, with `L`
/// the network's [`Differentiable::reference_loss`].
pub fn gradient_check<N: Differentiable>(
    net: &mut N,
    input: &N::Input,
    target: usize,
    eps: f64,
) -> Result<GradientCheck> {
    for p in net.params_mut() {
        p.zero_grad();
    }
    net.loss_and_grad(input, target)?;
    let analytic: Vec<Vec<f64>> = net
        .params_mut()
        .into_iter()
        .map(|p| p.grad.values.clone())
        .collect();
    let base_signature = net.kink_signature(input)?;
    let tied_columns = net.tied_columns(input)?;
    let reference = net.reference(input)?;

    let mut report = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
        tied_columns,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let original = net.params_mut()[pi].value.values[ei];

            net.params_mut()[pi].value.values[ei] = original + eps;
            let plus = net.reference_loss(&reference, input, target, pi, ei)?;
            let sig_plus = net.kink_signature(input)?;

            net.params_mut()[pi].value.values[ei] = original - eps;
            let minus = net.reference_loss(&reference, input, target, pi, ei)?;
            let sig_minus = net.kink_signature(input)?;

            net.params_mut()[pi].value.values[ei] = original;

            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus).to_f64() / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> LayerParams {
        LayerParams::new(
            Tensor2::from_rows(&weight).unwrap(),
            Tensor2::from_rows(&[bias]).unwrap(),
        )
    }

    #[test]
    fn tensor_rejects_bad_shapes_and_nan() {
        assert!(Tensor2::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor2::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Tensor2::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn conv_all_ones_kernel() {
        let input = Tensor2::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let p = params(vec![vec![1.0, 1.0, 1.0]], vec![0.0]);
        let out = conv1d_forward(&input, 3, 1, 1, &p).unwrap();
        assert_eq!(out.to_rows(), vec![vec![6.0], vec![9.0], vec![12.0]]);
    }

    #[test]
    fn conv_zero_input_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::new(4, 6, 3, 1, &mut rng);
        let out = conv.forward(&Tensor2::zeros(7, 4)).unwrap();
        assert_eq!(out.shape(), (5, 6));
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_stride_and_short_input() {
        let input = Tensor2::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]]).unwrap();
        let p = params(vec![vec![1.0, 0.0]], vec![0.5]);
        let out = conv1d_forward(&input, 2, 2, 1, &p).unwrap();
        assert_eq!(out.to_rows(), vec![vec![1.5], vec![3.5], vec![5.5]]);
        let short = Tensor2::zeros(2, 1);
        assert!(matches!(
            conv1d_forward(&short, 3, 1, 1, &params(vec![vec![1.0; 3]], vec![0.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn relu_cases() {
        let t = Tensor2::from_rows(&[[-1.0, 2.0]]).unwrap();
        assert_eq!(relu(&t).to_rows(), vec![vec![0.0, 2.0]]);
        let pos = Tensor2::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(relu(&pos), pos);
        let neg = Tensor2::from_rows(&[[-1.0, -2.0]]).unwrap();
        assert!(relu(&neg).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_pool_columnwise() {
        let t = Tensor2::from_rows(&[[1.0, 5.0], [3.0, 0.0], [2.0, 4.0]]).unwrap();
        let p = global_max_pool(&t).unwrap();
        assert_eq!(p.values, vec![3.0, 5.0]);
        assert_eq!(p.argmax, vec![1, 0]);

        let single = Tensor2::from_rows(&[[7.0, -1.0]]).unwrap();
        assert_eq!(global_max_pool(&single).unwrap().values, vec![7.0, -1.0]);

        assert!(global_max_pool(&Tensor2::zeros(0, 3)).is_err());
    }

    #[test]
    fn max_pool_tie_routes_to_earliest_row() {
        let t = Tensor2::from_rows(&[[1.0], [4.0], [4.0]]).unwrap();
        let p = global_max_pool(&t).unwrap();
        assert_eq!(p.argmax, vec![1]);
        assert!(p.tied[0]);
        let g = max_pool_backward(&p, &[2.5]);
        assert_eq!(g.to_rows(), vec![vec![0.0], vec![2.5], vec![0.0]]);
    }

    #[test]
    fn dense_cases() {
        let id = params(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        assert_eq!(dense_forward(&[3.0, -2.0], &id).unwrap(), vec![3.0, -2.0]);
        let zero = params(vec![vec![0.0, 0.0]], vec![0.7]);
        assert_eq!(dense_forward(&[3.0, -2.0], &zero).unwrap(), vec![0.7]);
        assert!(dense_forward(&[1.0], &id).is_err());
    }

    #[test]
    fn dropout_identities_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor2::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(dropout(&t, 0.0, Mode::Train, &mut rng).unwrap().0, t);
        assert_eq!(dropout(&t, 0.9, Mode::Eval, &mut rng).unwrap().0, t);
        assert!(dropout(&t, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&t, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tensor2::from_rows(&[[1.0, -2.0, 0.5, 3.0]]).unwrap();
        let trials = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..trials {
            let (out, _) = dropout(&t, 0.2, Mode::Train, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(out.values()) {
                *s += v;
            }
        }
        for (s, &x) in sums.iter().zip(t.values()) {
            let mean = s / trials as f64;
            assert!((mean - x).abs() <= 0.02 * x.abs(), "mean {mean} vs {x}");
        }
    }

    #[test]
    fn softmax_cross_entropy_cases() {
        let sym = softmax_cross_entropy(&[0.0; 4], 0).unwrap();
        assert_eq!(sym.probs, vec![0.25; 4]);
        assert!((sym.loss - 4f64.ln()).abs() < 1e-12);
        assert!((sym.loss - 1.3863).abs() < 1e-4);

        let dom = softmax_cross_entropy(&[10.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(dom.loss < 1e-3);

        assert!(softmax_cross_entropy(&[0.0; 4], 4).is_err());

        // huge logits stay finite
        let big = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], 1).unwrap();
        assert!(big.loss.is_finite() && big.probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let target = rng.gen_range(0..4);
            let analytic = softmax_cross_entropy(&logits, target).unwrap().grad_logits;
            let h = 1e-6;
            for i in 0..4 {
                let mut up = logits.clone();
                up[i] += h;
                let mut down = logits.clone();
                down[i] -= h;
                let numeric = (softmax_cross_entropy(&up, target).unwrap().loss
                    - softmax_cross_entropy(&down, target).unwrap().loss)
                    / (2.0 * h);
                assert!((numeric - analytic[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5, 0.5]), 2);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn sgd_step() {
        let mut p = Param::new(Tensor2::from_rows(&[[1.0]]).unwrap());
        p.grad.set(0, 0, 0.5);
        let mut state = OptimizerState::new(Optimizer::Sgd { learning_rate: 0.1 });
        state.step(&mut [&mut p]);
        assert!((p.value.get(0, 0) - 0.95).abs() < 1e-15);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for algo in [Optimizer::Sgd { learning_rate: 0.1 }, Optimizer::default()] {
            let mut p = Param::new(Tensor2::from_rows(&[[1.0, -2.0]]).unwrap());
            let before = p.value.clone();
            let mut state = OptimizerState::new(algo);
            state.step(&mut [&mut p]);
            assert_eq!(p.value, before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Param::new(Tensor2::from_rows(&[[0.3, -1.0, 2.0]]).unwrap());
        p.grad.fill(1.0);
        let before = p.value.clone();
        let mut state = OptimizerState::new(Optimizer::default());
        state.step(&mut [&mut p]);
        // bias-corrected m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (a, b) in before.values().iter().zip(p.value.values()) {
            assert!(((a - b) - 1e-3).abs() < 1e-6);
        }
    }

    /// Two dense layers with no nonlinearity between them.
    struct Linear {
        a: Dense,
        b: Dense,
    }

    impl Differentiable for Linear {
        type Input = Vec<f64>;
        type Reference = ();

        fn reference(&self, _: &Vec<f64>) -> Result<()> {
            Ok(())
        }

        fn reference_loss(&self, _: &(), x: &Vec<f64>, target: usize, _: usize, _: usize) -> Result<DoubleF64> {
            self.loss(x, target).map(DoubleF64::from)
        }

        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![
                &mut self.a.params.weight,
                &mut self.a.params.bias,
                &mut self.b.params.weight,
                &mut self.b.params.bias,
            ]
        }

        fn loss(&self, x: &Vec<f64>, target: usize) -> Result<f64> {
            let h = self.a.forward(x)?;
            let z = self.b.forward(&h)?;
            Ok(softmax_cross_entropy(&z, target)?.loss)
        }

        fn loss_and_grad(&mut self, x: &Vec<f64>, target: usize) -> Result<f64> {
            let h = self.a.forward(x)?;
            let z = self.b.forward(&h)?;
            let ce = softmax_cross_entropy(&z, target)?;
            let gh = self.b.backward(&h, &ce.grad_logits);
            self.a.backward(x, &gh);
            Ok(ce.loss)
        }
    }

    #[test]
    fn linear_network_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut net = Linear {
            a: Dense::new(5, 6, &mut rng),
            b: Dense::new(6, 3, &mut rng),
        };
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradient_check(&mut net, &x, 2, 1e-5).unwrap();
        assert_eq!(report.skipped, 0);
        assert_eq!(report.checked, 5 * 6 + 6 + 6 * 3 + 3);
        assert!(report.max_relative_error < 1e-7, "{report:?}");
    }
}
