//! Feed-forward and LSTM regressors for β (degrees) written directly on
//! `ndarray`: forward passes, reverse-mode gradients, ADAM/NADAM and
//! early-stopped mini-batch training.

mod ffnn;
mod lstm;
mod optim;
mod train;

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{adam_update, nadam_update, OptimizerKind, OptimizerState};
pub use train::{train_with_early_stopping, EpochRecord, Sample, SequenceSet, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::frame::{MeasurementFrame, FORCE_COLUMNS};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => panic!("tensor of shape {:?} is not a matrix", self.shape),
        }
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.dims2(), &self.data).expect("shape matches data")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let dims = self.dims2();
        ArrayViewMut2::from_shape(dims, &mut self.data).expect("shape matches data")
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    pub fn view1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[..])
    }
}

/// Ordered parameter tensors. FFNN: `[W₁, b₁, …, W_out, b_out]`;
/// RNN: `[W₁, U₁, b₁, W₂, U₂, b₂, W_out, b_out]` with gate blocks ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters(pub Vec<Tensor>);

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Parameters(self.0.iter().map(|t| Tensor::zeros(&t.shape)).collect())
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(Tensor::len).sum()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f64> {
        self.0.iter().flat_map(|t| t.data.iter())
    }

    /// Mutable access to the `k`-th scalar in flattened order.
    pub fn value_mut(&mut self, mut k: usize) -> &mut f64 {
        for t in &mut self.0 {
            if k < t.len() {
                return &mut t.data[k];
            }
            k -= t.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Ffnn,
    Rnn,
}

impl NetworkKind {
    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Ffnn => "ffnn",
            NetworkKind::Rnn => "rnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSet {
    I1,
    I2,
}

const IMU_FEATURES: [&str; 5] = ["vx", "ax", "ay", "yaw_rate", "delta"];

impl InputSet {
    pub fn width(self) -> usize {
        match self {
            InputSet::I1 => 5,
            InputSet::I2 => 17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputSet::I1 => "i1",
            InputSet::I2 => "i2",
        }
    }

    pub fn feature_names(self) -> Vec<&'static str> {
        let mut names = IMU_FEATURES.to_vec();
        if self == InputSet::I2 {
            names.extend(FORCE_COLUMNS);
        }
        names
    }

    /// Unscaled feature row for one frame.
    pub fn features(self, frame: &MeasurementFrame) -> Result<Vec<f64>> {
        let mut row = vec![frame.vx, frame.ax, frame.ay, frame.yaw_rate, frame.delta];
        if self == InputSet::I2 {
            let wheels = frame
                .wheels
                .as_ref()
                .ok_or_else(|| Error::MissingChannel(FORCE_COLUMNS[0].to_string()))?;
            row.extend(wheels.channels());
        }
        Ok(row)
    }

    pub fn feature_matrix(self, frames: &[MeasurementFrame]) -> Result<Array2<f64>> {
        let width = self.width();
        let mut data = Vec::with_capacity(frames.len() * width);
        for f in frames {
            data.extend(self.features(f)?);
        }
        Ok(Array2::from_shape_vec((frames.len(), width), data).expect("row width is fixed"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`
    /// (and input `x` for ReLU).
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub input_width: usize,
    pub hidden: Vec<usize>,
    /// One per hidden layer. For the RNN this is applied to each layer's
    /// hidden-state sequence; the gates keep their usual nonlinearities.
    pub activations: Vec<Activation>,
    pub dropout: f64,
    /// Window length in samples (1 for the FFNN).
    pub window: usize,
}

impl NetworkSpec {
    /// The published architecture for a kind and input set.
    pub fn preset(kind: NetworkKind, input: InputSet) -> Self {
        let (hidden, activations, window) = match (kind, input) {
            (NetworkKind::Ffnn, InputSet::I1) => (vec![250, 100], vec![Activation::Relu; 2], 1),
            (NetworkKind::Ffnn, InputSet::I2) => (vec![150, 50], vec![Activation::Relu; 2], 1),
            (NetworkKind::Rnn, InputSet::I1) => (vec![100, 80], vec![Activation::Tanh, Activation::Sigmoid], 20),
            (NetworkKind::Rnn, InputSet::I2) => (vec![100, 50], vec![Activation::Tanh, Activation::Sigmoid], 20),
        };
        Self { kind, input_width: input.width(), hidden, activations, dropout: 0.2, window }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network spec: {m}")));
        if self.input_width == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("widths must be positive and at least one hidden layer is required");
        }
        if self.activations.len() != self.hidden.len() {
            return bad("one activation per hidden layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        match self.kind {
            NetworkKind::Ffnn if self.window != 1 => bad("feed-forward window must be 1"),
            NetworkKind::Rnn if self.window == 0 => bad("window must be positive"),
            _ => Ok(()),
        }
    }

    pub fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_width;
        for &h in &self.hidden {
            match self.kind {
                NetworkKind::Ffnn => {
                    shapes.push(vec![fan_in, h]);
                    shapes.push(vec![h]);
                }
                NetworkKind::Rnn => {
                    shapes.push(vec![fan_in, 4 * h]);
                    shapes.push(vec![h, 4 * h]);
                    shapes.push(vec![4 * h]);
                }
            }
            fan_in = h;
        }
        shapes.push(vec![fan_in, 1]);
        shapes.push(vec![1]);
        shapes
    }
}

/// Glorot-uniform weights `U(±sqrt(6/(fan_in+fan_out)))`, zero biases.
/// Recurrent and input matrices of an LSTM layer use the per-gate fan-out.
pub fn xavier_init(spec: &NetworkSpec, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = spec
        .parameter_shapes()
        .into_iter()
        .map(|shape| {
            let mut t = Tensor::zeros(&shape);
            if let [fan_in, out] = shape[..] {
                let fan_out = if spec.kind == NetworkKind::Rnn && out != 1 { out / 4 } else { out };
                let bound = xavier_bound(fan_in, fan_out);
                t.data.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            }
            t
        })
        .collect();
    Parameters(tensors)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Per-feature min/max from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(features: ArrayView2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("scaler training features"));
        }
        let min = features.columns().into_iter().map(|c| c.fold(f64::INFINITY, |a, &v| a.min(v))).collect();
        let max = features.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |a, &v| a.max(v))).collect();
        Ok(Self { min, max })
    }

    /// Fits over the rows of several matrices.
    pub fn fit_many<'a>(parts: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut acc: Option<Scaler> = None;
        for p in parts {
            if p.nrows() == 0 {
                continue;
            }
            let s = Scaler::fit(p)?;
            acc = Some(match acc {
                None => s,
                Some(a) => Scaler {
                    min: a.min.iter().zip(&s.min).map(|(x, y)| x.min(*y)).collect(),
                    max: a.max.iter().zip(&s.max).map(|(x, y)| x.max(*y)).collect(),
                },
            });
        }
        acc.ok_or(Error::Empty("scaler training features"))
    }

    /// `(x − min)/(max − min)`, unclamped; constant features map to 0.
    pub fn apply(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.min.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, got {}",
                self.min.len(),
                features.ncols()
            )));
        }
        let mut out = features.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let range = self.max[j] - self.min[j];
            let lo = self.min[j];
            col.mapv_inplace(|v| if range > 0.0 { (v - lo) / range } else { 0.0 });
        }
        Ok(out)
    }
}

/// A mini-batch: `(B, window, width)` inputs.
pub type Batch = Array3<f64>;

/// Training-mode dropout source; `None` runs inference.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

/// Network outputs (β̂, deg) for a batch.
pub fn forward(params: &Parameters, spec: &NetworkSpec, batch: ArrayView3<f64>, rng: DropoutRng) -> Result<Vec<f64>> {
    check_batch(spec, batch)?;
    Ok(match spec.kind {
        NetworkKind::Ffnn => ffnn::forward(params, spec, batch.index_axis(ndarray::Axis(1), 0), rng).0.to_vec(),
        NetworkKind::Rnn => lstm::forward(params, spec, batch, rng).0.to_vec(),
    })
}

pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predictions.len() as f64)
}

/// MSE and its gradient for one batch. Dropout masks are drawn from `rng`
/// when given.
pub fn loss_and_gradient(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: ArrayView3<f64>,
    targets: &[f64],
    rng: DropoutRng,
) -> Result<(f64, Parameters)> {
    check_batch(spec, batch)?;
    if batch.shape()[0] != targets.len() {
        return Err(Error::LengthMismatch(batch.shape()[0], targets.len()));
    }
    let n = targets.len() as f64;
    Ok(match spec.kind {
        NetworkKind::Ffnn => {
            let (y, cache) = ffnn::forward(params, spec, batch.index_axis(ndarray::Axis(1), 0), rng);
            let dy = ndarray::Array1::from_iter(y.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / n));
            let loss = loss_mse(y.as_slice().expect("contiguous"), targets)?;
            (loss, ffnn::backward(params, spec, &cache, dy.view()))
        }
        NetworkKind::Rnn => {
            let (y, cache) = lstm::forward(params, spec, batch, rng);
            let dy = ndarray::Array1::from_iter(y.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / n));
            let loss = loss_mse(y.as_slice().expect("contiguous"), targets)?;
            (loss, lstm::backward(params, spec, &cache, dy.view()))
        }
    })
}

fn check_batch(spec: &NetworkSpec, batch: ArrayView3<f64>) -> Result<()> {
    let s = batch.shape();
    if s[1] != spec.window || s[2] != spec.input_width {
        return Err(Error::Shape(format!(
            "expected batch (_, {}, {}), got {:?}",
            spec.window, spec.input_width, s
        )));
    }
    Ok(())
}

/// A trained regressor with everything needed to run it on raw frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub input_set: InputSet,
    pub spec: NetworkSpec,
    pub scaler: Scaler,
    pub params: Parameters,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::datapipe::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = crate::datapipe::read_json(path)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {}", c.version)));
        }
        c.spec.validate()?;
        if c.params.0.iter().map(|t| &t.shape).ne(c.spec.parameter_shapes().iter()) {
            return Err(Error::format(path, "parameter shapes do not match the network spec"));
        }
        Ok(c)
    }

    /// β̂ (deg) for every frame. The RNN's first `window − 1` outputs repeat the
    /// first full-window prediction.
    pub fn predict(&self, frames: &[MeasurementFrame]) -> Result<Vec<f64>> {
        let raw = self.input_set.feature_matrix(frames)?;
        let x = self.scaler.apply(raw.view())?;
        predict_scaled(&self.params, &self.spec, x.view())
    }
}

/// Predictions over an already scaled feature matrix, evaluated in chunks.
pub fn predict_scaled(params: &Parameters, spec: &NetworkSpec, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    const CHUNK: usize = 2048;
    let n = x.nrows();
    let w = spec.window;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n < w {
        return Err(Error::Shape(format!("sequence of {n} samples is shorter than the {w}-sample window")));
    }
    let ends: Vec<usize> = (w - 1..n).collect();
    let mut out = Vec::with_capacity(n);
    for chunk in ends.chunks(CHUNK) {
        let batch = gather_windows(x, chunk, w);
        out.extend(forward(params, spec, batch.view(), None)?);
    }
    let first = out[0];
    let mut padded = vec![first; w - 1];
    padded.extend(out);
    Ok(padded)
}

/// Stacks the windows ending at each index in `ends`.
pub(crate) fn gather_windows(x: ArrayView2<f64>, ends: &[usize], window: usize) -> Batch {
    let width = x.ncols();
    let mut batch = Array3::zeros((ends.len(), window, width));
    for (b, &end) in ends.iter().enumerate() {
        batch
            .index_axis_mut(ndarray::Axis(0), b)
            .assign(&x.slice(ndarray::s![end + 1 - window..=end, ..]));
    }
    batch
}

#[cfg(test)]
mod tests;
