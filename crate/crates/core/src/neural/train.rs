use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, xavier_init, NetworkKind, NetworkSpec, OptimizerKind, OptimizerState, Parameters};
use crate::error::{Error, Result};
use crate::plant_sim::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Keep every `stride`-th window end as a training/validation sample.
    pub stride: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Published optimizer settings; the RNN samples every 4th window.
    pub fn preset(kind: NetworkKind) -> Self {
        match kind {
            NetworkKind::Ffnn => Self {
                optimizer: OptimizerKind::Adam,
                learning_rate: 8e-4,
                batch_size: 1024,
                patience: 20,
                max_epochs: 500,
                stride: 1,
                seed: 1,
            },
            NetworkKind::Rnn => Self {
                optimizer: OptimizerKind::Nadam,
                learning_rate: 5e-4,
                batch_size: 256,
                patience: 4,
                max_epochs: 200,
                stride: 4,
                seed: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.stride == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, patience, stride and max epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A window ending at `end` inside sequence `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub seq: usize,
    pub end: usize,
}

/// Scaled feature sequences with per-sample targets and the window ends used
/// as samples.
#[derive(Debug, Clone, Default)]
pub struct SequenceSet {
    pub features: Vec<Array2<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
}

impl SequenceSet {
    /// Every `stride`-th full window of each sequence whose last sample is
    /// not excluded.
    pub fn new(parts: Vec<(Array2<f64>, Vec<f64>, Vec<bool>)>, window: usize, stride: usize) -> Result<Self> {
        let mut set = SequenceSet::default();
        for (k, (x, y, exclude)) in parts.into_iter().enumerate() {
            if x.nrows() != y.len() || exclude.len() != y.len() {
                return Err(Error::LengthMismatch(x.nrows(), y.len()));
            }
            set.samples.extend(
                (window.saturating_sub(1)..y.len())
                    .step_by(stride)
                    .filter(|&end| !exclude[end])
                    .map(|end| Sample { seq: k, end }),
            );
            set.features.push(x);
            set.targets.push(y);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch(&self, samples: &[Sample], window: usize) -> (Array3<f64>, Vec<f64>) {
        let width = self.features.first().map_or(0, |f| f.ncols());
        let mut x = Array3::zeros((samples.len(), window, width));
        let mut y = Vec::with_capacity(samples.len());
        for (b, s) in samples.iter().enumerate() {
            let src = self.features[s.seq].slice(ndarray::s![s.end + 1 - window..=s.end, ..]);
            x.index_axis_mut(Axis(0), b).assign(&src);
            y.push(self.targets[s.seq][s.end]);
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean squared error over all samples of `set`, inference mode.
pub fn evaluate_mse(params: &Parameters, spec: &NetworkSpec, set: &SequenceSet) -> Result<f64> {
    const CHUNK: usize = 2048;
    let mut sum = 0.0;
    for chunk in set.samples.chunks(CHUNK) {
        let (x, y) = set.batch(chunk, spec.window);
        let pred = super::forward(params, spec, x.view(), None)?;
        sum += pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    }
    Ok(sum / set.len() as f64)
}

/// Shuffled mini-batch training from a Glorot initialization, keeping the
/// parameters of the best validation epoch and stopping after `patience`
/// epochs without improvement.
pub fn train_with_early_stopping(
    spec: &NetworkSpec,
    train: &SequenceSet,
    val: &SequenceSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut params = xavier_init(spec, config.seed);
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate, &params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let mut order = train.samples.clone();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), optimizer.clone(), 0usize);
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train.batch(chunk, spec.window);
            let (loss, grads) = loss_and_gradient(&params, spec, x.view(), &y, Some(&mut dropout_rng))?;
            if !loss.is_finite() || grads.iter_values().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            optimizer.update(&mut params, &grads)?;
            total += loss * chunk.len() as f64;
        }
        let val_loss = evaluate_mse(&params, spec, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let record = EpochRecord { epoch, train_loss: total / order.len() as f64, val_loss };
        log::debug!("{} epoch {epoch}: train {:.5} val {:.5}", spec.kind.name(), record.train_loss, val_loss);
        history.push(record);
        if val_loss < best.0 {
            best = (val_loss, params.clone(), optimizer.clone(), epoch);
        } else if epoch - best.3 >= config.patience {
            break;
        }
    }
    let (_, params, optimizer, best_epoch) = best;
    log::info!(
        "{} trained {} epochs, best epoch {best_epoch} (val mse {:.5})",
        spec.kind.name(),
        history.len(),
        history[best_epoch - 1].val_loss
    );
    Ok(TrainOutcome { params, optimizer, history, best_epoch })
}
