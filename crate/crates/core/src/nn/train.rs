use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use super::network::{Gradients, Network};
use super::optim::{AdamConfig, OptimizerState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Labeled inputs in channel-major `[c, h, w]` layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    inputs: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(shape: [usize; 3]) -> Self {
        Self {
            shape,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, input: Vec<f32>, label: usize) -> Result<()> {
        let want: usize = self.shape.iter().product();
        if input.len() != want {
            return Err(Error::Shape(format!("sample of length {} for shape {:?}", input.len(), self.shape)));
        }
        self.inputs.push(input);
        self.labels.push(label);
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i]
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            if l < n_classes {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            shape: self.shape,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Stacks the given samples into an `[n, c, h, w]` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.inputs.first().map_or(0, Vec::len));
        for &i in indices {
            data.extend_from_slice(&self.inputs[i]);
        }
        let [c, h, w] = self.shape;
        Tensor::from_vec(&[indices.len(), c, h, w], data).expect("samples have the dataset shape")
    }

    /// Seeded class-stratified split into (train, validation). Each class
    /// keeps at least one training sample.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_classes = self.labels.iter().max().map_or(0, |m| m + 1);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for class in 0..n_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
            val.extend_from_slice(&idx[..n_val]);
            train.extend_from_slice(&idx[n_val..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        (self.subset(&train), self.subset(&val))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Plain,
    StagedUnfreeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f32,
    pub patience: usize,
    pub lr_decay: f32,
    pub schedule: ScheduleMode,
    /// Fraction held out for validation. Zero validates on the training set.
    pub validation_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            seed: 0,
            learning_rate: 0.01,
            patience: 2,
            lr_decay: 1e-2,
            schedule: ScheduleMode::Plain,
            validation_split: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr decay must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad("validation split must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

/// Reduce-on-plateau trigger: fires once the monitored value has failed to
/// strictly improve on its best for `patience` consecutive observations.
/// The best value persists across triggers; the wait counter resets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            true
        } else {
            false
        }
    }
}

/// Stage bookkeeping for staged unfreezing: stage 1 trains the final
/// parameterized layer, stage 2 the final two, stage 3 everything. Each
/// plateau advances one stage and multiplies the learning rate by the decay.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedSchedule {
    pub stage: usize,
    pub learning_rate: f32,
    decay: f32,
    tracker: PlateauTracker,
}

pub const FINAL_STAGE: usize = 3;

impl StagedSchedule {
    pub fn new(learning_rate: f32, decay: f32, patience: usize) -> Self {
        Self {
            stage: 1,
            learning_rate,
            decay,
            tracker: PlateauTracker::new(patience),
        }
    }

    /// Number of top parameterized layers open at the current stage
    /// (`None` for all layers).
    pub fn open_layers(&self) -> Option<usize> {
        match self.stage {
            1 => Some(1),
            2 => Some(2),
            _ => None,
        }
    }

    /// Feeds one validation loss; returns true when a new stage begins.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if !self.tracker.observe(val_loss) || self.stage >= FINAL_STAGE {
            return false;
        }
        self.stage += 1;
        self.learning_rate *= self.decay;
        true
    }

    pub fn apply(&self, network: &mut Network) {
        match self.open_layers() {
            Some(k) => network.set_trainable_top(k),
            None => network.set_all_trainable(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub learning_rate: f32,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the lowest validation loss seen.
    pub network: Network,
    pub best_epoch: usize,
    pub optimizer: OptimizerState,
    pub log: Vec<EpochLog>,
}

/// Mean cross-entropy and accuracy of `network` on `data`.
pub fn evaluate(network: &Network, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let (mut loss, mut correct) = (0f64, 0usize);
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let logits = network.logits(&data.batch(chunk))?;
        let k = logits.shape()[1];
        for (row, &i) in logits.data().chunks(k).zip(chunk) {
            let label = data.labels()[i];
            let (l, _) = softmax_cross_entropy(row, label)?;
            loss += l;
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean loss, number correct and averaged gradients for one mini-batch.
pub fn batch_gradients(network: &Network, data: &Dataset, indices: &[usize]) -> Result<(f64, usize, Gradients)> {
    let x = data.batch(indices);
    let n = indices.len();
    let mut loss = 0f64;
    let mut correct = 0;
    let (_, grads) = network.forward_backward(&x, |logits| {
        let k = logits.shape()[1];
        let mut upstream = Vec::with_capacity(logits.len());
        for (row, &i) in logits.data().chunks(k).zip(indices) {
            let label = data.labels()[i];
            let (l, g) = softmax_cross_entropy(row, label)?;
            loss += l;
            if argmax(row) == label {
                correct += 1;
            }
            upstream.extend(g.into_iter().map(|v| v / n as f32));
        }
        Tensor::from_vec(logits.shape(), upstream)
    })?;
    Ok((loss / n as f64, correct, grads))
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(what) => Error::Divergence {
            epoch,
            detail: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Mini-batch ADAM training with seeded shuffling. Returns the network with
/// the best validation loss along with the per-epoch log.
pub fn train(network: Network, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n_out = network.output_len();
    if data.shape() != network.input_shape() {
        return Err(Error::Shape(format!(
            "dataset shape {:?} vs network input {:?}",
            data.shape(),
            network.input_shape()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= n_out) {
        return Err(Error::Data(format!("label {bad} outside {n_out} classes")));
    }
    if let Some(missing) = data.class_counts(n_out).iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {missing} has no training samples")));
    }
    let staged = config.schedule == ScheduleMode::StagedUnfreeze;
    if staged && network.param_layers().len() < FINAL_STAGE {
        return Err(Error::InvalidArgument(
            "staged unfreezing needs at least three parameterized layers".into(),
        ));
    }

    let (train_set, val_set) = if config.validation_split > 0.0 {
        data.stratified_split(config.validation_split, config.seed)
    } else {
        (data.clone(), data.clone())
    };
    let val_set = if val_set.is_empty() { train_set.clone() } else { val_set };

    let mut net = network;
    let mut schedule = StagedSchedule::new(config.learning_rate, config.lr_decay, config.patience);
    if staged {
        schedule.apply(&mut net);
    } else {
        net.set_all_trainable();
    }
    let mut optimizer = OptimizerState::new(
        &net,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        optimizer.config.learning_rate = if staged { schedule.learning_rate } else { config.learning_rate };
        let (mut loss_sum, mut correct) = (0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (loss, ok, grads) = batch_gradients(&net, &train_set, chunk).map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            optimizer.step(&mut net, &grads).map_err(|e| diverged(epoch, e))?;
        }
        let (val_loss, val_accuracy) = evaluate(&net, &val_set, config.batch_size).map_err(|e| diverged(epoch, e))?;
        let entry = EpochLog {
            epoch,
            stage: if staged { schedule.stage } else { 1 },
            learning_rate: optimizer.config.learning_rate,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch} stage {} lr {:e} loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            entry.stage,
            entry.learning_rate,
            entry.train_loss,
            entry.train_accuracy,
            val_loss,
            val_accuracy
        );
        log.push(entry);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.clone()));
        }
        if staged && schedule.observe(val_loss) {
            schedule.apply(&mut net);
            log::info!("stage {} begins after epoch {epoch}", schedule.stage);
        }
    }

    let (best_epoch, network) = match best {
        Some((_, e, n)) => (e, n),
        None => (0, net),
    };
    Ok(TrainOutcome {
        network,
        best_epoch,
        optimizer,
        log,
    })
}
