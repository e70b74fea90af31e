//! Training: losses, Adam, plateau scheduling, offline augmentation and the
//! epoch loop that reads and rewrites the per-sample feedback masks.

mod augment;
mod loss;
mod optim;

pub use augment::{augment_offline, expand_offline, variant_id, Recipe};
pub use loss::{bce_loss, combined_loss, combined_loss_grad, dice_loss, LossConfig};
pub use optim::{Adam, PlateauScheduler};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{image_batch, Sample};
use crate::error::{Error, Result};
use crate::inference::{binarize, initial_mask};
use crate::mask_codec::{BinaryMask, MaskStore};
use crate::model::{mask_tensor, Checkpoint, Fanet, NetworkConfig};
use crate::nn::{Mode, Module};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub dice_smooth: f64,
    pub bce_eps: f64,
    pub seed: u64,
    /// Share of the training samples held out for validation when no
    /// validation split is given.
    pub val_fraction: f64,
    /// Offline augmentation recipe indices applied to every training sample
    /// (empty: train on the samples as given).
    pub augment: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            plateau_patience: 5,
            plateau_factor: 0.1,
            min_lr: 1e-7,
            dice_smooth: 1.0,
            bce_eps: 1e-7,
            seed: 0,
            val_fraction: 0.1,
            augment: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.dice_smooth > 0.0 && self.dice_smooth.is_finite()) {
            return fail(format!("dice_smooth {} must be positive", self.dice_smooth));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!("val_fraction {} not in [0, 1)", self.val_fraction));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail(format!("plateau_factor {} not in (0, 1)", self.plateau_factor));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(self.bce_eps > 0.0 && self.bce_eps < 0.5) {
            return fail(format!("bce_eps {} not in (0, 0.5)", self.bce_eps));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            dice_smooth: self.dice_smooth,
            bce_eps: self.bce_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate the epoch was trained with.
    pub lr: f64,
    /// Wall-clock seconds.
    pub epoch_time: f64,
}

/// What the epoch loop reports to an observer.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// A training forward pass is about to consume `mask` for sample `id`.
    Consumed { epoch: u32, id: &'a str, mask: &'a BinaryMask },
    /// `mask` was written to the store for sample `id`.
    Stored { epoch: u32, id: &'a str, mask: &'a BinaryMask },
    EpochEnd(&'a EpochRecord),
}

pub type Observer<'a> = dyn FnMut(&TrainEvent<'_>) + 'a;

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Fanet<f32>,
    pub optimizer: Adam,
    pub scheduler: PlateauScheduler,
    /// Number of completed epochs; also the stamp of the next epoch.
    pub epoch: u32,
    pub lr: f64,
    pub history: Vec<EpochRecord>,
    pub store: MaskStore,
}

impl TrainState {
    pub fn new(config: TrainConfig, network: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let model = Fanet::new(network, config.seed)?;
        Ok(Self {
            optimizer: Adam::new(config.beta1, config.beta2, config.adam_eps),
            scheduler: PlateauScheduler::new(config.plateau_factor, config.plateau_patience, config.min_lr),
            lr: config.learning_rate,
            model,
            config,
            epoch: 0,
            history: Vec::new(),
            store: MaskStore::new(),
        })
    }

    fn feedback(&self, sample: &Sample) -> BinaryMask {
        self.store.get(&sample.id).unwrap_or_else(|| initial_mask(&sample.image))
    }
}

fn batch_inputs(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((image_batch(&images)?, mask_tensor(&masks)))
}

fn item_masks(probs: &Tensor<f32>, threshold: f64) -> Result<Vec<BinaryMask>> {
    let [n, _, h, w] = probs.shape();
    (0..n).map(|i| binarize(probs.plane(i, 0), h, w, threshold)).collect()
}

/// One optimization pass over `dataset` in a seeded order.
///
/// Every forward pass consumes the sample's stored mask from the previous
/// epoch (the Otsu mask before any is stored); once the epoch is done the
/// store holds each sample's binarized training prediction, stamped with
/// this epoch. Appends one record to the loss history and returns it.
pub fn train_epoch(state: &mut TrainState, dataset: &[Sample], observer: &mut Observer<'_>) -> Result<EpochRecord> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed);
    rng.set_stream(u64::from(epoch) + 1);
    order.shuffle(&mut rng);

    let loss_cfg = state.config.loss();
    let threshold = state.model.config().binarize_threshold;
    let mut pending = Vec::with_capacity(dataset.len());
    let mut total = 0.0;
    for chunk in order.chunks(state.config.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
        let prev: Vec<BinaryMask> = batch.iter().map(|s| state.feedback(s)).collect();
        for (s, m) in batch.iter().zip(&prev) {
            observer(&TrainEvent::Consumed { epoch, id: &s.id, mask: m });
        }
        let (images, target) = batch_inputs(&batch)?;
        let probs = state.model.forward(&images, &prev, Mode::Train)?;
        let (loss, grad) = combined_loss_grad(probs.data(), target.data(), &loss_cfg)?;
        state.model.zero_grad();
        state.model.backward(&Tensor::from_vec(probs.shape(), grad)?);
        state.optimizer.step(&mut state.model, state.lr);
        total += loss * batch.len() as f64;
        for (s, m) in batch.iter().zip(item_masks(&probs, threshold)?) {
            pending.push((s.id.as_str(), m));
        }
    }
    for (id, mask) in &pending {
        state.store.put(id, mask, epoch)?;
        observer(&TrainEvent::Stored { epoch, id, mask });
    }
    let record = EpochRecord {
        epoch,
        train_loss: total / dataset.len() as f64,
        val_loss: None,
        lr: state.lr,
        epoch_time: start.elapsed().as_secs_f64(),
    };
    state.history.push(record.clone());
    state.epoch += 1;
    Ok(record)
}

/// Mean loss over `dataset` in evaluation mode, fed (and then updating) the
/// samples' own stored masks under stamp `epoch`.
pub fn evaluate_loss(state: &mut TrainState, dataset: &[Sample], epoch: u32) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss_cfg = state.config.loss();
    let threshold = state.model.config().binarize_threshold;
    let mut total = 0.0;
    let refs: Vec<&Sample> = dataset.iter().collect();
    for batch in refs.chunks(state.config.batch_size) {
        let prev: Vec<BinaryMask> = batch.iter().map(|s| state.feedback(s)).collect();
        let (images, target) = batch_inputs(batch)?;
        let probs = state.model.forward(&images, &prev, Mode::Eval)?;
        total += combined_loss(probs.data(), target.data(), &loss_cfg)? * batch.len() as f64;
        for (s, m) in batch.iter().zip(item_masks(&probs, threshold)?) {
            state.store.put(&s.id, &m, epoch)?;
        }
    }
    Ok(total / dataset.len() as f64)
}

/// Seeded holdout: returns `(train, validation)`.
pub fn split_validation(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let n_val = (samples.len() as f64 * fraction).round() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11));
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>()
    };
    (pick(train_idx), pick(val_idx))
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: TrainState,
    /// Weights with the lowest monitored loss.
    pub best: Checkpoint,
    pub best_epoch: u32,
    pub last: Checkpoint,
}

impl FitOutcome {
    pub fn lr_trajectory(&self) -> Vec<f64> {
        self.state.history.iter().map(|r| r.lr).collect()
    }
}

fn checkpoint(state: &mut TrainState, monitored: f64) -> Checkpoint {
    let metadata = serde_json::json!({
        "train": state.config,
        "seed": state.config.seed,
        "epoch": state.epoch.saturating_sub(1),
        "monitored_loss": monitored,
    });
    Checkpoint::from_model(&mut state.model, metadata)
}

/// Full training run with plateau LR reduction on validation loss (training
/// loss when there is no validation data).
///
/// Without `val`, `config.val_fraction` of `train` is held out by a seeded
/// shuffle. Augmentation applies to the remaining training samples only.
pub fn fit(
    config: &TrainConfig,
    network: &NetworkConfig,
    train: &[Sample],
    val: Option<&[Sample]>,
    observer: &mut Observer<'_>,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, val) = match val {
        Some(v) => (train.to_vec(), v.to_vec()),
        None => split_validation(train, config.val_fraction, config.seed),
    };
    let train = if config.augment.is_empty() {
        train
    } else {
        expand_offline(&train, &config.augment, config.seed)?
    };

    let mut state = TrainState::new(config.clone(), network.clone())?;
    let mut best: Option<(f64, u32, Checkpoint)> = None;
    for _ in 0..config.epochs {
        let start = Instant::now();
        let record = train_epoch(&mut state, &train, observer)?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&mut state, &val, record.epoch)?)
        };
        let monitored = val_loss.unwrap_or(record.train_loss);
        if !monitored.is_finite() {
            return Err(Error::Config(format!("loss diverged at epoch {}", record.epoch)));
        }
        let last = state.history.last_mut().expect("train_epoch appends a record");
        last.val_loss = val_loss;
        last.epoch_time = start.elapsed().as_secs_f64();
        let record = last.clone();
        if best.as_ref().is_none_or(|(b, _, _)| monitored < *b) {
            best = Some((monitored, record.epoch, checkpoint(&mut state, monitored)));
        }
        state.lr = state.scheduler.step(monitored, state.lr);
        observer(&TrainEvent::EpochEnd(&record));
    }
    let monitored = state.scheduler.best();
    let last = checkpoint(&mut state, monitored);
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        state,
        best,
        best_epoch,
        last,
    })
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,epoch_time";

/// Training log as CSV. Losses and learning rates are written in shortest
/// round-trip form, so equal runs give equal text apart from `epoch_time`.
pub fn log_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{:.3}", r.epoch, r.train_loss, val, r.lr, r.epoch_time);
    }
    out
}

pub fn write_log_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, log_csv(history)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::Ablation;

    fn tiny_net() -> NetworkConfig {
        NetworkConfig::default().with_widths(&[4, 8])
    }

    fn data(n: usize) -> Vec<Sample> {
        let spec = SyntheticSpec {
            train: n,
            test: 0,
            size: 16,
            seed: 4,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().train
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            learning_rate: 1e-3,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epoch_zero_stores_predictions_not_otsu() {
        let samples = data(6);
        let mut state = TrainState::new(quick(), tiny_net()).unwrap();
        let mut consumed = Vec::new();
        let mut stored = Vec::new();
        train_epoch(&mut state, &samples, &mut |e| match e {
            TrainEvent::Consumed { id, mask, .. } => consumed.push((id.to_string(), (*mask).clone())),
            TrainEvent::Stored { id, mask, .. } => stored.push((id.to_string(), (*mask).clone())),
            TrainEvent::EpochEnd(_) => {}
        })
        .unwrap();
        assert_eq!(state.history.len(), 1);
        assert_eq!(state.store.len(), 6);
        for s in &samples {
            let otsu = initial_mask(&s.image);
            assert!(consumed.iter().any(|(id, m)| id == &s.id && m == &otsu));
            let (_, m) = stored.iter().find(|(id, _)| id == &s.id).unwrap();
            assert_eq!(state.store.get(&s.id).as_ref(), Some(m));
            assert_eq!(state.store.epoch_of(&s.id), Some(0));
        }
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let samples = data(6);
        let run = || {
            let out = fit(&quick(), &tiny_net(), &samples, None, &mut |_| {}).unwrap();
            out.state.history.iter().map(|r| (r.train_loss, r.val_loss, r.lr)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_epoch_means_one_train_epoch() {
        let samples = data(5);
        let cfg = TrainConfig { epochs: 1, ..quick() };
        let mut ends = 0;
        let out = fit(&cfg, &tiny_net().with_ablation(Ablation::B1), &samples, None, &mut |e| {
            if let TrainEvent::EpochEnd(_) = e {
                ends += 1;
            }
        })
        .unwrap();
        assert_eq!(ends, 1);
        assert_eq!(out.state.history.len(), 1);
        assert_eq!(out.lr_trajectory(), vec![1e-3]);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(fit(&quick(), &tiny_net(), &[], None, &mut |_| {}), Err(Error::EmptyDataset)));
    }

    #[test]
    fn holdout_is_seeded_and_disjoint() {
        let samples = data(10);
        let (t1, v1) = split_validation(&samples, 0.1, 3);
        let (t2, v2) = split_validation(&samples, 0.1, 3);
        assert_eq!((t1.len(), v1.len()), (9, 1));
        assert_eq!(v1, v2);
        assert_eq!(t1, t2);
        assert!(!t1.contains(&v1[0]));
    }

    #[test]
    fn log_has_one_row_per_epoch() {
        let rec = EpochRecord {
            epoch: 0,
            train_loss: 0.5,
            val_loss: None,
            lr: 1e-4,
            epoch_time: 1.25,
        };
        assert_eq!(log_csv(&[rec]), "epoch,train_loss,val_loss,lr,epoch_time\n0,0.5,,0.0001,1.250\n");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { epochs: 0, ..quick() },
            TrainConfig { learning_rate: 0.0, ..quick() },
            TrainConfig { dice_smooth: 0.0, ..quick() },
            TrainConfig { batch_size: 0, ..quick() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
