//! Training loops, early stopping, transfer fine-tuning and domain distance.

pub mod mmd;
pub mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use mmd::mmd;
pub use optim::{AdamW, AdamWConfig};

use crate::error::{Error, Result};
use crate::ingest::{Manifest, Split};
use crate::models::{Checkpoint, ModelKind, SwinLinearModel, SwinStbModel};
use crate::params::{ParamStore, Session};
use crate::sor::{sor_series, SorLabelConfig};
use crate::tensor::init::rng;
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Relative per-epoch loss decrease, in percent, below which an epoch
    /// counts as stalled.
    pub stop_threshold_pct: f64,
    /// Consecutive stalled epochs that stop training.
    pub patience: usize,
    /// Seeds the sample order.
    pub seed: u64,
    /// Keep every `enc.*` parameter fixed.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            epochs: 20,
            batch_size: 1,
            stop_threshold_pct: 0.01,
            patience: 4,
            seed: 0,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0) || self.patience == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "training needs lr > 0, patience >= 1, batch size >= 1 and epochs >= 1; got lr={} patience={} batch={} epochs={}",
                o.lr, self.patience, self.batch_size, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || o.weight_decay < 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// True once each of the last `patience` epochs lowered the loss by less than
/// `threshold_pct` percent of the previous epoch's loss.
pub fn should_stop(losses: &[f64], threshold_pct: f64, patience: usize) -> bool {
    if losses.len() <= patience {
        return false;
    }
    losses[losses.len() - patience - 1..]
        .windows(2)
        .all(|w| (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE) * 100.0 < threshold_pct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    Plateau,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Budget => "epoch budget reached",
            StopReason::Plateau => "loss plateau",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Validation loss before any update, epoch 0.
    pub initial_val_loss: f64,
    /// Mean training loss of the untrained model.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose parameters were kept (0 means the initial ones).
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainLog {
    /// `epoch,loss,val_loss,seconds`, with epoch 0 the untrained model.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_loss,seconds\n");
        writeln!(s, "0,{:.6},{:.6},0.000000", self.initial_loss, self.initial_val_loss).unwrap();
        for e in &self.epochs {
            writeln!(s, "{},{:.6},{:.6},{:.6}", e.epoch, e.loss, e.val_loss, e.seconds).unwrap();
        }
        s
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    pub fn final_val_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_val_loss, |e| e.val_loss)
    }

    /// First epoch whose validation loss is at or below `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.val_loss <= target).map(|e| e.epoch)
    }
}

fn mean_loss<S: Sync>(
    store: &ParamStore,
    samples: &[S],
    loss: &(dyn Fn(&mut Session, &S) -> Result<Var> + Sync),
) -> Result<f64> {
    let values: Vec<f64> = samples
        .par_iter()
        .map(|smp| {
            let mut s = Session::eval(store);
            let l = loss(&mut s, smp)?;
            Ok(s.value(l).data()[0] as f64)
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Generic minibatch loop. Keeps the parameters of the best validation epoch.
pub fn train_loop<S: Sync>(
    store: &mut ParamStore,
    train: &[S],
    val: &[S],
    cfg: &TrainConfig,
    loss: &(dyn Fn(&mut Session, &S) -> Result<Var> + Sync),
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }
    let trainable = |name: &str| !(cfg.freeze_encoder && name.starts_with("enc."));
    let mut opt = AdamW::new(store, cfg.optimizer);
    let mut order_rng = rng(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let initial_loss = mean_loss(store, train, loss)?;
    let initial_val_loss = mean_loss(store, val, loss)?;
    let mut best = (initial_val_loss, 0usize, store.clone());
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut losses = vec![initial_loss];
    let mut stop = StopReason::Budget;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &ParamStore = store;
            let results: Vec<(f64, Vec<Option<Tensor>>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut s = Session::with_trainable(frozen, trainable);
                    let l = loss(&mut s, &train[i])?;
                    let value = s.value(l).data()[0] as f64;
                    if !value.is_finite() {
                        return Err(Error::Numeric(format!("non-finite loss on training sample {i} in epoch {epoch}")));
                    }
                    s.backward(l)?;
                    Ok((value, s.take_grads()))
                })
                .collect::<Result<_>>()?;
            let mut grads: Vec<Option<Tensor>> = vec![None; store.len()];
            for (value, g) in results {
                total += value;
                for (acc, g) in grads.iter_mut().zip(g) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => a.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        (None, Some(g)) => *acc = Some(g),
                        _ => {}
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for g in grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            opt.update(store, &grads)?;
        }
        let epoch_loss = total / train.len() as f64;
        let val_loss = mean_loss(store, val, loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss in epoch {epoch}")));
        }
        records.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss {epoch_loss:.6} val {val_loss:.6}");
        if val_loss < best.0 {
            best = (val_loss, epoch, store.clone());
        }
        losses.push(epoch_loss);
        if should_stop(&losses[1..], cfg.stop_threshold_pct, cfg.patience) {
            stop = StopReason::Plateau;
            break;
        }
    }
    let (best_val_loss, best_epoch, snapshot) = best;
    *store = snapshot;
    Ok(TrainLog {
        initial_val_loss,
        initial_loss,
        epochs: records,
        stop,
        best_epoch,
        best_val_loss,
    })
}

/// `(input, target)` clip pairs.
pub type ClipPair = (Tensor, Tensor);

/// `(input, future occupancy rates)` pairs.
pub type SorPair = (Tensor, Tensor);

/// Mean squared error of the unclamped forecast; clamping is applied only at
/// inference.
pub fn stb_loss(model: &SwinStbModel) -> impl Fn(&mut Session, &ClipPair) -> Result<Var> + Sync + '_ {
    move |s, (x, y)| {
        let xv = s.constant(x.clone());
        let feats = model.encode(s, xv)?;
        let pred = model.decode_raw(s, feats)?;
        s.mse(pred, y)
    }
}

pub fn sor_loss(model: &SwinLinearModel) -> impl Fn(&mut Session, &SorPair) -> Result<Var> + Sync + '_ {
    move |s, (x, y)| {
        let xv = s.constant(x.clone());
        let pred = model.forward(s, xv)?;
        s.mse(pred, y)
    }
}

pub fn train_stb_on(model: &mut SwinStbModel, train: &[ClipPair], val: &[ClipPair], cfg: &TrainConfig) -> Result<TrainLog> {
    let mut store = std::mem::take(&mut model.store);
    let result = {
        let view = SwinStbModel { store: ParamStore::new(), ..model.clone() };
        let loss = stb_loss(&view);
        train_loop(&mut store, train, val, cfg, &loss)
    };
    model.store = store;
    result
}

pub fn train_sor_on(model: &mut SwinLinearModel, train: &[SorPair], val: &[SorPair], cfg: &TrainConfig) -> Result<TrainLog> {
    let mut store = std::mem::take(&mut model.store);
    let result = {
        let view = SwinLinearModel { store: ParamStore::new(), ..model.clone() };
        let loss = sor_loss(&view);
        train_loop(&mut store, train, val, cfg, &loss)
    };
    model.store = store;
    result
}

/// Checks that a model accepts the manifest's input clips.
pub fn check_dims(model_input: [usize; 4], manifest: &Manifest) -> Result<()> {
    let want = [manifest.input_length, manifest.height, manifest.width, manifest.channels];
    if model_input != want || manifest.horizon != manifest.input_length {
        return Err(Error::Config(format!(
            "model input {model_input:?} does not match dataset clips {want:?} (horizon {})",
            manifest.horizon
        )));
    }
    Ok(())
}

pub fn train_stb(model: &mut SwinStbModel, manifest: &Manifest, cfg: &TrainConfig) -> Result<TrainLog> {
    check_dims(model.config.input, manifest)?;
    let train = manifest.samples(Split::Train)?;
    let val = manifest.samples(Split::Val)?;
    train_stb_on(model, &train, &val, cfg)
}

/// Input clips paired with the occupancy rates of their target frames.
pub fn sor_samples(manifest: &Manifest, split: Split, labels: &SorLabelConfig) -> Result<Vec<SorPair>> {
    manifest
        .samples(split)?
        .into_iter()
        .map(|(x, y)| {
            let rates = sor_series(&y, labels)?;
            let n = rates.len();
            Ok((x, Tensor::new([n], rates)?))
        })
        .collect()
}

pub fn train_sor(
    model: &mut SwinLinearModel,
    manifest: &Manifest,
    labels: &SorLabelConfig,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    check_dims(model.config.input, manifest)?;
    let train = sor_samples(manifest, Split::Train, labels)?;
    let val = sor_samples(manifest, Split::Val, labels)?;
    train_sor_on(model, &train, &val, cfg)
}

/// Loads a pretrained forecaster and fine-tunes it on the target dataset.
pub fn transfer_finetune(ck: &Checkpoint, target: &Manifest, cfg: &TrainConfig) -> Result<(SwinStbModel, TrainLog)> {
    ck.expect_kind(ModelKind::Stb)?;
    check_dims(ck.config.input, target).map_err(|e| Error::Checkpoint(format!("pretrained model vs target data: {e}")))?;
    let mut model = SwinStbModel::from_checkpoint(ck)?;
    let log = train_stb(&mut model, target, cfg)?;
    Ok((model, log))
}
