//! The optimization protocol: minibatch AdamW on an L1 loss with cosine
//! annealing, global-norm clipping and early stopping on validation MAE.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ModalityBatch;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{l1_loss, metrics, Metrics};
use crate::model::FusionModel;
use crate::optim::{clip_grad_norm, cosine_lr, AdamW};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            patience: 20,
            batch_size: 32,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            lr_max: 1e-3,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be positive");
        }
        if self.patience > self.epochs {
            return fail("patience cannot exceed epochs");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0 && self.weight_decay >= 0.0) {
            return fail("learning rates and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive");
        }
        Ok(())
    }
}

/// One row of the training report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_corr: Option<f64>,
    pub val_acc2: f64,
    pub val_acc7: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Last epoch that ran.
    pub stop_epoch: usize,
    pub early_stopped: bool,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,val_mae,val_corr,val_acc2,val_acc7,val_f1,lr`.
    /// An undefined correlation is an empty cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<EpochRecord>> {
        let mut r = csv::Reader::from_reader(input);
        r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
    }
}

pub fn evaluate(model: &impl FusionModel, batch: &ModalityBatch) -> Result<Metrics> {
    let pred = model.predict(batch)?;
    metrics(&pred, batch.labels())
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation MAE.
pub fn train_loop<M: FusionModel>(
    model: &mut M,
    train: &ModalityBatch,
    val: &ModalityBatch,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training needs non-empty train and validation sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let lr_min = config.lr_min.min(config.lr_max);
    let mut optimizer = AdamW::new(
        model.params(),
        config.beta1,
        config.beta2,
        config.eps,
        config.weight_decay,
    );

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().snapshot());
    let mut since_best = 0;
    let mut step = 0usize;
    let mut early_stopped = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = config.lr_max;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let mut g = Graph::training(rng.random());
            let pred = model.forward(&mut g, &batch)?;
            let loss = l1_loss(&mut g, pred, batch.labels())?;
            let value = g.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss became {value} at step {step}"),
                });
            }
            loss_sum += value * chunk.len() as f64;

            let store = model.params_mut();
            store.zero_grad();
            g.backward(loss, store)?;
            clip_grad_norm(store, config.clip_norm);
            lr = cosine_lr(step, total_steps, config.lr_max, lr_min);
            optimizer.step(store, lr);
            step += 1;
        }

        let m = evaluate(model, val)?;
        if !m.mae.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation MAE became {}", m.mae),
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mae: m.mae,
            val_corr: m.corr,
            val_acc2: m.acc2,
            val_acc7: m.acc7,
            val_f1: m.f1,
            lr,
        });
        if m.mae < best.0 {
            best = (m.mae, epoch, model.params().snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                early_stopped = true;
                break;
            }
        }
    }

    model.params_mut().restore(&best.2);
    Ok(TrainReport {
        stop_epoch: records.len(),
        epochs: records,
        best_epoch: best.1,
        best_val_mae: best.0,
        early_stopped,
    })
}
