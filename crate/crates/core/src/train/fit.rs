use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Adam;
use crate::model::TransformerClassifier;
use crate::signal::EpochSet;
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Mean sparse categorical cross-entropy of `[n, K]` logits, via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.sparse_cross_entropy(l, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `[n, num_classes]`, rows in set order.
    pub logits: Tensor,
}

/// Eval-mode loss, accuracy and logits over a whole set.
pub fn evaluate(model: &TransformerClassifier, set: &EpochSet, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty set".into()));
    }
    let k = model.config().num_classes;
    let mut logits = Vec::with_capacity(set.len() * k);
    let mut total = 0.0;
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let out = model.forward(&set.batch(idx))?;
        total += cross_entropy(&out, &set.batch_labels(idx))? * idx.len() as f64;
        logits.extend_from_slice(out.data());
    }
    let logits = Tensor::new([set.len(), k], logits)?;
    let acc = accuracy(&argmax_rows(&logits), set.labels());
    Ok(Evaluation { loss: total / set.len() as f64, accuracy: acc, logits })
}

/// Stops after `patience` epochs without a strict improvement of the monitored value.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, wait: 0 }
    }

    /// Records `value` for `epoch`; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        match self.best {
            Some((_, b)) if value <= b => {
                self.wait += 1;
                false
            }
            _ => {
                self.best = Some((epoch, value));
                self.wait = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.wait >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based index of the last epoch run.
    pub stopped_epoch: usize,
    /// 1-based index of the epoch whose weights were kept.
    pub best_epoch: usize,
    /// Not part of [`TrainLog::to_text`].
    pub wall_time_secs: f64,
}

impl TrainLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// Tab-separated, one line per epoch, followed by `best_epoch` and
    /// `stopped_epoch` lines. Deterministic for a fixed seed.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        }
        let _ = writeln!(s, "# best_epoch\t{}", self.best_epoch);
        let _ = writeln!(s, "# stopped_epoch\t{}", self.stopped_epoch);
        s
    }
}

/// Mini-batch Adam on `train`, early-stopped on `val` accuracy.
///
/// Returns the weights of the best validation epoch (earliest on ties).
pub fn fit(
    mut model: TransformerClassifier,
    train: &EpochSet,
    val: &EpochSet,
    cfg: &TrainConfig,
) -> Result<(TransformerClassifier, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(format!(
            "fit needs non-empty sets, got {} train and {} validation epochs",
            train.len(),
            val.len()
        )));
    }
    model.check_batch(&train.batch(&[0]))?;
    model.check_batch(&val.batch(&[0]))?;
    let k = model.config().num_classes;
    if let Some(&l) = train.labels().iter().chain(val.labels()).find(|&&l| l >= k) {
        return Err(Error::Contract(format!("label {l} outside the model's {k} classes")));
    }

    let start = Instant::now();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().to_vec();
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let labels = train.batch_labels(idx);
            let (loss, grads, logits) = model.loss_and_grads(&train.batch(idx), &labels, true, &mut dropout_rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(model.params_mut(), &grads, cfg)?;
            loss_sum += loss * idx.len() as f64;
            hits += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        let v = evaluate(&model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss: v.loss,
            val_acc: v.accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        epochs.push(record);
        if stopper.observe(epoch, v.accuracy) {
            best_params.clone_from_slice(model.params());
        }
        if stopper.should_stop() {
            break;
        }
    }

    let stopped_epoch = epochs.len();
    let best_epoch = stopper.best_epoch().expect("at least one epoch ran");
    model.params_mut().clone_from_slice(&best_params);
    let log = TrainLog { epochs, stopped_epoch, best_epoch, wall_time_secs: start.elapsed().as_secs_f64() };
    Ok((model, log))
}
