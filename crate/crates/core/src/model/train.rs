use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Dataset;
use super::Model;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::optim::adam_step;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// 0 when nothing was predicted positive.
    pub precision: f64,
    /// 0 when there are no positives.
    pub recall: f64,
    /// 0 when precision and recall are both 0.
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::Empty("no pairs to evaluate"));
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        })
    }

    /// Counts `prediction > threshold` as a positive call.
    pub fn from_predictions(preds: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "metrics",
                lhs: vec![preds.len()],
                rhs: vec![labels.len()],
            });
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in preds.iter().zip(labels) {
            match (p > threshold, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub valid: Metrics,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best validation F1, earliest on ties).
    pub best_epoch: Option<usize>,
}

/// Deterministic per-batch stream for dropout masks.
fn dropout_rng(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | batch as u64);
    rng
}

/// Trains `model` on `data.train`, evaluating on `data.valid` after every
/// epoch and finally restoring the parameters of the best validation F1.
pub fn fit(model: &mut Model, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<FitReport> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("no training pairs"));
    }
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<crate::autodiff::NamedArray>)> = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<f64> = idx.iter().map(|&i| f64::from(data.train[i].pair.label)).collect();
            let inputs: Vec<_> = idx.iter().map(|&i| data.input(&data.train[i])).collect();
            let mut rng = dropout_rng(seed, epoch, b);
            let (loss, grads) = {
                let mut tape = Tape::new(&model.store);
                let loss = model.network.loss(&mut tape, &inputs, &labels, Some(&mut rng))?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: value,
                    });
                }
                (value, tape.backward(loss)?)
            };
            model.store.accumulate(&grads);
            adam_step(&mut model.store, &cfg.adam, lr);
            model.store.zero_grad();
            if model
                .store
                .iter()
                .any(|(_, p)| p.value.data().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            total += loss;
            batches += 1;
        }
        let valid = if data.valid.is_empty() {
            Metrics::default()
        } else {
            model.evaluate(data, &data.valid, cfg.threshold)?
        };
        if best.as_ref().is_none_or(|(f1, _, _)| valid.f1 > *f1) {
            best = Some((valid.f1, epoch, model.store.snapshot()));
        }
        epochs.push(EpochLog {
            epoch,
            lr,
            loss: total / batches as f64,
            valid,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let best_epoch = match best {
        Some((_, epoch, arrays)) => {
            model.store.restore(&arrays)?;
            Some(epoch)
        }
        None => None,
    };
    Ok(FitReport { epochs, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_arithmetic() {
        let m = Metrics::from_counts(2, 1, 2, 1).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        let perfect = Metrics::from_predictions(&[0.9, 0.1, 0.7], &[1, 0, 1], 0.5).unwrap();
        assert_eq!(
            (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let none = Metrics::from_predictions(&[0.1, 0.2], &[1, 0], 0.5).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(Metrics::from_counts(0, 0, 0, 0).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let m = Metrics::from_predictions(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(m.fn_, 1);
    }
}
