use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{target_of, ForecastModel, Standardization};
use crate::cells::Crop;
use crate::error::{Error, Result};
use crate::nn::{AdamState, GradientTape, Gradients, Tensor2};
use crate::par;
use crate::rng::{substream, SHUFFLE};
use crate::trackgen::{make_windows, TrackDataset, Window, TARGET_CHANNELS, VERTICAL_LEFT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Windows per Adam step; 0 means all training windows (full batch).
    pub batch_size: usize,
    /// Random spatial crop length per window; 0 trains on the whole track.
    pub crop: usize,
    /// Positions at each crop edge left out of the loss.
    pub crop_margin: usize,
    /// Fit input standardization on the training split.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 0,
            crop: 0,
            crop_margin: 5,
            standardize: true,
        }
    }
}

impl TrainConfig {
    /// Cropped minibatch schedule paired with [`ModelConfig::desk`](super::ModelConfig::desk).
    pub fn desk() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 16,
            crop: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("training.epochs: must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("training.learning_rate: must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                bad.push(format!("training.{name}: must lie in (0, 1), got {b}"));
            }
        }
        if self.crop > 0 && self.crop <= 2 * self.crop_margin {
            bad.push(format!(
                "training.crop: must exceed twice crop_margin ({}), got {}",
                self.crop_margin, self.crop
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// Per-epoch mean training and validation MSE.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl LossHistory {
    /// `epoch,train_loss,val_loss`, epochs counted from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            let _ = writeln!(s, "{},{t:.16e},{v:.16e}", e + 1);
        }
        s
    }

    /// Lowest validation loss seen up to and including each epoch.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.validation
            .iter()
            .scan(f64::INFINITY, |best, &v| {
                *best = best.min(v);
                Some(*best)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: ForecastModel,
    pub history: LossHistory,
    /// 1-based epoch of the kept snapshot.
    pub best_epoch: usize,
}

struct Job<'a> {
    window: &'a Window,
    crop: Crop,
}

fn window_loss_and_grad(model: &ForecastModel, ds: &TrackDataset, job: &Job, margin: usize) -> Result<(f64, Gradients)> {
    let mut tape = GradientTape::new();
    let pred = model.record(&mut tape, &ds.irregularities, &ds.exogenous, job.window.inputs.clone(), job.crop)?;
    let mut y = Tensor2::zeros(TARGET_CHANNELS, job.crop.len);
    for c in 0..TARGET_CHANNELS {
        let row = ds.irregularities.row(job.window.target, VERTICAL_LEFT + c);
        y.row_mut(c).copy_from_slice(&row[job.crop.start..job.crop.start + job.crop.len]);
    }
    let target = tape.constant(y);
    let (pred, target) = if margin > 0 {
        let keep = job.crop.len - 2 * margin;
        (tape.slice_cols(pred, margin, keep)?, tape.slice_cols(target, margin, keep)?)
    } else {
        (pred, target)
    };
    let loss = tape.mse(pred, target)?;
    let grads = tape.backward(loss, &model.store)?;
    Ok((tape.scalar(loss), grads))
}

/// Training objective of one window over the whole track and its gradients.
pub fn window_gradients(model: &ForecastModel, ds: &TrackDataset, window: &Window) -> Result<(f64, Gradients)> {
    let job = Job {
        window,
        crop: Crop {
            start: 0,
            len: ds.positions(),
        },
    };
    window_loss_and_grad(model, ds, &job, 0)
}

/// Mean per-window MSE over the whole track for every window of `ds`.
pub(crate) fn dataset_loss(model: &ForecastModel, ds: &TrackDataset) -> Result<f64> {
    let set = make_windows(ds.inspections(), model.config.tau)?;
    let losses = par::map(&set.windows, |w| -> Result<f64> {
        let pred = model.forecast_window(ds, w)?;
        let y = target_of(ds, w);
        Ok(crate::nn::mse_slices(pred.data(), y.data()))
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / set.windows.len() as f64)
}

/// Minimizes the MSE of next-inspection forecasts with Adam and keeps the
/// parameters with the lowest validation loss.
pub fn train(
    mut model: ForecastModel,
    train_set: &TrackDataset,
    validation: &TrackDataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let tau = model.config.tau;
    let train_windows = make_windows(train_set.inspections(), tau)
        .map_err(|e| Error::Size(format!("training split: {e}")))?;
    make_windows(validation.inspections(), tau).map_err(|e| Error::Size(format!("validation split: {e}")))?;
    if config.standardize {
        model.scaling = Standardization::fit(train_set);
    }

    let l_n = train_set.positions();
    let crop_len = if config.crop == 0 || config.crop >= l_n { l_n } else { config.crop };
    let margin = if crop_len < l_n { config.crop_margin } else { 0 };
    let n = train_windows.windows.len();
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };

    let mut rng = substream(seed, SHUFFLE);
    let mut adam = AdamState::new(&model.store, config.learning_rate, config.beta1, config.beta2)?;
    let mut history = LossHistory::default();
    let mut best: Option<(f64, crate::nn::ParamStore, usize)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let jobs: Vec<Job> = chunk
                .iter()
                .map(|&i| Job {
                    window: &train_windows.windows[i],
                    crop: Crop {
                        start: if crop_len < l_n { rng.gen_range(0..=l_n - crop_len) } else { 0 },
                        len: crop_len,
                    },
                })
                .collect();
            let results = par::map(&jobs, |job| window_loss_and_grad(&model, train_set, job, margin));
            let mut total = Gradients::zeros_like(&model.store);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                total.accumulate(&g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss is {batch_loss}"),
                });
            }
            total.scale(1.0 / jobs.len() as f64);
            adam.update(&mut model.store, &total).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = dataset_loss(&model, validation)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss is {val_loss}"),
            });
        }
        history.train.push(train_loss);
        history.validation.push(val_loss);
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.store.clone(), epoch));
        }
    }

    let (_, store, best_epoch) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
