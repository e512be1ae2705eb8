//! MSE training with Adam and per-epoch cosine annealing, head-only
//! fine-tuning and windowed evaluation.

mod optim;
mod report;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_windows, Series, Split, Window, WindowSpec};
use crate::encoder::{EncoderModel, ParamGroup, Params};
use crate::error::{Error, Result};

pub use optim::{adam_step, cosine_lr, mae, mse_loss, AdamParams, AdamState};
pub use report::{ChannelMetrics, EpochRecord, EvalReport, Metrics, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub anneal: bool,
    pub freeze_encoder: bool,
    pub seed: u64,
    /// Fraction of training windows used; 0 performs no updates.
    pub data_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Step between consecutive training windows.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_min: 0.0,
            batch_size: 64,
            epochs: 100,
            anneal: true,
            freeze_encoder: false,
            seed: 0,
            data_fraction: 1.0,
            patience: 20,
            window_stride: 1,
        }
    }
}

impl TrainConfig {
    /// Pretraining with learning rate 1e-3.
    pub fn pretrain() -> Self {
        Self::default()
    }

    /// Pretraining with the smaller learning rate 1e-4.
    pub fn pretrain_low_lr() -> Self {
        Self {
            lr: 1e-4,
            ..Self::default()
        }
    }

    /// Head-only fine-tuning at 5e-5.
    pub fn finetune() -> Self {
        Self {
            lr: 5e-5,
            freeze_encoder: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::InvalidParam(format!(
                "need 0 <= lr_min <= lr and lr > 0 (lr={}, lr_min={})",
                self.lr, self.lr_min
            )));
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::InvalidParam("batch_size and window_stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.data_fraction) {
            return Err(Error::InvalidParam(format!("data_fraction {} not in [0, 1]", self.data_fraction)));
        }
        Ok(())
    }
}

/// A window together with the series it was cut from.
#[derive(Debug, Clone, Copy)]
struct Sample {
    series: usize,
    window: Window,
}

struct Samples<'a> {
    corpus: &'a [Series],
    spec: WindowSpec,
    items: Vec<Sample>,
    /// Frozen-encoder head inputs, one per item.
    features: Option<Vec<DMatrix<f64>>>,
}

impl<'a> Samples<'a> {
    fn collect(corpus: &'a [Series], spec: WindowSpec, split: Split) -> Self {
        let items = corpus
            .iter()
            .enumerate()
            .flat_map(|(s, series)| {
                split_windows(series, &spec, split)
                    .into_iter()
                    .map(move |window| Sample { series: s, window })
            })
            .collect();
        Self {
            corpus,
            spec,
            items,
            features: None,
        }
    }

    fn input(&self, i: usize) -> &[f64] {
        let s = self.items[i];
        s.window.input(&self.corpus[s.series], &self.spec)
    }

    fn target(&self, i: usize) -> &[f64] {
        let s = self.items[i];
        s.window.target(&self.corpus[s.series], &self.spec)
    }

    fn cache_features(&mut self, model: &EncoderModel) -> Result<()> {
        let feats = (0..self.items.len())
            .map(|i| Ok(model.latent(self.input(i), false)?.flatten()))
            .collect::<Result<Vec<_>>>()?;
        self.features = Some(feats);
        Ok(())
    }

    fn predict(&self, model: &EncoderModel, i: usize) -> Result<Vec<f64>> {
        match &self.features {
            Some(f) => model.head_forward(&f[i]),
            None => model.forecast(self.input(i)),
        }
    }

    /// Evaluation-mode MSE and MAE averaged over windows.
    fn metrics(&self, model: &EncoderModel) -> Result<Option<Metrics>> {
        if self.items.is_empty() {
            return Ok(None);
        }
        let (mut mse, mut mae_sum) = (0.0, 0.0);
        for i in 0..self.items.len() {
            let y = self.predict(model, i)?;
            let t = self.target(i);
            mse += mse_loss(&y, t)?.0;
            mae_sum += mae(&y, t);
        }
        let n = self.items.len() as f64;
        Ok(Some(Metrics {
            mse: mse / n,
            mae: mae_sum / n,
        }))
    }
}

fn subsample(items: &mut Vec<Sample>, fraction: f64, rng: &mut ChaCha8Rng) {
    if fraction >= 1.0 {
        return;
    }
    let keep = if fraction <= 0.0 {
        0
    } else {
        ((fraction * items.len() as f64).round() as usize).max(1)
    };
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    idx.truncate(keep);
    idx.sort_unstable();
    *items = idx.into_iter().map(|i| items[i]).collect();
}

fn as_divergence(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { epoch, step },
        other => other,
    }
}

/// Trains `model` on the training splits of `corpus`, keeping the
/// parameters with the lowest validation MSE (training loss when no
/// validation windows exist). Series must already be normalized.
pub fn train(model: &mut EncoderModel, corpus: &[Series], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = WindowSpec {
        lookback: model.lookback(),
        horizon: model.horizon(),
        stride: cfg.window_stride,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    let mut train_set = Samples::collect(corpus, spec, Split::Train);
    if train_set.items.is_empty() {
        return Err(Error::SeriesTooShort {
            needed: spec.span(),
            got: corpus.iter().map(|s| s.train_end).max().unwrap_or(0),
        });
    }
    subsample(&mut train_set.items, cfg.data_fraction, &mut rng);
    let mut val_set = Samples::collect(corpus, spec, Split::Val);
    let mut test_set = Samples::collect(corpus, spec, Split::Test);
    let encoder_hash_before = model.encoder_hash();
    if cfg.freeze_encoder {
        // the frozen encoder is deterministic, so its outputs can be cached
        train_set.cache_features(model)?;
        val_set.cache_features(model)?;
        test_set.cache_features(model)?;
    }

    let at_start = |e| as_divergence(e, 0, 0);
    let initial_train = train_set.metrics(model).map_err(at_start)?;
    let initial = EpochRecord {
        epoch: 0,
        lr: 0.0,
        train: initial_train.unwrap_or(Metrics { mse: f64::NAN, mae: f64::NAN }),
        val: val_set.metrics(model).map_err(at_start)?,
    };
    if !initial.train.mse.is_finite() && !train_set.items.is_empty() {
        return Err(Error::Divergence { epoch: 0, step: 0 });
    }

    let active: Vec<bool> = model
        .params
        .tensors()
        .iter()
        .map(|(_, g, _)| !cfg.freeze_encoder || *g == ParamGroup::Head)
        .collect();
    let mut adam = AdamState::new(model.params.tensors().into_iter().map(|(_, _, t)| t));
    let hp = AdamParams::default();

    let score = |r: &EpochRecord| r.val.map_or(r.train.mse, |v| v.mse);
    let mut best_score = score(&initial);
    let mut best_epoch = 0;
    let mut best_params: Params = model.params.clone();
    let mut since_best = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    if !train_set.items.is_empty() {
        let mut order: Vec<usize> = (0..train_set.items.len()).collect();
        for epoch in 1..=cfg.epochs {
            let lr = if cfg.anneal {
                cosine_lr(epoch - 1, cfg.epochs, cfg.lr, cfg.lr_min)
            } else {
                cfg.lr
            };
            order.shuffle(&mut rng);
            let (mut mse_sum, mut mae_sum) = (0.0, 0.0);
            for batch in order.chunks(cfg.batch_size) {
                step += 1;
                model.zero_grad();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let target = train_set.target(i);
                    let (loss, y) = if let Some(feats) = &train_set.features {
                        let y = model.head_forward(&feats[i]).map_err(|e| as_divergence(e, epoch, step))?;
                        let (loss, grad) = mse_loss(&y, target)?;
                        let g: Vec<f64> = grad.iter().map(|g| g * scale).collect();
                        model.backward_head(&feats[i], &g)?;
                        (loss, y)
                    } else {
                        let drop = (model.config.encoder.dropout > 0.0).then_some(&mut dropout_rng);
                        let (y, cache) = model
                            .forward_cached(train_set.input(i), drop)
                            .map_err(|e| as_divergence(e, epoch, step))?;
                        let (loss, grad) = mse_loss(&y, target)?;
                        let g: Vec<f64> = grad.iter().map(|g| g * scale).collect();
                        model.backward_cached(&cache, &g)?;
                        (loss, y)
                    };
                    if !loss.is_finite() {
                        return Err(Error::Divergence { epoch, step });
                    }
                    mse_sum += loss;
                    mae_sum += mae(&y, target);
                }
                let grads: Vec<&DMatrix<f64>> = model.grads.tensors().into_iter().map(|(_, _, t)| t).collect();
                let mut params: Vec<&mut DMatrix<f64>> =
                    model.params.tensors_mut().into_iter().map(|(_, _, t)| t).collect();
                adam_step(&mut params, &grads, &active, &mut adam, lr, &hp)?;
                if !model.params.all_finite() {
                    return Err(Error::Divergence { epoch, step });
                }
            }
            let n = train_set.items.len() as f64;
            let record = EpochRecord {
                epoch,
                lr,
                train: Metrics {
                    mse: mse_sum / n,
                    mae: mae_sum / n,
                },
                val: val_set.metrics(model).map_err(|e| as_divergence(e, epoch, step))?,
            };
            let s = score(&record);
            epochs.push(record);
            if s < best_score {
                best_score = s;
                best_epoch = epoch;
                best_params = model.params.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    // with no improving epoch this restores the starting parameters
    model.params = best_params;
    model.zero_grad();
    debug_assert!(!cfg.freeze_encoder || model.encoder_hash() == encoder_hash_before);

    if cfg.freeze_encoder {
        test_set.cache_features(model)?;
    }
    Ok(TrainReport {
        initial,
        epochs,
        best_epoch,
        test: test_set.metrics(model)?,
        train_windows: train_set.items.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        param_count: model.param_count(),
        trainable_count: if cfg.freeze_encoder {
            model.params.count_in(ParamGroup::Head)
        } else {
            model.param_count()
        },
        config: *cfg,
        model: model.config,
    })
}

/// Head-only training: every encoder parameter is left bit-identical.
pub fn finetune(model: &mut EncoderModel, target: &Series, cfg: &TrainConfig) -> Result<TrainReport> {
    let cfg = TrainConfig {
        freeze_encoder: true,
        ..*cfg
    };
    train(model, std::slice::from_ref(target), &cfg)
}

/// Per-channel and channel-averaged MSE/MAE over every test window of an
/// already normalized series.
pub fn evaluate(model: &EncoderModel, series: &Series, stride: usize) -> Result<EvalReport> {
    let spec = WindowSpec {
        lookback: model.lookback(),
        horizon: model.horizon(),
        stride,
    };
    evaluate_fn(series, &spec, |_, input| model.forecast(input))
}

/// [`evaluate`] with an arbitrary predictor `(channel, input) → forecast`.
pub fn evaluate_fn(
    series: &Series,
    spec: &WindowSpec,
    mut predict: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<EvalReport> {
    spec.validate()?;
    let windows = split_windows(series, spec, Split::Test);
    if windows.is_empty() {
        return Err(Error::NoTestWindows(format!(
            "test split has {} samples, a window needs {}",
            series.len() - series.val_end,
            spec.span()
        )));
    }
    let mut per_channel: Vec<ChannelMetrics> = series
        .names
        .iter()
        .map(|name| ChannelMetrics {
            name: name.clone(),
            windows: 0,
            metrics: Metrics { mse: 0.0, mae: 0.0 },
        })
        .collect();
    for w in &windows {
        let y = predict(w.channel, w.input(series, spec))?;
        let t = w.target(series, spec);
        let c = &mut per_channel[w.channel];
        c.metrics.mse += mse_loss(&y, t)?.0;
        c.metrics.mae += mae(&y, t);
        c.windows += 1;
    }
    for c in &mut per_channel {
        c.metrics.mse /= c.windows as f64;
        c.metrics.mae /= c.windows as f64;
    }
    let k = per_channel.len() as f64;
    let mean = Metrics {
        mse: per_channel.iter().map(|c| c.metrics.mse).sum::<f64>() / k,
        mae: per_channel.iter().map(|c| c.metrics.mae).sum::<f64>() / k,
    };
    Ok(EvalReport { per_channel, mean })
}
