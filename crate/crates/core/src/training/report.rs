use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::TrainConfig;
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 0 is the state before any update.
    pub epoch: usize,
    pub lr: f64,
    pub train: Metrics,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial: EpochRecord,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = the starting parameters).
    pub best_epoch: usize,
    pub test: Option<Metrics>,
    pub train_windows: usize,
    pub wall_clock_secs: f64,
    pub param_count: usize,
    pub trainable_count: usize,
    pub config: TrainConfig,
    pub model: ModelConfig,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

impl TrainReport {
    pub fn final_train_mse(&self) -> f64 {
        self.epochs.last().unwrap_or(&self.initial).train.mse
    }

    /// One row per epoch, starting with the initial record. Wall-clock time
    /// is left out so that the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_mse,train_mae,val_mse,val_mae\n");
        for r in std::iter::once(&self.initial).chain(&self.epochs) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.lr),
                fmt_f64(r.train.mse),
                fmt_f64(r.train.mae),
                opt(r.val.map(|m| m.mse)),
                opt(r.val.map(|m| m.mae)),
            );
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self, include_wall_clock: bool) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "config: lr={} lr_min={} batch_size={} epochs={} anneal={} freeze_encoder={} seed={} data_fraction={} patience={} window_stride={}",
            c.lr, c.lr_min, c.batch_size, c.epochs, c.anneal, c.freeze_encoder, c.seed, c.data_fraction, c.patience, c.window_stride
        );
        let m = &self.model;
        let e = &m.encoder;
        let _ = writeln!(
            s,
            "model: lookback={} horizon={} m={} tau={} p={} q={} d_model={} layers={} heads={} d_ff={} head={:?}",
            m.lookback, e.horizon, m.delay.m, m.delay.tau, m.delay.p, m.delay.q, e.d_model, e.n_layers, e.n_heads, e.d_ff, e.head
        );
        let _ = writeln!(
            s,
            "parameters: {} ({} trainable), training windows: {}",
            self.param_count, self.trainable_count, self.train_windows
        );
        let _ = writeln!(s, "initial train mse: {}", fmt_f64(self.initial.train.mse));
        if let Some(v) = self.initial.val {
            let _ = writeln!(s, "initial val mse: {}", fmt_f64(v.mse));
        }
        let _ = writeln!(s, "epochs run: {}, best epoch: {}", self.epochs.len(), self.best_epoch);
        if let Some(last) = self.epochs.last() {
            let _ = writeln!(s, "final train mse: {} mae: {}", fmt_f64(last.train.mse), fmt_f64(last.train.mae));
        }
        match self.test {
            Some(t) => {
                let _ = writeln!(s, "test mse: {} mae: {}", fmt_f64(t.mse), fmt_f64(t.mae));
            }
            None => s.push_str("test: no windows\n"),
        }
        if include_wall_clock {
            let _ = writeln!(s, "wall clock: {:.3} s", self.wall_clock_secs);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub name: String,
    pub windows: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_channel: Vec<ChannelMetrics>,
    /// Unweighted mean over channels.
    pub mean: Metrics,
}

impl EvalReport {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["channel", "windows", "mse", "mae"])?;
        for c in &self.per_channel {
            w.write_record([c.name.clone(), c.windows.to_string(), fmt_f64(c.metrics.mse), fmt_f64(c.metrics.mae)])?;
        }
        let total: usize = self.per_channel.iter().map(|c| c.windows).sum();
        w.write_record(["mean".to_string(), total.to_string(), fmt_f64(self.mean.mse), fmt_f64(self.mean.mae)])?;
        w.flush()
    }
}
