use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVariancePolicy {
    /// Fail on the first constant channel.
    #[default]
    Error,
    /// Leave constant channels unscaled (mean 0, std 1) and flag them.
    PassThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    /// Spread indistinguishable from round-off.
    pub fn is_degenerate(&self) -> bool {
        !(self.std > 1e-12 * self.mean.abs().max(1.0))
    }
}

/// Per-channel statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub channels: Vec<ChannelStats>,
    /// Channels whose training split has zero variance.
    pub flagged: Vec<usize>,
}

pub fn zscore_fit(series: &Series, policy: ZeroVariancePolicy) -> Result<ZScoreStats> {
    let mut channels = Vec::with_capacity(series.n_channels());
    let mut flagged = Vec::new();
    for (c, x) in series.channels.iter().enumerate() {
        let stats = ChannelStats::of(&x[..series.train_end]);
        if stats.is_degenerate() {
            if policy == ZeroVariancePolicy::Error {
                return Err(Error::ZeroVariance {
                    channel: series.names[c].clone(),
                });
            }
            flagged.push(c);
            channels.push(ChannelStats { mean: 0.0, std: 1.0 });
        } else {
            channels.push(stats);
        }
    }
    Ok(ZScoreStats { channels, flagged })
}

fn map_channels(series: &Series, stats: &ZScoreStats, f: impl Fn(f64, &ChannelStats) -> f64) -> Result<Series> {
    if stats.channels.len() != series.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} channel statistics for {} channels",
            stats.channels.len(),
            series.n_channels()
        )));
    }
    let mut out = series.clone();
    for (x, s) in out.channels.iter_mut().zip(&stats.channels) {
        for v in x.iter_mut() {
            *v = f(*v, s);
        }
    }
    Ok(out)
}

/// `(x − μ)/σ` on every split, with training-split statistics.
pub fn zscore_apply(series: &Series, stats: &ZScoreStats) -> Result<Series> {
    map_channels(series, stats, |v, s| (v - s.mean) / s.std)
}

pub fn zscore_inverse(series: &Series, stats: &ZScoreStats) -> Result<Series> {
    map_channels(series, stats, |v, s| v * s.std + s.mean)
}
