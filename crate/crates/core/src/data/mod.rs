//! Multichannel series, synthetic generators, CSV ingestion, normalization
//! and sliding windows.

mod csv;
mod generators;
mod normalize;
mod windows;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_csv, read_csv, save_csv, write_csv, CsvOptions, NanPolicy};
pub use generators::{
    gen_lorenz, gen_periodic, gen_random_walk, gen_sparse_pulse, generate, lorenz_rk4_step, GeneratorKind,
    LorenzParams, PeriodicParams, RandomWalkParams, SinusoidComponent, SparsePulseParams,
};
pub use normalize::{zscore_apply, zscore_fit, zscore_inverse, ChannelStats, ZScoreStats, ZeroVariancePolicy};
pub use windows::{make_windows, split_windows, Split, Window, WindowSpec};

/// Train and validation fractions; the test split takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val >= 0.0 && self.train + self.val <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "split fractions train={} val={} must be positive and sum to at most 1",
                self.train, self.val
            )));
        }
        Ok(())
    }

    /// `(train_end, val_end)` for a series of `len` samples, kept strictly
    /// increasing and inside the series.
    pub fn boundaries(&self, len: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if len < 2 {
            return Err(Error::SeriesTooShort { needed: 2, got: len });
        }
        let train_end = ((self.train * len as f64).round() as usize).clamp(1, len - 1);
        let val_end = (((self.train + self.val) * len as f64).round() as usize).clamp(train_end + 1, len);
        Ok((train_end, val_end))
    }
}

/// Named, equal-length channels with train/validation/test boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
    pub dt: f64,
    /// Train split is `[0, train_end)`.
    pub train_end: usize,
    /// Validation split is `[train_end, val_end)`, test is `[val_end, len)`.
    pub val_end: usize,
}

impl Series {
    /// Builds a series with the default 70/10/20 split.
    pub fn new(names: Vec<String>, channels: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        Self::with_fractions(names, channels, dt, SplitFractions::default())
    }

    pub fn with_fractions(
        names: Vec<String>,
        channels: Vec<Vec<f64>>,
        dt: f64,
        fractions: SplitFractions,
    ) -> Result<Self> {
        if names.len() != channels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} channels",
                names.len(),
                channels.len()
            )));
        }
        if channels.is_empty() {
            return Err(Error::InvalidParam("series needs at least one channel".into()));
        }
        let len = channels[0].len();
        if let Some(i) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::DimensionMismatch(format!(
                "channel {} has {} samples, expected {len}",
                names[i],
                channels[i].len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
        }
        let (train_end, val_end) = fractions.boundaries(len)?;
        Ok(Self {
            names,
            channels,
            dt,
            train_end,
            val_end,
        })
    }

    /// Single unnamed-style channel.
    pub fn univariate(name: &str, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![name.to_string()], vec![values], 1.0)
    }

    pub fn set_splits(&mut self, train_end: usize, val_end: usize) -> Result<()> {
        if !(0 < train_end && train_end < val_end && val_end <= self.len()) {
            return Err(Error::InvalidParam(format!(
                "splits must satisfy 0 < {train_end} < {val_end} <= {}",
                self.len()
            )));
        }
        self.train_end = train_end;
        self.val_end = val_end;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Resolves a channel by name, falling back to a 0-based index.
    pub fn resolve_channel(&self, key: &str) -> Result<usize> {
        if let Some(i) = self.channel_index(key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(i) if i < self.n_channels() => Ok(i),
            _ => Err(Error::IndexOutOfRange(format!(
                "no channel named {key:?} (have {})",
                self.names.join(", ")
            ))),
        }
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.len(),
            Split::All => 0..self.len(),
        }
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Result<Series> {
        let mut names = Vec::with_capacity(channels.len());
        let mut data = Vec::with_capacity(channels.len());
        for &c in channels {
            if c >= self.n_channels() {
                return Err(Error::IndexOutOfRange(format!("channel {c} of {}", self.n_channels())));
            }
            names.push(self.names[c].clone());
            data.push(self.channels[c].clone());
        }
        Ok(Series {
            names,
            channels: data,
            dt: self.dt,
            train_end: self.train_end,
            val_end: self.val_end,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_boundaries() {
        let s = Series::univariate("x", vec![0.0; 1000]).unwrap();
        assert_eq!((s.train_end, s.val_end), (700, 800));
        assert_eq!(s.split_range(Split::Test), 800..1000);
        let tiny = Series::univariate("x", vec![0.0; 2]).unwrap();
        assert_eq!((tiny.train_end, tiny.val_end), (1, 2));
        assert!(Series::univariate("x", vec![0.0]).is_err());
    }

    #[test]
    fn rejects_ragged_channels() {
        let r = Series::new(vec!["a".into(), "b".into()], vec![vec![1.0; 4], vec![1.0; 3]], 1.0);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn resolve_by_name_or_index() {
        let s = Series::new(vec!["a".into(), "b".into()], vec![vec![1.0; 4], vec![2.0; 4]], 1.0).unwrap();
        assert_eq!(s.resolve_channel("b").unwrap(), 1);
        assert_eq!(s.resolve_channel("0").unwrap(), 0);
        assert!(s.resolve_channel("c").is_err());
        let mut s = s;
        assert!(s.set_splits(2, 2).is_err());
        s.set_splits(1, 3).unwrap();
    }
}
