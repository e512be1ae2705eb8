use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            lookback: 512,
            horizon: 96,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::InvalidParam(
                "lookback, horizon and stride must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Window starts inside `[begin, end)` with the whole span in range.
    fn starts(&self, begin: usize, end: usize) -> impl Iterator<Item = usize> {
        let last = end.checked_sub(self.span()).filter(|&l| l >= begin);
        let stride = self.stride;
        last.into_iter().flat_map(move |l| (begin..=l).step_by(stride))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

/// One `(input, target)` pair: input `[start, start+lookback)`, target the
/// following `horizon` samples of the same channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub channel: usize,
    pub start: usize,
}

impl Window {
    pub fn input<'a>(&self, series: &'a Series, spec: &WindowSpec) -> &'a [f64] {
        &series.channels[self.channel][self.start..self.start + spec.lookback]
    }

    pub fn target<'a>(&self, series: &'a Series, spec: &WindowSpec) -> &'a [f64] {
        let t0 = self.start + spec.lookback;
        &series.channels[self.channel][t0..t0 + spec.horizon]
    }
}

/// Every window over the full series, channel by channel.
pub fn make_windows(series: &Series, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    if series.len() < spec.span() {
        return Err(Error::SeriesTooShort {
            needed: spec.span(),
            got: series.len(),
        });
    }
    Ok(split_windows(series, spec, Split::All))
}

/// Windows lying entirely inside one split, so no window mixes samples from
/// two splits. Empty when the split is shorter than `lookback + horizon`.
pub fn split_windows(series: &Series, spec: &WindowSpec, split: Split) -> Vec<Window> {
    let range = series.split_range(split);
    (0..series.n_channels())
        .flat_map(|channel| spec.starts(range.start, range.end).map(move |start| Window { channel, start }))
        .collect()
}
