//! Mutual-information-guided late aggregation of per-channel forecasts.
//!
//! The target channel's forecast is blended with the forecasts of its Top-k
//! neighbours by normalized mutual information, after aligning each
//! neighbour to the target's training-split scale.

use serde::{Deserialize, Serialize};

use crate::data::{ChannelStats, Series};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MIConfig {
    pub n_bins: usize,
    pub top_k: usize,
    pub w_self: f64,
    pub w_neighbor: f64,
}

impl Default for MIConfig {
    fn default() -> Self {
        Self {
            n_bins: 16,
            top_k: 5,
            w_self: 0.9,
            w_neighbor: 0.02,
        }
    }
}

impl MIConfig {
    /// Fails unless `w_self + top_k·w_neighbor = 1` (to 1e-12).
    pub fn new(n_bins: usize, top_k: usize, w_self: f64, w_neighbor: f64) -> Result<Self> {
        let cfg = Self {
            n_bins,
            top_k,
            w_self,
            w_neighbor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keeps `w_self = 0.9` and splits the remaining 0.1 evenly over `top_k`.
    pub fn with_top_k(top_k: usize) -> Result<Self> {
        if top_k == 0 {
            return Self::new(16, 0, 1.0, 0.0);
        }
        Self::new(16, top_k, 0.9, 0.1 / top_k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidParam(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        if !(self.w_self >= 0.0 && self.w_neighbor >= 0.0) {
            return Err(Error::InvalidParam("blend weights must be nonnegative".into()));
        }
        let total = self.w_self + self.top_k as f64 * self.w_neighbor;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!(
                "w_self + top_k*w_neighbor = {total}, must equal 1"
            )));
        }
        Ok(())
    }
}

/// Equal-width bin index of every sample over `[min, max]`; `None` when the
/// samples are all equal.
fn bin_indices(x: &[f64], n_bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = hi - lo;
    Some(
        x.iter()
            .map(|&v| (((v - lo) / width * n_bins as f64) as usize).min(n_bins - 1))
            .collect(),
    )
}

/// Entropy in nats of a histogram. Counts are summed in sorted order so
/// that any permutation of the cells gives bit-identical results.
fn entropy_of_counts(mut counts: Vec<usize>, total: usize) -> f64 {
    counts.retain(|&c| c > 0);
    counts.sort_unstable();
    let n = total as f64;
    -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn check_samples(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("entropy input".into()));
    }
    Ok(())
}

/// Shannon entropy (nats) of an equal-width histogram over `[min, max]`.
pub fn histogram_entropy(x: &[f64], n_bins: usize) -> Result<f64> {
    check_samples(x)?;
    if n_bins < 1 {
        return Err(Error::InvalidParam("n_bins must be >= 1".into()));
    }
    Ok(match bin_indices(x, n_bins) {
        None => 0.0,
        Some(bins) => {
            let mut counts = vec![0; n_bins];
            for b in bins {
                counts[b] += 1;
            }
            entropy_of_counts(counts, x.len())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmi {
    /// `I(X;Y)/√(H(X)H(Y))`, clamped to `[0, 1]`.
    pub value: f64,
    /// One input had zero entropy; `value` is then 0 by definition.
    pub degenerate: bool,
}

/// Normalized mutual information from a joint `n_bins × n_bins` histogram.
pub fn nmi(x: &[f64], y: &[f64], n_bins: usize) -> Result<Nmi> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", x.len(), y.len())));
    }
    check_samples(x)?;
    check_samples(y)?;
    if n_bins < 2 {
        return Err(Error::InvalidParam("n_bins must be >= 2".into()));
    }
    let (Some(bx), Some(by)) = (bin_indices(x, n_bins), bin_indices(y, n_bins)) else {
        return Ok(Nmi {
            value: 0.0,
            degenerate: true,
        });
    };
    let n = x.len();
    let mut cx = vec![0; n_bins];
    let mut cy = vec![0; n_bins];
    let mut joint = vec![0; n_bins * n_bins];
    for (&i, &j) in bx.iter().zip(&by) {
        cx[i] += 1;
        cy[j] += 1;
        joint[i * n_bins + j] += 1;
    }
    let hx = entropy_of_counts(cx, n);
    let hy = entropy_of_counts(cy, n);
    let hxy = entropy_of_counts(joint, n);
    let mi = hx + hy - hxy;
    Ok(Nmi {
        value: (mi / (hx * hy).sqrt()).clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub channel: usize,
    pub nmi: f64,
}

fn zscored_train(x: &[f64], train_end: usize) -> Vec<f64> {
    let s = ChannelStats::of(&x[..train_end]);
    let std = if s.is_degenerate() { 1.0 } else { s.std };
    x[..train_end].iter().map(|v| (v - s.mean) / std).collect()
}

/// The `top_k` channels with the highest NMI to `target` on the z-scored
/// training split, best first; equal scores keep the lower channel index
/// first.
pub fn select_neighbors(series: &Series, target: usize, cfg: &MIConfig) -> Result<Vec<Neighbor>> {
    cfg.validate()?;
    if target >= series.n_channels() {
        return Err(Error::IndexOutOfRange(format!("target channel {target} of {}", series.n_channels())));
    }
    if series.n_channels() < cfg.top_k + 1 {
        return Err(Error::TooFewChannels {
            needed: cfg.top_k + 1,
            got: series.n_channels(),
        });
    }
    let tz = zscored_train(&series.channels[target], series.train_end);
    let mut scored = Vec::with_capacity(series.n_channels() - 1);
    for c in (0..series.n_channels()).filter(|&c| c != target) {
        let cz = zscored_train(&series.channels[c], series.train_end);
        scored.push(Neighbor {
            channel: c,
            nmi: nmi(&tz, &cz, cfg.n_bins)?.value,
        });
    }
    scored.sort_by(|a, b| b.nmi.total_cmp(&a.nmi).then(a.channel.cmp(&b.channel)));
    scored.truncate(cfg.top_k);
    Ok(scored)
}

/// Per-channel training-split mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub channels: Vec<Option<ChannelStats>>,
}

impl AlignmentStats {
    pub fn fit(series: &Series) -> Self {
        Self {
            channels: series
                .channels
                .iter()
                .map(|x| Some(ChannelStats::of(&x[..series.train_end])))
                .collect(),
        }
    }

    pub fn get(&self, channel: usize) -> Result<ChannelStats> {
        self.channels
            .get(channel)
            .copied()
            .flatten()
            .ok_or(Error::MissingStats(channel))
    }
}

/// `(ŷ_j − μ_j)/σ_j·σ_k + μ_k`: neighbour forecast rescaled to the target.
/// Identical statistics return the forecast unchanged.
pub fn align(forecast: &[f64], from: ChannelStats, to: ChannelStats) -> Vec<f64> {
    if from == to {
        return forecast.to_vec();
    }
    forecast.iter().map(|v| (v - from.mean) / from.std * to.std + to.mean).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blend {
    pub values: Vec<f64>,
    /// Weight actually given to the target forecast.
    pub self_weight: f64,
    /// `(channel, weight)` of every neighbour that entered the blend.
    pub neighbor_weights: Vec<(usize, f64)>,
    /// Neighbours dropped for zero training variance.
    pub dropped: Vec<usize>,
}

/// `w_self·ŷ + w_neighbor·Σ A(ŷ_j)`, evaluated as `ŷ + Σ w_neighbor·(A(ŷ_j) − ŷ)`
/// so that aligned forecasts equal to the target reproduce it exactly.
/// Zero-variance neighbours and unused neighbour slots hand their weight to
/// the target.
pub fn blend(
    target: usize,
    target_forecast: &[f64],
    neighbor_forecasts: &[(usize, Vec<f64>)],
    stats: &AlignmentStats,
    cfg: &MIConfig,
) -> Result<Blend> {
    cfg.validate()?;
    if neighbor_forecasts.len() > cfg.top_k {
        return Err(Error::InvalidParam(format!(
            "{} neighbour forecasts for top_k = {}",
            neighbor_forecasts.len(),
            cfg.top_k
        )));
    }
    let target_stats = stats.get(target)?;
    let mut values = target_forecast.to_vec();
    let mut neighbor_weights = Vec::new();
    let mut dropped = Vec::new();
    for (channel, forecast) in neighbor_forecasts {
        if forecast.len() != target_forecast.len() {
            return Err(Error::DimensionMismatch(format!(
                "neighbour {channel} forecast has {} steps, target has {}",
                forecast.len(),
                target_forecast.len()
            )));
        }
        let s = stats.get(*channel)?;
        if s.is_degenerate() {
            dropped.push(*channel);
            continue;
        }
        let aligned = align(forecast, s, target_stats);
        for ((v, a), y) in values.iter_mut().zip(&aligned).zip(target_forecast) {
            *v += cfg.w_neighbor * (a - y);
        }
        neighbor_weights.push((*channel, cfg.w_neighbor));
    }
    let self_weight = 1.0 - cfg.w_neighbor * neighbor_weights.len() as f64;
    Ok(Blend {
        values,
        self_weight,
        neighbor_weights,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub target: usize,
    pub neighbors: Vec<Neighbor>,
    pub blend: Blend,
}

/// Selects neighbours for `target` and blends their forecasts into the
/// target's. `forecasts[c]` is channel `c`'s forecast; other channels are
/// never modified.
pub fn aggregate(series: &Series, forecasts: &[Vec<f64>], target: usize, cfg: &MIConfig) -> Result<Aggregation> {
    if forecasts.len() != series.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} forecasts for {} channels",
            forecasts.len(),
            series.n_channels()
        )));
    }
    let neighbors = select_neighbors(series, target, cfg)?;
    let stats = AlignmentStats::fit(series);
    let inputs: Vec<(usize, Vec<f64>)> = neighbors.iter().map(|n| (n.channel, forecasts[n.channel].clone())).collect();
    let blend = blend(target, &forecasts[target], &inputs, &stats, cfg)?;
    Ok(Aggregation {
        target,
        neighbors,
        blend,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_weights_must_sum_to_one() {
        assert!(MIConfig::default().validate().is_ok());
        assert!(MIConfig::new(16, 5, 0.9, 0.03).is_err());
        assert!(MIConfig::new(1, 5, 0.9, 0.02).is_err());
        let c = MIConfig::with_top_k(3).unwrap();
        assert!((c.w_self + 3.0 * c.w_neighbor - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let uniform: Vec<f64> = (0..64).map(|i| (i % 8) as f64).collect();
        assert!((histogram_entropy(&uniform, 8).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert_eq!(histogram_entropy(&[3.0; 10], 8).unwrap(), 0.0);
        // counts 2,1,1 over three bins
        let h = histogram_entropy(&[0.0, 0.1, 1.5, 3.0], 3).unwrap();
        assert!((h - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((h - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn nmi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(nmi(&x, &x, 16).unwrap().value, 1.0);

        let a: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!(nmi(&a, &b, 8).unwrap().value < 0.05);

        // 2 bins: x bins (0,0,1,1), y bins (0,1,1,1)
        let x = [0.0, 0.0, 1.0, 1.0];
        let y = [0.0, 1.0, 1.0, 1.0];
        let hx = 2f64.ln();
        let hy = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        // joint cells (0,0), (0,1), (1,1)x2
        let hxy = -(2.0 * 0.25 * 0.25f64.ln() + 0.5 * 0.5f64.ln());
        let expected = (hx + hy - hxy) / (hx * hy).sqrt();
        assert!((nmi(&x, &y, 2).unwrap().value - expected).abs() < 1e-12);

        let c = nmi(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], 4).unwrap();
        assert_eq!(c, Nmi { value: 0.0, degenerate: true });
    }

    #[test]
    fn nmi_bounded_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..200);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v * rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)).collect();
            let bins = rng.random_range(2..20);
            let a = nmi(&x, &y, bins).unwrap().value;
            let b = nmi(&y, &x, bins).unwrap().value;
            assert!((0.0..=1.0).contains(&a));
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn series(channels: Vec<Vec<f64>>) -> Series {
        let names = (0..channels.len()).map(|i| format!("c{i}")).collect();
        Series::new(names, channels, 1.0).unwrap()
    }

    #[test]
    fn neighbor_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2000;
        let target: Vec<f64> = (0..n).map(|t| (t as f64 * 0.05).sin() + 0.1 * rng.random::<f64>()).collect();
        let noisy: Vec<f64> = target.iter().map(|v| v + 0.05 * rng.random::<f64>()).collect();
        let mut channels = vec![target.clone()];
        for _ in 0..4 {
            channels.push((0..n).map(|_| rng.random::<f64>()).collect());
        }
        channels.push(noisy);
        channels.push(target.clone());
        let s = series(channels);
        let picked = select_neighbors(&s, 0, &MIConfig::default()).unwrap();
        assert_eq!(picked[0].channel, 6);
        assert_eq!(picked[0].nmi, 1.0);
        assert_eq!(picked[1].channel, 5);

        // six channels, top 5: every other channel in NMI order
        let s6 = s.select(&[0, 1, 2, 3, 4, 5]).unwrap();
        let picked = select_neighbors(&s6, 0, &MIConfig::default()).unwrap();
        let mut want: Vec<(usize, f64)> = (1..6)
            .map(|c| {
                let a = zscored_train(&s6.channels[0], s6.train_end);
                let b = zscored_train(&s6.channels[c], s6.train_end);
                (c, nmi(&a, &b, 16).unwrap().value)
            })
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1));
        assert_eq!(picked.iter().map(|n| n.channel).collect::<Vec<_>>(), want.iter().map(|w| w.0).collect::<Vec<_>>());

        assert!(matches!(
            select_neighbors(&s.select(&[0, 1, 2]).unwrap(), 0, &MIConfig::default()),
            Err(Error::TooFewChannels { needed: 6, got: 3 })
        ));
    }

    #[test]
    fn selection_ignores_channel_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let channels: Vec<Vec<f64>> = (0..7)
            .map(|c| (0..500).map(|t| (t as f64 * 0.01 * (c + 1) as f64).sin() + rng.random::<f64>()).collect())
            .collect();
        let s = series(channels);
        let names = |s: &Series, picked: &[Neighbor]| picked.iter().map(|n| s.names[n.channel].clone()).collect::<Vec<_>>();
        let a = select_neighbors(&s, 0, &MIConfig::default()).unwrap();
        let perm = [3, 6, 0, 1, 5, 2, 4];
        let p = s.select(&perm).unwrap();
        let b = select_neighbors(&p, 2, &MIConfig::default()).unwrap();
        assert_eq!(names(&s, &a), names(&p, &b));
    }

    fn stats_for(n: usize, rng: &mut ChaCha8Rng) -> AlignmentStats {
        AlignmentStats {
            channels: (0..n)
                .map(|_| {
                    Some(ChannelStats {
                        mean: rng.random_range(-5.0..5.0),
                        std: rng.random_range(0.5..3.0),
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn blend_examples() {
        let cfg = MIConfig::default();
        let same = ChannelStats { mean: 1.0, std: 2.0 };
        let stats = AlignmentStats { channels: vec![Some(same); 6] };
        let y = vec![0.3, -1.7, 2.2];
        let neighbors: Vec<(usize, Vec<f64>)> = (1..6).map(|c| (c, y.clone())).collect();
        assert_eq!(blend(0, &y, &neighbors, &stats, &cfg).unwrap().values, y);

        let zeros: Vec<(usize, Vec<f64>)> = (1..6).map(|c| (c, vec![0.0, 0.0])).collect();
        let out = blend(0, &[1.0, 1.0], &zeros, &stats, &cfg).unwrap();
        for v in out.values {
            assert!((v - 0.9).abs() < 1e-15);
        }
        assert!((out.self_weight - 0.9).abs() < 1e-15);
    }

    #[test]
    fn blend_matches_step_by_step_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MIConfig::default();
        for _ in 0..50 {
            let stats = stats_for(6, &mut rng);
            let h = 7;
            let y: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let neighbors: Vec<(usize, Vec<f64>)> =
                (1..6).map(|c| (c, (0..h).map(|_| rng.random_range(-3.0..3.0)).collect())).collect();
            let out = blend(0, &y, &neighbors, &stats, &cfg).unwrap();
            let t = stats.channels[0].unwrap();
            for i in 0..h {
                let mut want = 0.9 * y[i];
                for (c, f) in &neighbors {
                    let s = stats.channels[*c].unwrap();
                    want += 0.02 * ((f[i] - s.mean) / s.std * t.std + t.mean);
                }
                assert!((out.values[i] - want).abs() < 1e-12);
            }
            let total: f64 = out.self_weight + out.neighbor_weights.iter().map(|w| w.1).sum::<f64>();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_neighbor_weight_returns_to_target() {
        let cfg = MIConfig::default();
        let mut stats = AlignmentStats {
            channels: vec![Some(ChannelStats { mean: 0.0, std: 1.0 }); 6],
        };
        stats.channels[3] = Some(ChannelStats { mean: 4.0, std: 0.0 });
        let neighbors: Vec<(usize, Vec<f64>)> = (1..6).map(|c| (c, vec![0.0])).collect();
        let out = blend(0, &[1.0], &neighbors, &stats, &cfg).unwrap();
        assert_eq!(out.dropped, vec![3]);
        assert!((out.self_weight - 0.92).abs() < 1e-15);
        assert!((out.values[0] - 0.92).abs() < 1e-15);
        stats.channels[2] = None;
        assert!(matches!(blend(0, &[1.0], &neighbors, &stats, &cfg), Err(Error::MissingStats(2))));
    }

    #[test]
    fn blend_is_affine_in_target_with_zero_contributions() {
        let cfg = MIConfig::default();
        let stats = AlignmentStats {
            channels: vec![Some(ChannelStats { mean: 0.0, std: 1.0 }); 6],
        };
        let zeros: Vec<(usize, Vec<f64>)> = (1..6).map(|c| (c, vec![0.0; 3])).collect();
        let y = [0.5, -2.0, 7.25];
        let base = blend(0, &y, &zeros, &stats, &cfg).unwrap().values;
        let scaled: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let out = blend(0, &scaled, &zeros, &stats, &cfg).unwrap().values;
        for i in 0..3 {
            assert!((base[i] - 0.9 * y[i]).abs() < 1e-12);
            assert!((out[i] - 3.0 * base[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_touches_only_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let channels: Vec<Vec<f64>> = (0..6).map(|_| (0..200).map(|_| rng.random::<f64>()).collect()).collect();
        let s = series(channels);
        let forecasts: Vec<Vec<f64>> = (0..6).map(|c| vec![c as f64; 4]).collect();
        let agg = aggregate(&s, &forecasts, 2, &MIConfig::default()).unwrap();
        assert_eq!(agg.target, 2);
        assert_eq!(agg.neighbors.len(), 5);
        assert!(agg.neighbors.iter().all(|n| n.channel != 2));
    }
}
