//! Patch-token encoder: token projection, average pooling, sinusoidal
//! positions, a post-norm self-attention stack and the channel-shared
//! forecast head, with exact reverse-mode gradients.

mod attention;
mod checkpoint;
mod model;
pub(crate) mod ops;
mod params;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding::{DelayConfig, PatchGrid};
use crate::error::{Error, Result};

pub use attention::{high_attention_tokens, HighAttention};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{encoder_forward, forecast_head, EncoderModel, ForwardCache, LatentSequence};
pub use params::{HeadParams, LayerParams, Linear, NormParams, ParamGroup, ParamShape, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `ŷ = flatten(X)·W + b`.
    #[default]
    Affine,
    /// One hidden GELU layer before the output projection.
    MlpGelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub horizon: usize,
    pub dropout: f64,
    pub seed: u64,
    pub head: HeadKind,
    /// Hidden width of the `mlp_gelu` head.
    pub head_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            pool_kernel: 1,
            pool_stride: 1,
            horizon: 96,
            dropout: 0.0,
            seed: 0,
            head: HeadKind::Affine,
            head_hidden: 128,
        }
    }
}

impl EncoderConfig {
    /// Six layers, eight heads, width 512, pooling 30.
    pub fn ude_small() -> Self {
        Self {
            d_model: 512,
            n_layers: 6,
            n_heads: 8,
            d_ff: 2048,
            pool_kernel: 30,
            pool_stride: 30,
            horizon: 96,
            dropout: 0.1,
            seed: 0,
            head: HeadKind::Affine,
            head_hidden: 2048,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidParam(format!(
                "d_model={} must be a positive multiple of n_heads={}",
                self.d_model, self.n_heads
            )));
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return Err(Error::InvalidParam("pool kernel and stride must be >= 1".into()));
        }
        if self.horizon == 0 || self.d_ff == 0 {
            return Err(Error::InvalidParam("horizon and d_ff must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.head == HeadKind::MlpGelu && self.head_hidden == 0 {
            return Err(Error::InvalidParam("head_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to turn a raw lookback window into a forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub delay: DelayConfig,
    pub lookback: usize,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.delay.validate()?;
        self.encoder.validate()?;
        if self.lookback < self.delay.span() {
            return Err(Error::InvalidParam(format!(
                "lookback {} is shorter than one delay vector ({} samples)",
                self.lookback,
                self.delay.span()
            )));
        }
        let patches = self.delay.patch_count(self.lookback)?;
        if patches == 0 {
            return Err(Error::InvalidParam("configuration yields zero patches".into()));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        self.delay.patch_count(self.lookback).unwrap_or(0)
    }

    /// Token count after pooling.
    pub fn n_tokens(&self) -> usize {
        pooled_len(self.patch_count(), self.encoder.pool_kernel, self.encoder.pool_stride)
    }

    /// Patches (0-based, row-major) averaged into pooled token `token`.
    pub fn token_patches(&self, token: usize) -> Option<std::ops::Range<usize>> {
        let e = &self.encoder;
        pool_windows(self.patch_count(), e.pool_kernel, e.pool_stride)
            .get(token)
            .map(|&(a, b)| a..b)
    }

    pub fn param_shape(&self) -> ParamShape {
        ParamShape {
            patch_width: self.delay.p * self.delay.q,
            d_model: self.encoder.d_model,
            n_layers: self.encoder.n_layers,
            d_ff: self.encoder.d_ff,
            head_input: self.n_tokens() * self.encoder.d_model,
            head_hidden: self.encoder.head_hidden,
            horizon: self.encoder.horizon,
            head: self.encoder.head,
        }
    }
}

/// Token matrix `patch_count × d_model`, row `j` = `W_e·vec(P_j) + b_e`.
pub fn embed_tokens(grid: &PatchGrid, model: &EncoderModel) -> Result<DMatrix<f64>> {
    let width = grid.p * grid.q;
    let proj = &model.params.token_proj;
    if width != proj.fan_in() {
        return Err(Error::DimensionMismatch(format!(
            "patches are {}x{} ({width} values) but the token projection expects {}",
            grid.p,
            grid.q,
            proj.fan_in()
        )));
    }
    Ok(proj.forward(&grid.flattened()))
}

/// Fixed sinusoidal table: `PE[pos][2i] = sin(pos/10000^(2i/d))`,
/// `PE[pos][2i+1] = cos(pos/10000^(2i/d))`.
pub fn positional_encoding(n_tokens: usize, d_model: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_tokens, d_model, |pos, c| {
        let pair = (c / 2) * 2;
        let angle = pos as f64 / 10000f64.powf(pair as f64 / d_model as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub(crate) fn pooled_len(n: usize, kernel: usize, stride: usize) -> usize {
    if n >= kernel {
        (n - kernel) / stride + 1
    } else {
        1
    }
}

/// Half-open input row ranges averaged into each pooled row.
pub(crate) fn pool_windows(n: usize, kernel: usize, stride: usize) -> Vec<(usize, usize)> {
    if n < kernel {
        return vec![(0, n)];
    }
    (0..pooled_len(n, kernel, stride))
        .map(|w| (w * stride, (w * stride + kernel).min(n)))
        .collect()
}

/// 1-D average pooling over the token axis.
pub fn pool_tokens(tokens: &DMatrix<f64>, kernel: usize, stride: usize) -> DMatrix<f64> {
    let windows = pool_windows(tokens.nrows(), kernel.max(1), stride.max(1));
    let mut out = DMatrix::zeros(windows.len(), tokens.ncols());
    for (w, &(start, end)) in windows.iter().enumerate() {
        let scale = 1.0 / (end - start) as f64;
        for r in start..end {
            for c in 0..tokens.ncols() {
                out[(w, c)] += tokens[(r, c)];
            }
        }
        for c in 0..tokens.ncols() {
            out[(w, c)] *= scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(5, 8);
        for i in 0..4 {
            assert_eq!(pe[(0, 2 * i)], 0.0);
            assert_eq!(pe[(0, 2 * i + 1)], 1.0);
        }
        assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[(1, 0)] - 0.84147).abs() < 1e-5);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
        // frequency of pair i is 10000^(-2i/d)
        let expected = (3.0 / 10000f64.powf(4.0 / 8.0)).cos();
        assert!((pe[(3, 5)] - expected).abs() < 1e-15);
    }

    #[test]
    fn pooling_identity_and_constant() {
        let t = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(pool_tokens(&t, 1, 1), t);
        let c = DMatrix::from_fn(4, 3, |_, col| col as f64 + 0.5);
        let pooled = pool_tokens(&c, 2, 2);
        assert_eq!(pooled.nrows(), 2);
        for r in 0..2 {
            assert_eq!(pooled.row(r), c.row(0));
        }
    }

    #[test]
    fn pooling_matches_window_oracle() {
        let t = DMatrix::from_fn(7, 4, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin());
        let pooled = pool_tokens(&t, 3, 2);
        // (7-3)/2+1 = 3 windows: [0,3), [2,5), [4,7)
        assert_eq!(pooled.nrows(), 3);
        for (w, start) in [0usize, 2, 4].into_iter().enumerate() {
            for c in 0..4 {
                let mean = (start..start + 3).map(|r| t[(r, c)]).sum::<f64>() / 3.0;
                assert!((pooled[(w, c)] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn short_input_pools_to_single_mean() {
        let t = DMatrix::from_fn(3, 2, |r, c| (r + c) as f64);
        let pooled = pool_tokens(&t, 4, 4);
        assert_eq!(pooled.nrows(), 1);
        assert!((pooled[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((pooled[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::default();
        cfg.pool_kernel = 0;
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::ude_small().validate().is_ok());
    }

    #[test]
    fn token_patch_ranges() {
        let cfg = ModelConfig {
            delay: DelayConfig { m: 32, tau: 1, p: 8, q: 8 },
            lookback: 256,
            encoder: EncoderConfig {
                horizon: 48,
                pool_kernel: 4,
                pool_stride: 4,
                ..EncoderConfig::default()
            },
        };
        // 225 Hankel rows -> 28 x 4 = 112 patches, pooled in fours -> 28 tokens
        assert_eq!(cfg.patch_count(), 112);
        assert_eq!(cfg.n_tokens(), 28);
        assert_eq!(cfg.token_patches(0), Some(0..4));
        assert_eq!(cfg.token_patches(27), Some(108..112));
        assert_eq!(cfg.token_patches(28), None);
        let mut covered = vec![0; 112];
        for t in 0..28 {
            for j in cfg.token_patches(t).unwrap() {
                covered[j] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }
}
