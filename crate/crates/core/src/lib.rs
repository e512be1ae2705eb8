//! Universal delay-embedding forecaster.
//!
//! A univariate channel is delay-embedded into a Hankel matrix, cut into
//! non-overlapping 2-D patches, and each patch becomes a token for a small
//! encoder-only transformer with a channel-shared linear forecast head. The
//! crate also carries the analyses that go with the model: least-squares
//! linear (Koopman) fits on latent trajectories, persistent homology of patch
//! point clouds, and mutual-information-guided late aggregation.
//!
//! ```no_run
//! use ude_core::config::Config;
//! use ude_core::data::{generate, zscore_apply, zscore_fit, GeneratorKind, ZeroVariancePolicy};
//! use ude_core::encoder::EncoderModel;
//! use ude_core::training::{evaluate, train, TrainConfig};
//!
//! # fn main() -> ude_core::Result<()> {
//! let cfg = Config::default().with_seed(7);
//! let raw = generate(GeneratorKind::Periodic, 4000, 7)?;
//! let series = zscore_apply(&raw, &zscore_fit(&raw, ZeroVariancePolicy::PassThrough)?)?;
//!
//! let mut model = EncoderModel::new(cfg.model_config())?;
//! let report = train(&mut model, &[series.clone()], &TrainConfig { epochs: 5, ..cfg.train })?;
//! println!("{}", report.summary(true));
//! println!("test mse {}", evaluate(&model, &series, 1)?.mean.mse);
//! # Ok(())
//! # }
//! ```

pub mod aggregation;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod io;
pub mod koopman;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
