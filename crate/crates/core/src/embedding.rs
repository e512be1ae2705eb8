//! Delay vectors, Hankel matrices and non-overlapping 2-D time-delay patches.
//!
//! Everything here is 0-based. Where a message refers to a patch by number it
//! uses the 1-based `j = (u-1)·V + v` numbering, so `patch 1` is the top-left
//! block of the Hankel matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delay-embedding and patching parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    /// Embedding dimension (number of delayed coordinates).
    pub m: usize,
    /// Delay step in samples.
    #[serde(default = "default_tau")]
    pub tau: usize,
    /// Patch rows (time steps per patch).
    pub p: usize,
    /// Patch columns (delay coordinates per patch).
    pub q: usize,
}

fn default_tau() -> usize {
    1
}

impl DelayConfig {
    pub fn new(m: usize, tau: usize, p: usize, q: usize) -> Result<Self> {
        let cfg = Self { m, tau, p, q };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.tau == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::InvalidParam(format!(
                "delay config values must be positive (m={}, tau={}, p={}, q={})",
                self.m, self.tau, self.p, self.q
            )));
        }
        if self.q > self.m {
            return Err(Error::PatchTooLarge(format!(
                "q={} exceeds embedding dimension m={}",
                self.q, self.m
            )));
        }
        Ok(())
    }

    /// Number of samples spanned by one delay vector.
    pub fn span(&self) -> usize {
        (self.m - 1) * self.tau + 1
    }

    /// Hankel row count `L = T - (m-1)·tau` for a series of length `t`.
    pub fn hankel_rows(&self, t: usize) -> Result<usize> {
        if t < self.span() {
            return Err(Error::SeriesTooShort {
                needed: self.span(),
                got: t,
            });
        }
        Ok(t - (self.m - 1) * self.tau)
    }

    /// Patch count `U·V` for a series of length `t`.
    pub fn patch_count(&self, t: usize) -> Result<usize> {
        let l = self.hankel_rows(t)?;
        if self.p > l {
            return Err(Error::PatchTooLarge(format!(
                "p={} exceeds Hankel row count L={l}",
                self.p
            )));
        }
        Ok((l / self.p) * (self.m / self.q))
    }

    /// Whether `m >= 2d + 1` for an attractor of dimension `d`.
    pub fn satisfies_takens(&self, attractor_dim: usize) -> bool {
        self.m > 2 * attractor_dim
    }

    /// The configuration used at full scale (m=500, p=25, q=50).
    pub fn full_scale() -> Self {
        Self {
            m: 500,
            tau: 1,
            p: 25,
            q: 50,
        }
    }
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            m: 32,
            tau: 1,
            p: 8,
            q: 8,
        }
    }
}

/// Delay vector ending at `t`, oldest sample first:
/// `[x[t-(m-1)τ], …, x[t-τ], x[t]]`.
pub fn delay_vector(x: &[f64], t: usize, cfg: &DelayConfig) -> Result<Vec<f64>> {
    let back = (cfg.m - 1) * cfg.tau;
    if t < back || t >= x.len() {
        return Err(Error::IndexOutOfRange(format!(
            "delay vector at t={} needs samples {}..={} (1-based), series has {}",
            t + 1,
            t as isize - back as isize + 1,
            t + 1,
            x.len()
        )));
    }
    Ok((0..cfg.m).map(|c| x[t - back + c * cfg.tau]).collect())
}

/// Hankel (trajectory) matrix of one channel; row `r` is the delay vector
/// ending at `r + (m-1)·tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub values: DMatrix<f64>,
    pub source_channel: usize,
}

impl HankelMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

pub fn build_hankel(x: &[f64], cfg: &DelayConfig) -> Result<HankelMatrix> {
    build_hankel_for(x, cfg, 0)
}

pub fn build_hankel_for(x: &[f64], cfg: &DelayConfig, channel: usize) -> Result<HankelMatrix> {
    let l = cfg.hankel_rows(x.len())?;
    let values = DMatrix::from_fn(l, cfg.m, |r, c| x[r + c * cfg.tau]);
    Ok(HankelMatrix {
        values,
        source_channel: channel,
    })
}

/// Non-overlapping `p×q` partition of a Hankel matrix, row-major in `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<DMatrix<f64>>,
    pub p: usize,
    pub q: usize,
    /// Row-patch count `⌊L/p⌋`.
    pub u_count: usize,
    /// Column-patch count `⌊m/q⌋`.
    pub v_count: usize,
    pub leftover_rows: usize,
    pub leftover_cols: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Linear index of patch `(u, v)` (both 0-based).
    pub fn index_of(&self, u: usize, v: usize) -> usize {
        u * self.v_count + v
    }

    /// Inverse of [`PatchGrid::index_of`].
    pub fn position(&self, j: usize) -> (usize, usize) {
        (j / self.v_count, j % self.v_count)
    }

    pub fn patch(&self, u: usize, v: usize) -> &DMatrix<f64> {
        &self.patches[self.index_of(u, v)]
    }

    /// All patches flattened, one per row: `patch_count × (p·q)`.
    pub fn flattened(&self) -> DMatrix<f64> {
        let width = self.p * self.q;
        let mut out = DMatrix::zeros(self.patches.len(), width);
        for (j, patch) in self.patches.iter().enumerate() {
            for (k, value) in flatten_patch(patch).into_iter().enumerate() {
                out[(j, k)] = value;
            }
        }
        out
    }
}

pub fn partition_patches(h: &HankelMatrix, cfg: &DelayConfig) -> Result<PatchGrid> {
    let (l, m) = (h.rows(), h.cols());
    if cfg.p == 0 || cfg.q == 0 {
        return Err(Error::InvalidParam("patch sides must be positive".into()));
    }
    if cfg.p > l || cfg.q > m {
        return Err(Error::PatchTooLarge(format!(
            "{}x{} patch does not fit a {l}x{m} Hankel matrix",
            cfg.p, cfg.q
        )));
    }
    let (u_count, v_count) = (l / cfg.p, m / cfg.q);
    let mut patches = Vec::with_capacity(u_count * v_count);
    for u in 0..u_count {
        for v in 0..v_count {
            patches.push(
                h.values
                    .view((u * cfg.p, v * cfg.q), (cfg.p, cfg.q))
                    .into_owned(),
            );
        }
    }
    Ok(PatchGrid {
        patches,
        p: cfg.p,
        q: cfg.q,
        u_count,
        v_count,
        leftover_rows: l % cfg.p,
        leftover_cols: m % cfg.q,
    })
}

/// Hankel + partition in one step.
pub fn patch_grid(x: &[f64], cfg: &DelayConfig) -> Result<PatchGrid> {
    let h = build_hankel(x, cfg)?;
    partition_patches(&h, cfg)
}

/// Row-major flattening.
pub fn flatten_patch(patch: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(patch.len());
    for r in 0..patch.nrows() {
        for c in 0..patch.ncols() {
            out.push(patch[(r, c)]);
        }
    }
    out
}

/// Inverse of [`flatten_patch`].
pub fn reshape_patch(flat: &[f64], p: usize, q: usize) -> Result<DMatrix<f64>> {
    if flat.len() != p * q {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape {} values into {p}x{q}",
            flat.len()
        )));
    }
    Ok(DMatrix::from_row_slice(p, q, flat))
}

/// Flattened patch matrix read straight from the samples, skipping the
/// intermediate Hankel matrix. Equal to `patch_grid(x, cfg)?.flattened()`.
pub fn flattened_patches(x: &[f64], cfg: &DelayConfig) -> Result<DMatrix<f64>> {
    let l = cfg.hankel_rows(x.len())?;
    if cfg.p > l || cfg.q > cfg.m {
        return Err(Error::PatchTooLarge(format!(
            "{}x{} patch does not fit a {l}x{} Hankel matrix",
            cfg.p, cfg.q, cfg.m
        )));
    }
    let (u_count, v_count) = (l / cfg.p, cfg.m / cfg.q);
    let mut out = DMatrix::zeros(u_count * v_count, cfg.p * cfg.q);
    for u in 0..u_count {
        for v in 0..v_count {
            let j = u * v_count + v;
            for a in 0..cfg.p {
                for b in 0..cfg.q {
                    out[(j, a * cfg.q + b)] = x[u * cfg.p + a + (v * cfg.q + b) * cfg.tau];
                }
            }
        }
    }
    Ok(out)
}
