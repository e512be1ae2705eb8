//! Finite-dimensional linear (Koopman/DMD) analysis of latent trajectories.
//!
//! Given latent states `z⁰…zᵀ`, [`fit_koopman`] solves
//! `min_K Σ ‖z^{t+1} − K zᵗ‖²` through the pseudoinverse, `K = Z₊ Z₋†`, and
//! [`spectrum`] reads stability (`|λ|`) and rotation (`arg λ`) off the
//! eigenvalues.

use std::io::Write;

use nalgebra::{Complex, DMatrix, Schur};

use crate::data::Series;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

/// Band around the unit circle counted as marginal.
pub const MARGINAL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub states: Vec<Vec<f64>>,
    pub latent_dim: usize,
}

impl LatentTrajectory {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        let latent_dim = states.first().map(Vec::len).unwrap_or(0);
        if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.len() != latent_dim) {
            return Err(Error::DimensionMismatch(format!(
                "state {i} has dimension {}, expected {latent_dim}",
                s.len()
            )));
        }
        Ok(Self { states, latent_dim })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Fewer transitions than latent dimensions: the fit is not unique and
    /// the minimum-norm solution is returned.
    pub fn is_underdetermined(&self) -> bool {
        self.states.len() < self.latent_dim + 1
    }

    /// `latent_dim × count` matrix of states `start..start+count` as columns.
    fn columns(&self, start: usize, count: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.latent_dim, count, |r, c| self.states[start + c][r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

impl Stability {
    pub fn classify(modulus: f64) -> Self {
        if modulus < 1.0 - MARGINAL_EPS {
            Stability::Stable
        } else if modulus > 1.0 + MARGINAL_EPS {
            Stability::Unstable
        } else {
            Stability::Marginal
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Marginal => "marginal",
            Stability::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub value: Complex<f64>,
    pub modulus: f64,
    pub argument: f64,
    pub stability: Stability,
}

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<Complex<f64>>,
    /// Columns are eigenvectors, aligned with `values`.
    pub vectors: DMatrix<Complex<f64>>,
    /// `V·Λ·V⁻¹` reproduces the matrix to within 1e-8 relative Frobenius norm.
    pub diagonalizable: bool,
}

#[derive(Debug, Clone)]
pub struct KoopmanFit {
    pub k: DMatrix<f64>,
    /// Root-mean-square error of the fitted step over all pairs and coordinates.
    pub residual: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    pub eigenvectors: DMatrix<Complex<f64>>,
    pub diagonalizable: bool,
    /// Steps between paired states (1 for the one-step operator).
    pub lag: usize,
}

/// Moore–Penrose pseudoinverse via SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    svd.pseudo_inverse(PINV_RCOND * smax)
        .map_err(|e| Error::EigenFailure(format!("pseudoinverse: {e}")))
}

/// Least-squares operator mapping each column of `z_minus` to the same
/// column of `z_plus`.
pub fn fit_koopman_pairs(z_minus: &DMatrix<f64>, z_plus: &DMatrix<f64>) -> Result<KoopmanFit> {
    if z_minus.shape() != z_plus.shape() {
        return Err(Error::DimensionMismatch(format!(
            "snapshot matrices {:?} and {:?} differ",
            z_minus.shape(),
            z_plus.shape()
        )));
    }
    if z_minus.ncols() == 0 || z_minus.nrows() == 0 {
        return Err(Error::InvalidParam("need at least one snapshot pair".into()));
    }
    let k = z_plus * pseudo_inverse(z_minus)?;
    let err = z_plus - &k * z_minus;
    let residual = (err.norm_squared() / err.len() as f64).sqrt();
    let eig = eigen_decomposition(&k)?;
    Ok(KoopmanFit {
        k,
        residual,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        diagonalizable: eig.diagonalizable,
        lag: 1,
    })
}

/// One-step fit `K* = Z₊Z₋†`.
pub fn fit_koopman(traj: &LatentTrajectory) -> Result<KoopmanFit> {
    fit_koopman_lagged(traj, 1)
}

/// Direct `lag`-step fit pairing `zᵗ` with `z^{t+lag}`.
pub fn fit_koopman_lagged(traj: &LatentTrajectory, lag: usize) -> Result<KoopmanFit> {
    if lag == 0 {
        return Err(Error::InvalidParam("lag must be >= 1".into()));
    }
    if traj.len() < lag + 1 {
        return Err(Error::SeriesTooShort {
            needed: lag + 1,
            got: traj.len(),
        });
    }
    let count = traj.len() - lag;
    let mut fit = fit_koopman_pairs(&traj.columns(0, count), &traj.columns(lag, count))?;
    fit.lag = lag;
    Ok(fit)
}

/// `[K z0, K² z0, …, K^steps z0]`, computed iteratively.
pub fn rollout(k: &DMatrix<f64>, z0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if !k.is_square() || k.ncols() != z0.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator {:?} cannot act on a {}-vector",
            k.shape(),
            z0.len()
        )));
    }
    let mut z = DMatrix::from_column_slice(z0.len(), 1, z0);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        z = k * z;
        out.push(z.iter().copied().collect());
    }
    Ok(out)
}

fn complex_eigenvalues(k: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch(format!("{:?} is not square", k.shape())));
    }
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::EigenFailure("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(k.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("real Schur iteration did not converge".into()))?;
    let values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    Ok(values)
}

/// Eigenvalues sorted by modulus (descending), with stability labels.
pub fn spectrum(k: &DMatrix<f64>) -> Result<Vec<Eigenvalue>> {
    let mut values = complex_eigenvalues(k)?;
    sort_by_modulus(&mut values);
    Ok(values
        .into_iter()
        .map(|value| {
            let modulus = value.norm();
            Eigenvalue {
                value,
                modulus,
                argument: value.arg(),
                stability: Stability::classify(modulus),
            }
        })
        .collect())
}

fn sort_by_modulus(values: &mut [Complex<f64>]) {
    values.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.im.total_cmp(&a.im))
            .then(b.re.total_cmp(&a.re))
    });
}

/// Eigen-decomposition through the real Schur form; eigenvectors are null
/// vectors of `K − λI` obtained from a complex SVD. Repeated eigenvalues take
/// as many null vectors as their multiplicity; a defective matrix is flagged
/// rather than forced.
pub fn eigen_decomposition(k: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = k.nrows();
    let mut values = complex_eigenvalues(k)?;
    sort_by_modulus(&mut values);
    let scale = k.norm().max(1.0);
    let group_tol = 1e-7 * scale;
    let null_tol = 1e-6 * scale;

    let kc: DMatrix<Complex<f64>> = k.map(|v| Complex::new(v, 0.0));
    let mut vectors = DMatrix::<Complex<f64>>::zeros(n, n);
    let mut defective = false;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (values[j] - values[i]).norm() < group_tol {
            j += 1;
        }
        let mult = j - i;
        let lambda = values[i..j].iter().sum::<Complex<f64>>() / mult as f64;
        let shifted = &kc - DMatrix::<Complex<f64>>::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::EigenFailure("SVD did not return V".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        for (slot, &idx) in order.iter().take(mult).enumerate() {
            if svd.singular_values[idx] > null_tol {
                defective = true;
            }
            for r in 0..n {
                vectors[(r, i + slot)] = v_t[(idx, r)].conj();
            }
        }
        i = j;
    }

    let diagonalizable = !defective && {
        match vectors.clone().try_inverse() {
            Some(inv) => {
                let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values.clone()));
                let recon = &vectors * lambda * inv;
                let err = (recon - &kc).norm();
                err <= 1e-8 * k.norm().max(f64::MIN_POSITIVE)
            }
            None => false,
        }
    };
    Ok(EigenDecomposition {
        values,
        vectors,
        diagonalizable,
    })
}

/// Slides a lookback window over one channel and records the mean final-layer
/// token of every window as a latent state, in window order.
pub fn extract_latent_trajectory(
    series: &Series,
    channel: usize,
    model: &EncoderModel,
    window_stride: usize,
) -> Result<LatentTrajectory> {
    let x = series
        .channels
        .get(channel)
        .ok_or_else(|| Error::IndexOutOfRange(format!("channel {} of {}", channel + 1, series.n_channels())))?;
    let lookback = model.lookback();
    if x.len() < lookback {
        return Err(Error::SeriesTooShort {
            needed: lookback,
            got: x.len(),
        });
    }
    if window_stride == 0 {
        return Err(Error::InvalidParam("window stride must be >= 1".into()));
    }
    let mut states = Vec::new();
    let mut start = 0;
    while start + lookback <= x.len() {
        states.push(model.latent(&x[start..start + lookback], false)?.mean_token());
        start += window_stride;
    }
    LatentTrajectory::new(states)
}

/// One row per state: `step, z0, z1, …`.
pub fn write_trajectory_csv(traj: &LatentTrajectory, mut w: impl Write) -> std::io::Result<()> {
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((0..traj.latent_dim).map(|i| format!("z{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, s) in traj.states.iter().enumerate() {
        let row: Vec<String> = s.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{t},{}", row.join(","))?;
    }
    Ok(())
}

/// One row per eigenvalue: `re, im, modulus, argument, stability`.
pub fn write_spectrum_csv(spec: &[Eigenvalue], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "re,im,modulus,argument,stability")?;
    for e in spec {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(e.value.re),
            fmt_f64(e.value.im),
            fmt_f64(e.modulus),
            fmt_f64(e.argument),
            e.stability.as_str()
        )?;
    }
    Ok(())
}
