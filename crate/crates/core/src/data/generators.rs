use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Series;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidComponent {
    pub amplitude: f64,
    /// Period in samples.
    pub period: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicParams {
    pub components: Vec<SinusoidComponent>,
    /// Draw every phase uniformly from `[0, 2π)` instead of using `phase`.
    pub random_phase: bool,
    pub noise_std: f64,
}

impl Default for PeriodicParams {
    fn default() -> Self {
        Self {
            components: vec![SinusoidComponent {
                amplitude: 1.0,
                period: 50.0,
                phase: 0.0,
            }],
            random_phase: false,
            noise_std: 0.0,
        }
    }
}

impl PeriodicParams {
    pub fn sine(amplitude: f64, period: f64) -> Self {
        Self {
            components: vec![SinusoidComponent {
                amplitude,
                period,
                phase: 0.0,
            }],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkParams {
    pub step_std: f64,
}

impl Default for RandomWalkParams {
    fn default() -> Self {
        Self { step_std: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub initial: [f64; 3],
    /// Integration steps discarded before the first recorded sample.
    pub burn_in: usize,
    /// Integration steps between recorded samples.
    pub subsample: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            initial: [1.0, 1.0, 1.0],
            burn_in: 0,
            subsample: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsePulseParams {
    /// Per-sample pulse probability, in `(0, 1)`.
    pub rate: f64,
    pub amplitude: f64,
    /// Fraction of the previous value carried to the next sample; 0 gives
    /// isolated spikes.
    pub decay: f64,
}

impl Default for SparsePulseParams {
    fn default() -> Self {
        Self {
            rate: 0.05,
            amplitude: 1.0,
            decay: 0.0,
        }
    }
}

fn check_length(length: usize) -> Result<()> {
    if length < 2 {
        return Err(Error::InvalidParam(format!("length must be >= 2, got {length}")));
    }
    Ok(())
}

/// Sum of sinusoids `Σ a·sin(2πt/period + phase)` plus optional Gaussian noise.
pub fn gen_periodic(params: &PeriodicParams, length: usize, seed: u64) -> Result<Series> {
    check_length(length)?;
    if params.components.is_empty() {
        return Err(Error::InvalidParam("periodic series needs at least one component".into()));
    }
    if params.components.iter().any(|c| !(c.period > 0.0)) {
        return Err(Error::InvalidParam("sinusoid periods must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = params
        .components
        .iter()
        .map(|c| if params.random_phase { rng.random_range(0.0..TAU) } else { c.phase })
        .collect();
    let noise = Normal::new(0.0, params.noise_std)
        .map_err(|e| Error::InvalidParam(format!("noise_std: {e}")))?;
    let x = (0..length)
        .map(|t| {
            let clean: f64 = params
                .components
                .iter()
                .zip(&phases)
                .map(|(c, ph)| c.amplitude * (TAU * t as f64 / c.period + ph).sin())
                .sum();
            if params.noise_std > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    Series::univariate("x", x)
}

/// Cumulative sum of Gaussian steps, starting from the first step.
pub fn gen_random_walk(params: &RandomWalkParams, length: usize, seed: u64) -> Result<Series> {
    check_length(length)?;
    if !(params.step_std > 0.0) {
        return Err(Error::InvalidParam("step_std must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    let x = (0..length)
        .map(|_| {
            let step: f64 = StandardNormal.sample(&mut rng);
            acc += params.step_std * step;
            acc
        })
        .collect();
    Series::univariate("x", x)
}

fn lorenz_field(s: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    [
        p.sigma * (s[1] - s[0]),
        s[0] * (p.rho - s[2]) - s[1],
        s[0] * s[1] - p.beta * s[2],
    ]
}

/// One classical fourth-order Runge–Kutta step of size `dt`.
pub fn lorenz_rk4_step(s: [f64; 3], dt: f64, p: &LorenzParams) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = lorenz_field(s, p);
    let k2 = lorenz_field(add(s, k1, dt / 2.0), p);
    let k3 = lorenz_field(add(s, k2, dt / 2.0), p);
    let k4 = lorenz_field(add(s, k3, dt), p);
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Lorenz system as three channels `x, y, z`. The trajectory is fully
/// determined by the initial condition; `seed` is accepted for a uniform
/// generator signature but unused.
pub fn gen_lorenz(params: &LorenzParams, length: usize, _seed: u64) -> Result<Series> {
    check_length(length)?;
    if !(params.dt > 0.0) || params.subsample == 0 {
        return Err(Error::InvalidParam("Lorenz dt and subsample must be positive".into()));
    }
    let mut s = params.initial;
    for _ in 0..params.burn_in {
        s = lorenz_rk4_step(s, params.dt, params);
    }
    let mut channels = (0..3).map(|_| Vec::with_capacity(length)).collect::<Vec<Vec<f64>>>();
    for _ in 0..length {
        for (c, v) in channels.iter_mut().zip(s) {
            c.push(v);
        }
        for _ in 0..params.subsample {
            s = lorenz_rk4_step(s, params.dt, params);
        }
    }
    if channels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Lorenz integration".into()));
    }
    Series::new(
        vec!["x".into(), "y".into(), "z".into()],
        channels,
        params.dt * params.subsample as f64,
    )
}

/// Zero baseline with Bernoulli(`rate`) pulses of height `amplitude`.
pub fn gen_sparse_pulse(params: &SparsePulseParams, length: usize, seed: u64) -> Result<Series> {
    check_length(length)?;
    if !(params.rate > 0.0 && params.rate < 1.0) {
        return Err(Error::InvalidParam(format!("rate {} not in (0, 1)", params.rate)));
    }
    if !(0.0..1.0).contains(&params.decay) {
        return Err(Error::InvalidParam(format!("decay {} not in [0, 1)", params.decay)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 0.0;
    let x = (0..length)
        .map(|_| {
            let pulse = if rng.random_bool(params.rate) { params.amplitude } else { 0.0 };
            prev = params.decay * prev + pulse;
            prev
        })
        .collect();
    Series::univariate("x", x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Periodic,
    RandomWalk,
    Lorenz,
    SparsePulse,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 4] = [
        GeneratorKind::Periodic,
        GeneratorKind::RandomWalk,
        GeneratorKind::Lorenz,
        GeneratorKind::SparsePulse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::Periodic => "periodic",
            GeneratorKind::RandomWalk => "random_walk",
            GeneratorKind::Lorenz => "lorenz",
            GeneratorKind::SparsePulse => "sparse_pulse",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "periodic" => Ok(GeneratorKind::Periodic),
            "random_walk" => Ok(GeneratorKind::RandomWalk),
            "lorenz" => Ok(GeneratorKind::Lorenz),
            "sparse_pulse" => Ok(GeneratorKind::SparsePulse),
            _ => Err(Error::InvalidParam(format!(
                "unknown generator {s:?}; expected periodic, random_walk, lorenz or sparse_pulse"
            ))),
        }
    }
}

/// Any generator with its default parameters.
pub fn generate(kind: GeneratorKind, length: usize, seed: u64) -> Result<Series> {
    match kind {
        GeneratorKind::Periodic => gen_periodic(&PeriodicParams::default(), length, seed),
        GeneratorKind::RandomWalk => gen_random_walk(&RandomWalkParams::default(), length, seed),
        GeneratorKind::Lorenz => gen_lorenz(&LorenzParams::default(), length, seed),
        GeneratorKind::SparsePulse => gen_sparse_pulse(&SparsePulseParams::default(), length, seed),
    }
}
