use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Mean squared error and its gradient `2(pred − target)/N`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    if step == 0 {
        return lr_max;
    }
    if step >= total_steps {
        return lr_min;
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for a list of tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let m: Vec<DMatrix<f64>> = shapes.into_iter().map(|t| DMatrix::zeros(t.nrows(), t.ncols())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. `active[i] == false` leaves tensor `i`
/// and its moments untouched.
pub fn adam_step(
    params: &mut [&mut DMatrix<f64>],
    grads: &[&DMatrix<f64>],
    active: &[bool],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != active.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        if !active[i] {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((p, &g), (mi, vi)) in params[i].iter_mut().zip(grads[i].iter()).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * g;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}
