//! Dense primitives with hand-written backward passes.

use nalgebra::DMatrix;

pub(crate) const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Adds a `1×n` bias row to every row of `y`.
pub(crate) fn add_row(y: &mut DMatrix<f64>, bias: &DMatrix<f64>) {
    debug_assert_eq!(bias.nrows(), 1);
    for c in 0..y.ncols() {
        let b = bias[(0, c)];
        for r in 0..y.nrows() {
            y[(r, c)] += b;
        }
    }
}

/// Accumulates the column sums of `dy` into a `1×n` row.
pub(crate) fn accumulate_column_sums(acc: &mut DMatrix<f64>, dy: &DMatrix<f64>) {
    for c in 0..dy.ncols() {
        acc[(0, c)] += dy.column(c).sum();
    }
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for r in 0..s.nrows() {
        let max = s.row(r).max();
        let mut total = 0.0;
        for c in 0..s.ncols() {
            let e = (s[(r, c)] - max).exp();
            out[(r, c)] = e;
            total += e;
        }
        for c in 0..s.ncols() {
            out[(r, c)] /= total;
        }
    }
    out
}

/// Gradient of the scores given the softmax output `a` and upstream `da`.
pub(crate) fn softmax_rows_backward(a: &DMatrix<f64>, da: &DMatrix<f64>) -> DMatrix<f64> {
    let mut ds = DMatrix::zeros(a.nrows(), a.ncols());
    for r in 0..a.nrows() {
        let mut dot = 0.0;
        for c in 0..a.ncols() {
            dot += a[(r, c)] * da[(r, c)];
        }
        for c in 0..a.ncols() {
            ds[(r, c)] = a[(r, c)] * (da[(r, c)] - dot);
        }
    }
    ds
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: DMatrix<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization with `1×d` scale and shift.
pub(crate) fn layer_norm(
    x: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> (DMatrix<f64>, NormCache) {
    let (n, d) = x.shape();
    let mut xhat = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (x[(r, c)] - mean) * is;
            xhat[(r, c)] = h;
            y[(r, c)] = gamma[(0, c)] * h + beta[(0, c)];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &DMatrix<f64>,
    cache: &NormCache,
    gamma: &DMatrix<f64>,
    dgamma: &mut DMatrix<f64>,
    dbeta: &mut DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, d) = dy.shape();
    let mut dx = DMatrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy[(r, c)];
            let h = cache.xhat[(r, c)];
            dgamma[(0, c)] += g * h;
            dbeta[(0, c)] += g;
            dxhat[c] = g * gamma[(0, c)];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * h;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[(r, c)] = is * (dxhat[c] - mean_dxhat - cache.xhat[(r, c)] * mean_dxhat_xhat);
        }
    }
    dx
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let s = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]);
        let a = softmax_rows(&s);
        for r in 0..2 {
            assert!((a.row(r).sum() - 1.0).abs() < 1e-12);
        }
        assert!(a[(1, 2)] > 0.999_999);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, -5.0, 0.5, 0.25, 8.0]);
        let gamma = DMatrix::from_element(1, 4, 1.0);
        let beta = DMatrix::zeros(1, 4);
        let (y, _) = layer_norm(&x, &gamma, &beta);
        for r in 0..2 {
            let mean = y.row(r).sum() / 4.0;
            let var = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
