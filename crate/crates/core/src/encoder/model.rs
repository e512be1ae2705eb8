use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, NormCache};
use super::params::{HeadParams, LayerParams, Linear, ParamGroup, Params};
use super::{pool_tokens, pool_windows, positional_encoding, ModelConfig};
use crate::embedding::flattened_patches;
use crate::error::{Error, Result};

/// Encoder output for one window.
#[derive(Debug, Clone)]
pub struct LatentSequence {
    /// `n_tokens × d_model` after the last encoder layer.
    pub tokens: DMatrix<f64>,
    /// `[layer][head]`, each `n_tokens × n_tokens` and row-stochastic.
    pub attention_maps: Option<Vec<Vec<DMatrix<f64>>>>,
}

impl LatentSequence {
    /// Row-major flattening of the tokens.
    pub fn flatten(&self) -> DMatrix<f64> {
        flatten_tokens(&self.tokens)
    }

    /// Mean over tokens.
    pub fn mean_token(&self) -> Vec<f64> {
        let n = self.tokens.nrows() as f64;
        (0..self.tokens.ncols())
            .map(|c| self.tokens.column(c).sum() / n)
            .collect()
    }
}

fn flatten_tokens(tokens: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = tokens.shape();
    DMatrix::from_fn(1, n * d, |_, i| tokens[(i / d, i % d)])
}

fn unflatten_tokens(flat: &DMatrix<f64>, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |r, c| flat[(0, r * d + c)])
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    attn: Vec<DMatrix<f64>>,
    concat: DMatrix<f64>,
    attn_mask: Option<DMatrix<f64>>,
    norm1: NormCache,
    mid: DMatrix<f64>,
    ff_pre: DMatrix<f64>,
    ff_act: DMatrix<f64>,
    ff_mask: Option<DMatrix<f64>>,
    norm2: NormCache,
}

#[derive(Debug, Clone)]
enum HeadCache {
    Affine,
    Mlp { pre: DMatrix<f64>, act: DMatrix<f64> },
}

/// Intermediates of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    patches: DMatrix<f64>,
    layers: Vec<LayerCache>,
    head_input: DMatrix<f64>,
    head: HeadCache,
}

impl ForwardCache {
    /// Flattened final tokens fed to the head.
    pub fn head_input(&self) -> &DMatrix<f64> {
        &self.head_input
    }

    pub fn attention_maps(&self) -> Vec<Vec<DMatrix<f64>>> {
        self.layers.iter().map(|l| l.attn.clone()).collect()
    }
}

/// Model parameters, gradient buffers and the architecture they belong to.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub params: Params,
    pub grads: Params,
    retained: Option<ForwardCache>,
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let keep = 1.0 / (1.0 - rate);
    DMatrix::from_fn(shape.0, shape.1, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

impl EncoderModel {
    /// Fresh model initialized from `config.encoder.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let shape = config.param_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.seed);
        let params = Params::init(&shape, &mut rng);
        let grads = Params::zeros(&shape);
        Ok(Self {
            config,
            params,
            grads,
            retained: None,
        })
    }

    /// Wraps existing parameters, checking every shape against `config`.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expected = Params::zeros(&config.param_shape());
        let want = expected.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        for ((name, _, w), (_, _, g)) in want.iter().zip(got.iter()) {
            if w.shape() != g.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{name}: expected {:?}, got {:?}",
                    w.shape(),
                    g.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            grads: expected,
            retained: None,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.config.n_tokens()
    }

    pub fn lookback(&self) -> usize {
        self.config.lookback
    }

    pub fn horizon(&self) -> usize {
        self.config.encoder.horizon
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(0.0);
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.config.lookback {
            return Err(Error::DimensionMismatch(format!(
                "window has {} samples, model expects lookback {}",
                window.len(),
                self.config.lookback
            )));
        }
        Ok(())
    }

    /// Pooled token embeddings plus positional encoding for one window.
    fn encoder_input(&self, window: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_window(window)?;
        let patches = flattened_patches(window, &self.config.delay)?;
        let embedded = self.params.token_proj.forward(&patches);
        let enc = &self.config.encoder;
        let pooled = pool_tokens(&embedded, enc.pool_kernel, enc.pool_stride);
        let x0 = pooled + positional_encoding(self.n_tokens(), enc.d_model);
        Ok((patches, x0))
    }

    /// Runs the encoder stack on `n_tokens × d_model` input.
    fn run_layers(
        &self,
        mut x: DMatrix<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(DMatrix<f64>, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for (i, layer) in self.params.layers.iter().enumerate() {
            let (out, cache) = self.layer_forward(layer, x, rng.as_deref_mut());
            if !ops::all_finite(&out) {
                return Err(Error::NonFinite(format!("encoder layer {}", i + 1)));
            }
            caches.push(cache);
            x = out;
        }
        Ok((x, caches))
    }

    fn layer_forward(
        &self,
        layer: &LayerParams,
        x: DMatrix<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (DMatrix<f64>, LayerCache) {
        let enc = &self.config.encoder;
        let (n, d) = x.shape();
        let dk = d / enc.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let q = layer.query.forward(&x);
        let k = layer.key.forward(&x);
        let v = layer.value.forward(&x);
        let mut concat = DMatrix::zeros(n, d);
        let mut attn = Vec::with_capacity(enc.n_heads);
        for h in 0..enc.n_heads {
            let cols = h * dk;
            let qh = q.columns(cols, dk);
            let kh = k.columns(cols, dk);
            let vh = v.columns(cols, dk);
            let scores = (qh * kh.transpose()) * scale;
            let a = ops::softmax_rows(&scores);
            let oh = &a * vh;
            concat.columns_mut(cols, dk).copy_from(&oh);
            attn.push(a);
        }
        let mut mha = layer.output.forward(&concat);
        let attn_mask = match (rng.as_deref_mut(), enc.dropout > 0.0) {
            (Some(r), true) => {
                let mask = dropout_mask(mha.shape(), enc.dropout, r);
                mha.component_mul_assign(&mask);
                Some(mask)
            }
            _ => None,
        };
        let (mid, norm1) = ops::layer_norm(&(&x + &mha), &layer.norm1.gamma, &layer.norm1.beta);

        let ff_pre = layer.ff_in.forward(&mid);
        let ff_act = ff_pre.map(ops::gelu);
        let mut ff = layer.ff_out.forward(&ff_act);
        let ff_mask = match (rng, enc.dropout > 0.0) {
            (Some(r), true) => {
                let mask = dropout_mask(ff.shape(), enc.dropout, r);
                ff.component_mul_assign(&mask);
                Some(mask)
            }
            _ => None,
        };
        let (out, norm2) = ops::layer_norm(&(&mid + &ff), &layer.norm2.gamma, &layer.norm2.beta);
        let cache = LayerCache {
            input: x,
            q,
            k,
            v,
            attn,
            concat,
            attn_mask,
            norm1,
            mid,
            ff_pre,
            ff_act,
            ff_mask,
            norm2,
        };
        (out, cache)
    }

    fn layer_backward(
        &self,
        layer: &LayerParams,
        grad: &mut LayerParams,
        cache: &LayerCache,
        dout: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let enc = &self.config.encoder;
        let d = dout.ncols();
        let dk = d / enc.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();

        // out = LN2(mid + ff)
        let dr2 = ops::layer_norm_backward(
            dout,
            &cache.norm2,
            &layer.norm2.gamma,
            &mut grad.norm2.gamma,
            &mut grad.norm2.beta,
        );
        let mut dff = dr2.clone();
        if let Some(mask) = &cache.ff_mask {
            dff.component_mul_assign(mask);
        }
        let dact = layer.ff_out.backward(&cache.ff_act, &dff, &mut grad.ff_out);
        let dpre = dact.zip_map(&cache.ff_pre, |g, x| g * ops::gelu_grad(x));
        let dmid = dr2 + layer.ff_in.backward(&cache.mid, &dpre, &mut grad.ff_in);

        // mid = LN1(x + mha)
        let dr1 = ops::layer_norm_backward(
            &dmid,
            &cache.norm1,
            &layer.norm1.gamma,
            &mut grad.norm1.gamma,
            &mut grad.norm1.beta,
        );
        let mut dmha = dr1.clone();
        if let Some(mask) = &cache.attn_mask {
            dmha.component_mul_assign(mask);
        }
        let dconcat = layer.output.backward(&cache.concat, &dmha, &mut grad.output);

        let n = dout.nrows();
        let mut dq = DMatrix::zeros(n, d);
        let mut dk_all = DMatrix::zeros(n, d);
        let mut dv = DMatrix::zeros(n, d);
        for h in 0..enc.n_heads {
            let cols = h * dk;
            let a = &cache.attn[h];
            let doh = dconcat.columns(cols, dk);
            let qh = cache.q.columns(cols, dk);
            let kh = cache.k.columns(cols, dk);
            let vh = cache.v.columns(cols, dk);
            let da = doh * vh.transpose();
            dv.columns_mut(cols, dk).copy_from(&(a.transpose() * doh));
            let ds = ops::softmax_rows_backward(a, &da) * scale;
            dq.columns_mut(cols, dk).copy_from(&(&ds * kh));
            dk_all.columns_mut(cols, dk).copy_from(&(ds.transpose() * qh));
        }
        let mut dx = dr1;
        dx += layer.query.backward(&cache.input, &dq, &mut grad.query);
        dx += layer.key.backward(&cache.input, &dk_all, &mut grad.key);
        dx += layer.value.backward(&cache.input, &dv, &mut grad.value);
        dx
    }

    /// Head applied to a `1 × (n_tokens·d_model)` row.
    pub fn head_forward(&self, flat: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (y, _) = self.head_forward_cached(flat)?;
        Ok(y)
    }

    fn head_forward_cached(&self, flat: &DMatrix<f64>) -> Result<(Vec<f64>, HeadCache)> {
        let expected = self.config.n_tokens() * self.config.encoder.d_model;
        if flat.nrows() != 1 || flat.ncols() != expected {
            return Err(Error::DimensionMismatch(format!(
                "head expects 1x{expected} input, got {}x{}",
                flat.nrows(),
                flat.ncols()
            )));
        }
        let (y, cache) = match &self.params.head {
            HeadParams::Affine(lin) => (lin.forward(flat), HeadCache::Affine),
            HeadParams::MlpGelu { hidden, out } => {
                let pre = hidden.forward(flat);
                let act = pre.map(ops::gelu);
                (out.forward(&act), HeadCache::Mlp { pre, act })
            }
        };
        if !ops::all_finite(&y) {
            return Err(Error::NonFinite("forecast head".into()));
        }
        Ok((y.iter().copied().collect(), cache))
    }

    fn head_backward(&mut self, input: &DMatrix<f64>, cache: &HeadCache, dy: &[f64], need_input_grad: bool) -> Option<DMatrix<f64>> {
        let dy = DMatrix::from_row_slice(1, dy.len(), dy);
        match (&self.params.head, &mut self.grads.head, cache) {
            (HeadParams::Affine(lin), HeadParams::Affine(g), HeadCache::Affine) => {
                if need_input_grad {
                    Some(lin.backward(input, &dy, g))
                } else {
                    lin.backward_params(input, &dy, g);
                    None
                }
            }
            (
                HeadParams::MlpGelu { hidden, out },
                HeadParams::MlpGelu { hidden: gh, out: go },
                HeadCache::Mlp { pre, act },
            ) => {
                let dact = out.backward(act, &dy, go);
                let dpre = dact.zip_map(pre, |g, x| g * ops::gelu_grad(x));
                if need_input_grad {
                    Some(hidden.backward(input, &dpre, gh))
                } else {
                    hidden.backward_params(input, &dpre, gh);
                    None
                }
            }
            _ => unreachable!("head parameters, gradients and cache disagree"),
        }
    }

    /// Latent tokens for one window (evaluation mode, no dropout).
    pub fn latent(&self, window: &[f64], retain_attention: bool) -> Result<LatentSequence> {
        let (_, x0) = self.encoder_input(window)?;
        let (tokens, caches) = self.run_layers(x0, None)?;
        let attention_maps = retain_attention.then(|| caches.into_iter().map(|c| c.attn).collect());
        Ok(LatentSequence {
            tokens,
            attention_maps,
        })
    }

    /// h-step forecast for one lookback window.
    pub fn forecast(&self, window: &[f64]) -> Result<Vec<f64>> {
        let latent = self.latent(window, false)?;
        self.head_forward(&latent.flatten())
    }

    /// Forward pass keeping every intermediate. Dropout is applied only when
    /// an RNG is supplied.
    pub fn forward_cached(
        &self,
        window: &[f64],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let (patches, x0) = self.encoder_input(window)?;
        let (tokens, layers) = self.run_layers(x0, rng)?;
        let head_input = flatten_tokens(&tokens);
        let (y, head) = self.head_forward_cached(&head_input)?;
        Ok((
            y,
            ForwardCache {
                patches,
                layers,
                head_input,
                head,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` for every parameter given `∂L/∂ŷ`.
    pub fn backward_cached(&mut self, cache: &ForwardCache, dy: &[f64]) -> Result<()> {
        self.check_output_grad(dy)?;
        let dflat = self
            .head_backward(&cache.head_input, &cache.head, dy, true)
            .expect("input gradient requested");
        let (n, d) = (self.n_tokens(), self.config.encoder.d_model);
        let mut dx = unflatten_tokens(&dflat, n, d);

        let mut layer_grads = std::mem::take(&mut self.grads.layers);
        for (i, layer_cache) in cache.layers.iter().enumerate().rev() {
            dx = self.layer_backward(&self.params.layers[i], &mut layer_grads[i], layer_cache, &dx);
        }
        self.grads.layers = layer_grads;

        // positional encoding is constant; undo the pooling
        let enc = &self.config.encoder;
        let m = cache.patches.nrows();
        let mut dembedded = DMatrix::zeros(m, d);
        for (w, (start, end)) in pool_windows(m, enc.pool_kernel, enc.pool_stride).into_iter().enumerate() {
            let scale = 1.0 / (end - start) as f64;
            for r in start..end {
                for c in 0..d {
                    dembedded[(r, c)] += dx[(w, c)] * scale;
                }
            }
        }
        let proj: &Linear = &self.params.token_proj;
        proj.backward_params(&cache.patches, &dembedded, &mut self.grads.token_proj);
        Ok(())
    }

    /// Accumulates head gradients only, from a cached head input.
    pub fn backward_head(&mut self, head_input: &DMatrix<f64>, dy: &[f64]) -> Result<()> {
        self.check_output_grad(dy)?;
        let (_, cache) = self.head_forward_cached(head_input)?;
        self.head_backward(head_input, &cache, dy, false);
        Ok(())
    }

    fn check_output_grad(&self, dy: &[f64]) -> Result<()> {
        if dy.len() != self.horizon() {
            return Err(Error::DimensionMismatch(format!(
                "loss gradient has {} entries, horizon is {}",
                dy.len(),
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Forward pass whose intermediates are kept for a later [`EncoderModel::backward`].
    pub fn forward_retain(&mut self, window: &[f64]) -> Result<Vec<f64>> {
        let (y, cache) = self.forward_cached(window, None)?;
        self.retained = Some(cache);
        Ok(y)
    }

    /// Backward pass against the retained forward pass.
    pub fn backward(&mut self, loss_grad: &[f64]) -> Result<()> {
        let cache = self.retained.take().ok_or(Error::NoRetainedForward)?;
        let result = self.backward_cached(&cache, loss_grad);
        self.retained = Some(cache);
        result
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn encoder_hash(&self) -> String {
        self.params.group_hash(ParamGroup::Encoder)
    }

    pub fn head_hash(&self) -> String {
        self.params.group_hash(ParamGroup::Head)
    }
}

/// Runs the encoder stack on tokens that already carry positional encoding.
pub fn encoder_forward(
    input: &DMatrix<f64>,
    model: &EncoderModel,
    retain_attention: bool,
) -> Result<LatentSequence> {
    let d = model.config.encoder.d_model;
    if input.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "token width {} != d_model {d}",
            input.ncols()
        )));
    }
    let (tokens, caches) = model.run_layers(input.clone(), None)?;
    let attention_maps = retain_attention.then(|| caches.into_iter().map(|c| c.attn).collect());
    Ok(LatentSequence {
        tokens,
        attention_maps,
    })
}

/// `ŷ = flatten(tokens)·W_head + b_head` (or the GELU head).
pub fn forecast_head(latent: &LatentSequence, model: &EncoderModel) -> Result<Vec<f64>> {
    model.head_forward(&latent.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{patch_grid, DelayConfig};
    use crate::encoder::{embed_tokens, EncoderConfig, HeadKind};

    pub(crate) fn tiny_config(head: HeadKind) -> ModelConfig {
        // worked-example geometry: 9 samples, m=4, 2x2 patches -> 6 tokens
        ModelConfig {
            delay: DelayConfig { m: 4, tau: 1, p: 2, q: 2 },
            lookback: 9,
            encoder: EncoderConfig {
                d_model: 8,
                n_layers: 1,
                n_heads: 1,
                d_ff: 16,
                pool_kernel: 1,
                pool_stride: 1,
                horizon: 3,
                dropout: 0.0,
                seed: 11,
                head,
                head_hidden: 5,
            },
        }
    }

    fn window(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Loss `0.5·Σ w_i ŷ_i²`-style functional with fixed weights, so the
    /// upstream gradient is not constant.
    fn loss(y: &[f64], target: &[f64]) -> f64 {
        y.iter().zip(target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
    }

    fn check_gradients(cfg: ModelConfig, seed: u64) {
        let mut model = EncoderModel::new(cfg).unwrap();
        // perturb norms and biases away from their init so every path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, _, t) in model.params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let x = window(cfg.lookback, seed + 1);
        let target = window(cfg.encoder.horizon, seed + 2);
        let (y, cache) = model.forward_cached(&x, None).unwrap();
        let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        model.zero_grad();
        model.backward_cached(&cache, &dy).unwrap();

        let step = 1e-5;
        let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = model.params.tensors()[ti].2.len();
            for e in 0..len {
                let analytic = model.grads.tensors()[ti].2.as_slice()[e];
                let orig = model.params.tensors()[ti].2.as_slice()[e];
                model.params.tensors_mut()[ti].2.as_mut_slice()[e] = orig + step;
                let up = loss(&model.forecast(&x).unwrap(), &target);
                model.params.tensors_mut()[ti].2.as_mut_slice()[e] = orig - step;
                let down = loss(&model.forecast(&x).unwrap(), &target);
                model.params.tensors_mut()[ti].2.as_mut_slice()[e] = orig;
                let numeric = (up - down) / (2.0 * step);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    rel < 1e-4 || (analytic - numeric).abs() < 1e-9,
                    "{name}[{e}]: analytic {analytic} numeric {numeric} rel {rel}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_affine_head() {
        check_gradients(tiny_config(HeadKind::Affine), 3);
    }

    #[test]
    fn gradients_match_finite_differences_mlp_head_two_heads_pooled() {
        let mut cfg = tiny_config(HeadKind::MlpGelu);
        cfg.encoder.n_heads = 2;
        cfg.encoder.n_layers = 2;
        cfg.encoder.pool_kernel = 3;
        cfg.encoder.pool_stride = 2;
        check_gradients(cfg, 5);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let mut model = EncoderModel::new(tiny_config(HeadKind::Affine)).unwrap();
        model.forward_retain(&window(9, 1)).unwrap();
        model.backward(&[0.0; 3]).unwrap();
        assert!(model.grads.tensors().iter().all(|(_, _, t)| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut model = EncoderModel::new(tiny_config(HeadKind::Affine)).unwrap();
        assert!(matches!(model.backward(&[1.0; 3]), Err(Error::NoRetainedForward)));
    }

    #[test]
    fn linear_only_model_matches_least_squares_gradient() {
        // No layers: ŷ = flatten(P·W_e + b_e + PE)·W_h + b_h. With W_e and the
        // head fixed, the head gradient for L = ½‖ŷ−y‖² is zᵀ(ŷ−y).
        let mut cfg = tiny_config(HeadKind::Affine);
        cfg.encoder.n_layers = 0;
        let mut model = EncoderModel::new(cfg).unwrap();
        let x = window(9, 7);
        let target = window(3, 8);
        let (y, cache) = model.forward_cached(&x, None).unwrap();
        let resid: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        model.zero_grad();
        model.backward_cached(&cache, &resid).unwrap();

        let z = cache.head_input().clone();
        let HeadParams::Affine(g) = &model.grads.head else { unreachable!() };
        for i in 0..z.ncols() {
            for o in 0..3 {
                assert!((g.weight[(i, o)] - z[(0, i)] * resid[o]).abs() < 1e-12);
            }
        }
        for o in 0..3 {
            assert!((g.bias[(0, o)] - resid[o]).abs() < 1e-12);
        }
        // token projection: dL/dW_e = Pᵀ·dE with dE row j = reshape(W_h·r)_j
        let HeadParams::Affine(h) = &model.params.head else { unreachable!() };
        let r = DMatrix::from_row_slice(3, 1, &resid);
        let dflat = &h.weight * r;
        let patches = flattened_patches(&x, &cfg.delay).unwrap();
        let d = cfg.encoder.d_model;
        let de = DMatrix::from_fn(6, d, |j, c| dflat[(j * d + c, 0)]);
        let expected = patches.transpose() * de;
        assert!((&model.grads.token_proj.weight - expected).abs().max() < 1e-12);
    }

    #[test]
    fn one_token_identity_attention() {
        // 1 token: lookback 4, m=4, p=1, q=4
        let cfg = ModelConfig {
            delay: DelayConfig { m: 4, tau: 1, p: 1, q: 4 },
            lookback: 4,
            encoder: EncoderConfig {
                d_model: 4,
                n_layers: 1,
                n_heads: 1,
                d_ff: 4,
                pool_kernel: 1,
                pool_stride: 1,
                horizon: 1,
                ..EncoderConfig::default()
            },
        };
        let mut model = EncoderModel::new(cfg).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        let layer = &mut model.params.layers[0];
        for lin in [&mut layer.query, &mut layer.key, &mut layer.value, &mut layer.output] {
            lin.weight = eye.clone();
            lin.bias.fill(0.0);
        }
        layer.ff_in.weight.fill(0.0);
        layer.ff_out.weight.fill(0.0);
        layer.ff_out.bias.fill(0.0);

        let token = DMatrix::from_row_slice(1, 4, &[0.3, -1.2, 2.0, 0.1]);
        let latent = encoder_forward(&token, &model, true).unwrap();
        let maps = latent.attention_maps.unwrap();
        assert_eq!(maps[0][0][(0, 0)], 1.0);
        let gamma = DMatrix::from_element(1, 4, 1.0);
        let beta = DMatrix::zeros(1, 4);
        let (expected, _) = ops::layer_norm(&(&token * 2.0), &gamma, &beta);
        assert!((&latent.tokens - expected).abs().max() < 1e-4);
    }

    #[test]
    fn zero_layers_is_identity() {
        let mut cfg = tiny_config(HeadKind::Affine);
        cfg.encoder.n_layers = 0;
        let model = EncoderModel::new(cfg).unwrap();
        let x = DMatrix::from_fn(6, 8, |r, c| (r as f64 - c as f64) * 0.1);
        assert_eq!(encoder_forward(&x, &model, false).unwrap().tokens, x);
    }

    #[test]
    fn layer_replay_and_stochastic_rows() {
        let cfg = tiny_config(HeadKind::Affine);
        let model = EncoderModel::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let latent = encoder_forward(&x, &model, true).unwrap();
        let maps = latent.attention_maps.as_ref().unwrap();
        for row in maps[0][0].row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        // independent replay of the layer formulas
        let l = &model.params.layers[0];
        let affine = |x: &DMatrix<f64>, lin: &Linear| {
            let mut y = DMatrix::zeros(x.nrows(), lin.fan_out());
            for r in 0..x.nrows() {
                for o in 0..lin.fan_out() {
                    let mut s = lin.bias[(0, o)];
                    for i in 0..lin.fan_in() {
                        s += x[(r, i)] * lin.weight[(i, o)];
                    }
                    y[(r, o)] = s;
                }
            }
            y
        };
        let norm = |x: &DMatrix<f64>, g: &DMatrix<f64>, b: &DMatrix<f64>| {
            DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
                let n = x.ncols() as f64;
                let mean: f64 = x.row(r).iter().sum::<f64>() / n;
                let var: f64 = x.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                g[(0, c)] * (x[(r, c)] - mean) / (var + 1e-5).sqrt() + b[(0, c)]
            })
        };
        let q = affine(&x, &l.query);
        let k = affine(&x, &l.key);
        let v = affine(&x, &l.value);
        let mut o = DMatrix::zeros(5, 8);
        for i in 0..5 {
            let scores: Vec<f64> = (0..5)
                .map(|j| (0..8).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / 8f64.sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            for j in 0..5 {
                for c in 0..8 {
                    o[(i, c)] += e[j] / tot * v[(j, c)];
                }
            }
        }
        let a = norm(&(&x + affine(&o, &l.output)), &l.norm1.gamma, &l.norm1.beta);
        let hidden = affine(&a, &l.ff_in).map(|z| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh()));
        let out = norm(&(&a + affine(&hidden, &l.ff_out)), &l.norm2.gamma, &l.norm2.beta);
        assert!((&latent.tokens - out).abs().max() < 1e-12);
    }

    #[test]
    fn embed_tokens_examples() {
        let cfg = tiny_config(HeadKind::Affine);
        let mut model = EncoderModel::new(cfg).unwrap();
        let x = window(9, 2);
        let grid = patch_grid(&x, &cfg.delay).unwrap();

        model.params.token_proj.weight.fill(0.0);
        model.params.token_proj.bias = DMatrix::from_fn(1, 8, |_, c| c as f64);
        let tokens = embed_tokens(&grid, &model).unwrap();
        for r in 0..6 {
            assert_eq!(tokens.row(r), model.params.token_proj.bias.row(0));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        model.params.token_proj.weight = DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
        let tokens = embed_tokens(&grid, &model).unwrap();
        let proj = &model.params.token_proj;
        for (j, patch) in grid.patches.iter().enumerate() {
            let flat = crate::embedding::flatten_patch(patch);
            for o in 0..8 {
                let mut s = proj.bias[(0, o)];
                for i in 0..4 {
                    s += proj.weight[(i, o)] * flat[i];
                }
                assert!((tokens[(j, o)] - s).abs() < 1e-12);
            }
        }

        let wrong = patch_grid(&x, &DelayConfig { m: 4, tau: 1, p: 3, q: 2 }).unwrap();
        assert!(matches!(embed_tokens(&wrong, &model), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn identity_projection_reproduces_patches() {
        let mut cfg = tiny_config(HeadKind::Affine);
        cfg.encoder.d_model = 4;
        cfg.encoder.n_heads = 1;
        let mut model = EncoderModel::new(cfg).unwrap();
        model.params.token_proj.weight = DMatrix::identity(4, 4);
        let x = window(9, 3);
        let grid = patch_grid(&x, &cfg.delay).unwrap();
        assert_eq!(embed_tokens(&grid, &model).unwrap(), grid.flattened());
    }

    #[test]
    fn head_examples() {
        let cfg = tiny_config(HeadKind::Affine);
        let mut model = EncoderModel::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tokens = DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0));
        let latent = LatentSequence { tokens: tokens.clone(), attention_maps: None };

        // dense matvec oracle
        let HeadParams::Affine(h) = &model.params.head else { unreachable!() };
        let y = forecast_head(&latent, &model).unwrap();
        for o in 0..3 {
            let mut s = h.bias[(0, o)];
            for r in 0..6 {
                for c in 0..8 {
                    s += tokens[(r, c)] * h.weight[(r * 8 + c, o)];
                }
            }
            assert!((y[o] - s).abs() < 1e-12);
        }

        let HeadParams::Affine(h) = &mut model.params.head else { unreachable!() };
        h.weight.fill(0.0);
        h.bias = DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]);
        assert_eq!(forecast_head(&latent, &model).unwrap(), vec![0.5, -1.0, 2.0]);

        // selector column
        let HeadParams::Affine(h) = &mut model.params.head else { unreachable!() };
        h.weight[(13, 1)] = 1.0;
        let y = forecast_head(&latent, &model).unwrap();
        assert_eq!(y[1], tokens[(1, 5)] - 1.0);
    }

    #[test]
    fn channel_shared_head_and_determinism() {
        let cfg = tiny_config(HeadKind::MlpGelu);
        let a = EncoderModel::new(cfg).unwrap();
        let b = EncoderModel::new(cfg).unwrap();
        assert_eq!(a.params, b.params);
        let x = window(9, 5);
        // two channels with identical windows
        assert_eq!(a.forecast(&x).unwrap(), a.forecast(&x.clone()).unwrap());
        assert_eq!(a.forecast(&x).unwrap(), b.forecast(&x).unwrap());
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = tiny_config(HeadKind::Affine);
        let mut cfg2 = cfg;
        cfg2.encoder.n_heads = 2;
        let model = EncoderModel::new(cfg2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0)) + positional_encoding(6, 8);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = DMatrix::from_fn(6, 8, |r, c| x[(perm[r], c)]);
        let out = encoder_forward(&x, &model, false).unwrap().tokens;
        let outp = encoder_forward(&xp, &model, false).unwrap().tokens;
        for r in 0..6 {
            for c in 0..8 {
                assert!((outp[(r, c)] - out[(perm[r], c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let mut cfg = tiny_config(HeadKind::Affine);
        cfg.encoder.dropout = 0.5;
        let model = EncoderModel::new(cfg).unwrap();
        let x = window(9, 6);
        let eval = model.forecast(&x).unwrap();
        let (cached_eval, _) = model.forward_cached(&x, None).unwrap();
        assert_eq!(eval, cached_eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, _) = model.forward_cached(&x, Some(&mut rng)).unwrap();
        assert_ne!(eval, train);
    }

    #[test]
    fn wrong_window_length_rejected() {
        let model = EncoderModel::new(tiny_config(HeadKind::Affine)).unwrap();
        assert!(matches!(model.forecast(&[0.0; 8]), Err(Error::DimensionMismatch(_))));
    }
}
