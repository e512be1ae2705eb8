use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::HeadKind;

/// Which optimizer group a tensor belongs to. Fine-tuning updates only `Head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

/// Affine map `y = x·W + b` acting on row vectors; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: DMatrix::zeros(fan_in, fan_out),
            bias: DMatrix::zeros(1, fan_out),
        }
    }

    /// Uniform in `±sqrt(6/(fan_in+fan_out))`, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
            bias: DMatrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        super::ops::add_row(&mut y, &self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Linear) -> DMatrix<f64> {
        grad.weight += x.tr_mul(dy);
        super::ops::accumulate_column_sums(&mut grad.bias, dy);
        dy * self.weight.transpose()
    }

    /// Gradient accumulation without the input gradient.
    pub fn backward_params(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Linear) {
        grad.weight += x.tr_mul(dy);
        super::ops::accumulate_column_sums(&mut grad.bias, dy);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl NormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: DMatrix::from_element(1, d, 1.0),
            beta: DMatrix::zeros(1, d),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            gamma: DMatrix::zeros(1, d),
            beta: DMatrix::zeros(1, d),
        }
    }
}

/// One post-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: NormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: NormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Affine(Linear),
    MlpGelu { hidden: Linear, out: Linear },
}

/// Every trainable tensor of the model. Also used, zero-filled, as the
/// gradient buffer and as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_proj: Linear,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// Shape description of the parameter set.
#[derive(Debug, Clone, Copy)]
pub struct ParamShape {
    pub patch_width: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub head_input: usize,
    pub head_hidden: usize,
    pub horizon: usize,
    pub head: HeadKind,
}

impl Params {
    pub fn init(shape: &ParamShape, rng: &mut ChaCha8Rng) -> Self {
        let d = shape.d_model;
        let token_proj = Linear::xavier(shape.patch_width, d, rng);
        let layers = (0..shape.n_layers)
            .map(|_| LayerParams {
                query: Linear::xavier(d, d, rng),
                key: Linear::xavier(d, d, rng),
                value: Linear::xavier(d, d, rng),
                output: Linear::xavier(d, d, rng),
                norm1: NormParams::identity(d),
                ff_in: Linear::xavier(d, shape.d_ff, rng),
                ff_out: Linear::xavier(shape.d_ff, d, rng),
                norm2: NormParams::identity(d),
            })
            .collect();
        let head = match shape.head {
            HeadKind::Affine => HeadParams::Affine(Linear::xavier(shape.head_input, shape.horizon, rng)),
            HeadKind::MlpGelu => HeadParams::MlpGelu {
                hidden: Linear::xavier(shape.head_input, shape.head_hidden, rng),
                out: Linear::xavier(shape.head_hidden, shape.horizon, rng),
            },
        };
        Self {
            token_proj,
            layers,
            head,
        }
    }

    pub fn zeros(shape: &ParamShape) -> Self {
        let d = shape.d_model;
        let layers = (0..shape.n_layers)
            .map(|_| LayerParams {
                query: Linear::zeros(d, d),
                key: Linear::zeros(d, d),
                value: Linear::zeros(d, d),
                output: Linear::zeros(d, d),
                norm1: NormParams::zeros(d),
                ff_in: Linear::zeros(d, shape.d_ff),
                ff_out: Linear::zeros(shape.d_ff, d),
                norm2: NormParams::zeros(d),
            })
            .collect();
        let head = match shape.head {
            HeadKind::Affine => HeadParams::Affine(Linear::zeros(shape.head_input, shape.horizon)),
            HeadKind::MlpGelu => HeadParams::MlpGelu {
                hidden: Linear::zeros(shape.head_input, shape.head_hidden),
                out: Linear::zeros(shape.head_hidden, shape.horizon),
            },
        };
        Self {
            token_proj: Linear::zeros(shape.patch_width, d),
            layers,
            head,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill(0.0);
        out
    }

    pub fn fill(&mut self, value: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, &DMatrix<f64>)> {
        let mut out = Vec::new();
        let enc = ParamGroup::Encoder;
        out.push(("token_proj.weight".to_string(), enc, &self.token_proj.weight));
        out.push(("token_proj.bias".to_string(), enc, &self.token_proj.bias));
        for (i, layer) in self.layers.iter().enumerate() {
            let named = [
                ("query.weight", &layer.query.weight),
                ("query.bias", &layer.query.bias),
                ("key.weight", &layer.key.weight),
                ("key.bias", &layer.key.bias),
                ("value.weight", &layer.value.weight),
                ("value.bias", &layer.value.bias),
                ("output.weight", &layer.output.weight),
                ("output.bias", &layer.output.bias),
                ("norm1.gamma", &layer.norm1.gamma),
                ("norm1.beta", &layer.norm1.beta),
                ("ff_in.weight", &layer.ff_in.weight),
                ("ff_in.bias", &layer.ff_in.bias),
                ("ff_out.weight", &layer.ff_out.weight),
                ("ff_out.bias", &layer.ff_out.bias),
                ("norm2.gamma", &layer.norm2.gamma),
                ("norm2.beta", &layer.norm2.beta),
            ];
            for (name, t) in named {
                out.push((format!("layers.{i}.{name}"), enc, t));
            }
        }
        let head = ParamGroup::Head;
        match &self.head {
            HeadParams::Affine(lin) => {
                out.push(("head.weight".to_string(), head, &lin.weight));
                out.push(("head.bias".to_string(), head, &lin.bias));
            }
            HeadParams::MlpGelu { hidden, out: o } => {
                out.push(("head.hidden.weight".to_string(), head, &hidden.weight));
                out.push(("head.hidden.bias".to_string(), head, &hidden.bias));
                out.push(("head.out.weight".to_string(), head, &o.weight));
                out.push(("head.out.bias".to_string(), head, &o.bias));
            }
        }
        out
    }

    /// Mutable tensors, same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut DMatrix<f64>)> {
        let mut out = Vec::new();
        let enc = ParamGroup::Encoder;
        let Params {
            token_proj,
            layers,
            head,
        } = self;
        out.push(("token_proj.weight".to_string(), enc, &mut token_proj.weight));
        out.push(("token_proj.bias".to_string(), enc, &mut token_proj.bias));
        for (i, layer) in layers.iter_mut().enumerate() {
            let LayerParams {
                query,
                key,
                value,
                output,
                norm1,
                ff_in,
                ff_out,
                norm2,
            } = layer;
            let named = [
                ("query.weight", &mut query.weight),
                ("query.bias", &mut query.bias),
                ("key.weight", &mut key.weight),
                ("key.bias", &mut key.bias),
                ("value.weight", &mut value.weight),
                ("value.bias", &mut value.bias),
                ("output.weight", &mut output.weight),
                ("output.bias", &mut output.bias),
                ("norm1.gamma", &mut norm1.gamma),
                ("norm1.beta", &mut norm1.beta),
                ("ff_in.weight", &mut ff_in.weight),
                ("ff_in.bias", &mut ff_in.bias),
                ("ff_out.weight", &mut ff_out.weight),
                ("ff_out.bias", &mut ff_out.bias),
                ("norm2.gamma", &mut norm2.gamma),
                ("norm2.beta", &mut norm2.beta),
            ];
            for (name, t) in named {
                out.push((format!("layers.{i}.{name}"), enc, t));
            }
        }
        let hg = ParamGroup::Head;
        match head {
            HeadParams::Affine(lin) => {
                out.push(("head.weight".to_string(), hg, &mut lin.weight));
                out.push(("head.bias".to_string(), hg, &mut lin.bias));
            }
            HeadParams::MlpGelu { hidden, out: o } => {
                out.push(("head.hidden.weight".to_string(), hg, &mut hidden.weight));
                out.push(("head.hidden.bias".to_string(), hg, &mut hidden.bias));
                out.push(("head.out.weight".to_string(), hg, &mut o.weight));
                out.push(("head.out.bias".to_string(), hg, &mut o.bias));
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn count_in(&self, group: ParamGroup) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the bit patterns of one parameter group, hex encoded.
    pub fn group_hash(&self, group: ParamGroup) -> String {
        let mut hasher = Sha256::new();
        for (name, g, t) in self.tensors() {
            if g != group {
                continue;
            }
            hasher.update(name.as_bytes());
            for v in row_major(t) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Row-major iteration over a matrix.
pub(crate) fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}
