//! Time-conditioned MLP noise predictor.
//!
//! The sinusoidal step embedding is projected by a learned matrix and added to
//! the first hidden pre-activation; hidden layers use SiLU and the output layer
//! is linear, so the prediction lives in the same space as the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{dim_err, param_err, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub emb_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, emb_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            emb_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return param_err(format!("widths must be positive: {self:?}"));
        }
        if self.emb_dim == 0 || !self.emb_dim.is_multiple_of(2) {
            return param_err(format!(
                "time embedding width must be even and positive, got {}",
                self.emb_dim
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (i, o) in self.layer_dims() {
            shapes.push(vec![i, o]);
            shapes.push(vec![o]);
        }
        shapes.push(vec![self.emb_dim, self.hidden[0]]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layer_dims().len() {
            names.push(format!("layer{l}.weight"));
            names.push(format!("layer{l}.bias"));
        }
        names.push("time_proj.weight".to_string());
        names
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Sinusoidal step embedding: interleaved `(sin(t/ωₖ), cos(t/ωₖ))` with
/// `ωₖ` geometric from 1 to 10000.
pub fn time_embed(t: usize, emb_dim: usize, steps: usize) -> Result<Tensor> {
    if emb_dim == 0 || !emb_dim.is_multiple_of(2) {
        return param_err(format!("embedding width must be even, got {emb_dim}"));
    }
    if t == 0 || t > steps {
        return param_err(format!("step {t} outside 1..={steps}"));
    }
    Ok(Tensor::from_vec(embed_row(t, emb_dim)))
}

fn embed_row(t: usize, emb_dim: usize) -> Vec<f64> {
    let k = emb_dim / 2;
    let mut out = Vec::with_capacity(emb_dim);
    for i in 0..k {
        let omega = if k == 1 {
            1.0
        } else {
            10000f64.powf(i as f64 / (k - 1) as f64)
        };
        let arg = t as f64 / omega;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    arch: Architecture,
    params: Vec<Tensor>,
    precision: Precision,
}

impl Denoiser {
    /// He-style uniform init, `U(±√(6/fan_in))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let bound = (6.0 / shape[0] as f64).sqrt();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape, data).expect("shape from architecture")
                }
            })
            .collect();
        Ok(Denoiser {
            arch,
            params,
            precision: Precision::F64,
        })
    }

    /// Rebuilds a model from a flat parameter vector in canonical order.
    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return dim_err(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                flat.len()
            ));
        }
        let mut params = Vec::new();
        let mut off = 0;
        for shape in arch.param_shapes() {
            let n: usize = shape.iter().product();
            params.push(Tensor::new(shape, flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Denoiser {
            arch,
            params,
            precision: Precision::F64,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Switches storage precision, rounding current values.
    pub fn set_precision(&mut self, p: Precision) {
        self.precision = p;
        self.apply_precision();
    }

    pub(crate) fn apply_precision(&mut self) {
        if self.precision == Precision::F64 {
            return;
        }
        for t in &mut self.params {
            for v in t.data_mut() {
                *v = self.precision.round(*v);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn map_params(&self, mut f: impl FnMut(f64) -> f64) -> Denoiser {
        let mut out = self.clone();
        for t in &mut out.params {
            for v in t.data_mut() {
                *v = f(*v);
            }
        }
        out.apply_precision();
        out
    }

    /// Zeroes the output layer so the model predicts zero everywhere.
    pub fn zero_output_layer(&mut self) {
        let n_layers = self.arch.layer_dims().len();
        for idx in [2 * (n_layers - 1), 2 * (n_layers - 1) + 1] {
            self.params[idx].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn as_batch(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.arch.input_dim;
        match x.shape() {
            [n] if *n == d => x.reshape(vec![1, d]),
            [_, c] if *c == d => Ok(x.clone()),
            s => dim_err(format!("model expects inputs of width {d}, got shape {s:?}")),
        }
    }

    /// Predicts the noise for a single sample `[d]` or a batch `[n, d]` at a
    /// step shared by all rows.
    pub fn predict_noise(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        if t == 0 {
            return param_err("steps are 1-based");
        }
        let batch = self.as_batch(x)?;
        let n_layers = self.arch.layer_dims().len();
        let emb = Tensor::from_vec(embed_row(t, self.arch.emb_dim)).reshape(vec![1, self.arch.emb_dim])?;
        let time_bias = emb.matmul(&self.params[2 * n_layers])?;
        let mut h = batch.matmul(&self.params[0])?.add_row(&self.params[1])?;
        h = h.add_row(&time_bias)?;
        for l in 1..n_layers {
            h = h.silu().matmul(&self.params[2 * l])?.add_row(&self.params[2 * l + 1])?;
        }
        h.reshape(x.shape().to_vec())
    }

    /// Records a differentiable forward pass for a batch with per-row steps.
    /// `params` are the graph leaves for `self.params()` in canonical order.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], x: Var, steps: &[usize]) -> Result<Var> {
        let (n, d) = g.value(x).dims2()?;
        if d != self.arch.input_dim || n != steps.len() {
            return dim_err(format!(
                "batch [{n},{d}] with {} steps for a width-{} model",
                steps.len(),
                self.arch.input_dim
            ));
        }
        if steps.contains(&0) {
            return param_err("steps are 1-based");
        }
        let n_layers = self.arch.layer_dims().len();
        let emb_dim = self.arch.emb_dim;
        let emb_data: Vec<f64> = steps.iter().flat_map(|&t| embed_row(t, emb_dim)).collect();
        let emb = g.constant(Tensor::matrix(n, emb_dim, emb_data)?);
        let time = g.matmul(emb, params[2 * n_layers])?;
        let mut h = g.matmul(x, params[0])?;
        h = g.add_row(h, params[1])?;
        h = g.add(h, time)?;
        for l in 1..n_layers {
            let a = g.silu(h);
            let z = g.matmul(a, params[2 * l])?;
            h = g.add_row(z, params[2 * l + 1])?;
        }
        Ok(h)
    }

    /// Registers every parameter as a trainable leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }
}
