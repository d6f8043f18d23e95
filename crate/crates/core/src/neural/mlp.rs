use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on every predicted variance.
pub const VAR_FLOOR: f64 = 1e-6;

/// Hidden-layer nonlinearity tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Weights of one feed-forward network.
///
/// `layer_dims = [input, hidden..., output]` with an even output width `2N`:
/// `N` mean outputs followed by `N` variance outputs. `weights[l]` has shape
/// `(layer_dims[l+1], layer_dims[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of regression targets (`N`); the raw output width is `2N`.
    pub fn n_targets(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1] / 2
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Checks the dimensional chain and finiteness of all parameters.
    pub fn validate(&self) -> Result<()> {
        validate_dims(&self.layer_dims)?;
        if self.weights.len() != self.layer_dims.len() - 1 || self.biases.len() != self.weights.len()
        {
            return Err(Error::invalid("layer count does not match layer_dims"));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (out_dim, in_dim) = (self.layer_dims[l + 1], self.layer_dims[l]);
            if w.shape() != [out_dim, in_dim] || b.len() != out_dim {
                return Err(Error::invalid(format!("layer {l} shape mismatch")));
            }
            if w.iter().any(|x| !x.is_finite()) || b.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("need at least input and output dimensions"));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    let out = layer_dims[layer_dims.len() - 1];
    if out % 2 != 0 {
        return Err(Error::invalid(format!(
            "output width must be even (mean and variance heads), got {out}"
        )));
    }
    Ok(())
}

/// One training pair: flattened gains and normalized target powers in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if target.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::invalid("targets must lie in [0, 1]"));
        }
        Ok(LabeledSample { features, target })
    }
}

/// Per-layer gradients, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// Fan-in-scaled zero-mean initialization; biases start at zero.
pub fn init_params(layer_dims: &[usize], rng: &mut impl Rng) -> Result<MlpParams> {
    validate_dims(layer_dims)?;
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for l in 0..layer_dims.len() - 1 {
        let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams { layer_dims: layer_dims.to_vec(), weights, biases, activation: Activation::Relu })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct ForwardPass {
    /// Pre-activations per layer.
    zs: Vec<Array2<f64>>,
    /// `acts[0]` is the input; `acts[l+1] = relu(zs[l])` for hidden layers.
    acts: Vec<Array2<f64>>,
    mu: Array2<f64>,
    sigma2: Array2<f64>,
}

fn run_forward(params: &MlpParams, x: &Array2<f64>) -> ForwardPass {
    let n_layers = params.n_layers();
    let mut zs = Vec::with_capacity(n_layers);
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for l in 0..n_layers {
        let z = acts[l].dot(&params.weights[l].t()) + &params.biases[l];
        if l + 1 < n_layers {
            acts.push(z.mapv(|v| v.max(0.0)));
        } else {
            acts.push(z.clone()); // unused; keeps indices aligned
        }
        zs.push(z);
    }
    let n = params.n_targets();
    let z_out = &zs[n_layers - 1];
    let mu = z_out.slice(s![.., ..n]).mapv(sigmoid);
    let sigma2 = z_out.slice(s![.., n..]).mapv(|v| softplus(v) + VAR_FLOOR);
    ForwardPass { zs, acts, mu, sigma2 }
}

/// Batched forward pass: rows of `x` are samples.
pub fn forward_batch(params: &MlpParams, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match input width {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let pass = run_forward(params, x);
    Ok((pass.mu, pass.sigma2))
}

/// Single-sample forward pass: per-link means in (0,1) and variances
/// `>= VAR_FLOOR`.
pub fn forward(params: &MlpParams, features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = Array2::from_shape_vec((1, features.len()), features.to_vec())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let (mu, sigma2) = forward_batch(params, &x)?;
    Ok((mu.row(0).to_vec(), sigma2.row(0).to_vec()))
}

/// Per-link Gaussian negative log-likelihood, averaged over links:
/// `mean_n [ log(sigma2_n)/2 + (target_n - mu_n)^2 / (2 sigma2_n) ] + c`.
pub fn nll_loss(mu: &[f64], sigma2: &[f64], target: &[f64], c: f64) -> Result<f64> {
    if mu.len() != sigma2.len() || mu.len() != target.len() || mu.is_empty() {
        return Err(Error::invalid("mean, variance, and target lengths must match"));
    }
    let mut acc = 0.0;
    for ((&m, &s2), &t) in mu.iter().zip(sigma2).zip(target) {
        if !(s2 > 0.0) {
            return Err(Error::invalid(format!("variance must be positive, got {s2}")));
        }
        let r = t - m;
        acc += s2.ln() / 2.0 + r * r / (2.0 * s2);
    }
    Ok(acc / mu.len() as f64 + c)
}

/// Mean NLL of a parameter set over a batch.
pub fn nll_batch(params: &MlpParams, batch: &[LabeledSample], c: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must not be empty"));
    }
    let (x, t) = stack_batch(params, batch)?;
    let pass = run_forward(params, &x);
    let mut acc = 0.0;
    for b in 0..batch.len() {
        let mut per_link = 0.0;
        for n in 0..params.n_targets() {
            let r = t[[b, n]] - pass.mu[[b, n]];
            let s2 = pass.sigma2[[b, n]];
            per_link += s2.ln() / 2.0 + r * r / (2.0 * s2);
        }
        acc += per_link / params.n_targets() as f64 + c;
    }
    Ok(acc / batch.len() as f64)
}

fn stack_batch(params: &MlpParams, batch: &[LabeledSample]) -> Result<(Array2<f64>, Array2<f64>)> {
    let (in_dim, n) = (params.input_dim(), params.n_targets());
    let mut x = Array2::zeros((batch.len(), in_dim));
    let mut t = Array2::zeros((batch.len(), n));
    for (b, sample) in batch.iter().enumerate() {
        if sample.features.len() != in_dim || sample.target.len() != n {
            return Err(Error::invalid(format!("sample {b} dimensions do not match network")));
        }
        for (j, &v) in sample.features.iter().enumerate() {
            x[[b, j]] = v;
        }
        for (j, &v) in sample.target.iter().enumerate() {
            t[[b, j]] = v;
        }
    }
    Ok((x, t))
}

/// Exact reverse-mode gradients of the mean batch NLL.
pub fn backward(params: &MlpParams, batch: &[LabeledSample]) -> Result<Gradients> {
    Ok(backward_with_loss(params, batch, 0.0)?.0)
}

/// Gradients plus the batch loss from the same forward pass.
pub(crate) fn backward_with_loss(
    params: &MlpParams,
    batch: &[LabeledSample],
    c: f64,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must not be empty"));
    }
    let (x, t) = stack_batch(params, batch)?;
    let pass = run_forward(params, &x);
    let (b_sz, n) = (batch.len(), params.n_targets());
    let coef = 1.0 / (b_sz as f64 * n as f64);

    let mut loss = 0.0;
    let n_layers = params.n_layers();
    // Gradient w.r.t. the output pre-activations.
    let mut d_z = Array2::zeros((b_sz, 2 * n));
    let z_out = &pass.zs[n_layers - 1];
    for b in 0..b_sz {
        for j in 0..n {
            let mu = pass.mu[[b, j]];
            let s2 = pass.sigma2[[b, j]];
            let r = t[[b, j]] - mu;
            loss += (s2.ln() / 2.0 + r * r / (2.0 * s2)) * coef;
            // d loss / d mu times sigmoid'(z)
            d_z[[b, j]] = -r / s2 * mu * (1.0 - mu) * coef;
            // d loss / d sigma2 times softplus'(z)
            let dl_ds2 = 0.5 / s2 - r * r / (2.0 * s2 * s2);
            d_z[[b, n + j]] = dl_ds2 * sigmoid(z_out[[b, n + j]]) * coef;
        }
    }
    loss += c;

    let mut grads = Gradients::zeros_like(params);
    for l in (0..n_layers).rev() {
        grads.weights[l] = d_z.t().dot(&pass.acts[l]);
        grads.biases[l] = d_z.sum_axis(Axis(0));
        if l > 0 {
            let d_act = d_z.dot(&params.weights[l]);
            let z_prev = &pass.zs[l - 1];
            d_z = d_act * z_prev.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        }
    }
    Ok((grads, loss))
}
