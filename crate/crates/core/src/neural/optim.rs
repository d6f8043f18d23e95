use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::mlp::{backward_with_loss, nll_batch, Gradients, LabeledSample, MlpParams};
use crate::seeds::{rng_from, STREAM_SHUFFLE};

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Constant added to the NLL; does not affect gradients.
    pub nll_constant: f64,
    pub seed: u64,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global-norm gradient clip; `None` disables clipping. The NLL's
    /// residual term explodes when a predicted variance sits near its floor,
    /// so unclipped steps can destroy an otherwise converged mean head.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            nll_constant: 0.0,
            seed: 0,
            val_fraction: 0.1,
            patience: 10,
            grad_clip: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive when set"));
            }
        }
        Ok(())
    }
}

/// Scales gradients so their global L2 norm does not exceed `max_norm`.
fn clip_global_norm(grads: &mut Gradients, max_norm: f64) {
    let mut sq = 0.0;
    for w in &grads.weights {
        sq += w.iter().map(|x| x * x).sum::<f64>();
    }
    for b in &grads.biases {
        sq += b.iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for w in &mut grads.weights {
            w.mapv_inplace(|x| x * scale);
        }
        for b in &mut grads.biases {
            b.mapv_inplace(|x| x * scale);
        }
    }
}

/// First/second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m_w: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for l in 0..params.weights.len() {
        azip_update(
            params.weights[l].as_slice_mut().unwrap(),
            grads.weights[l].as_slice().unwrap(),
            state.m_w[l].as_slice_mut().unwrap(),
            state.v_w[l].as_slice_mut().unwrap(),
            cfg,
            bc1,
            bc2,
        );
        azip_update(
            params.biases[l].as_slice_mut().unwrap(),
            grads.biases[l].as_slice().unwrap(),
            state.m_b[l].as_slice_mut().unwrap(),
            state.v_b[l].as_slice_mut().unwrap(),
            cfg,
            bc1,
            bc2,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Mean batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch; empty when no validation split was made.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept (0-based).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Mini-batch training with a seeded shuffle, a held-out validation split,
/// and early stopping. Returns the parameters of the best validation epoch
/// (the final epoch when no split is active).
pub fn train(params: MlpParams, dataset: &[LabeledSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset must not be empty"));
    }
    let mut params = params;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            best_epoch: 0,
            epochs_run: 0,
        });
    }

    // Seeded split: the tail of one fixed permutation is the validation set.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from(cfg.seed, STREAM_SHUFFLE, 0));
    let n_val = (dataset.len() as f64 * cfg.val_fraction).floor() as usize;
    let (train_idx, val_idx) = order.split_at(dataset.len() - n_val);
    let mut train_idx: Vec<usize> = train_idx.to_vec();
    let val_set: Vec<LabeledSample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();

    let mut state = AdamState::new(&params);
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_improve = 0;
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng_from(cfg.seed, STREAM_SHUFFLE, 1 + epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<LabeledSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (mut grads, loss) = backward_with_loss(&params, &batch, cfg.nll_constant)?;
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut state, cfg);
            epoch_loss += loss;
            batches += 1;
        }
        train_curve.push(epoch_loss / batches as f64);
        epochs_run = epoch + 1;

        if !val_set.is_empty() {
            let vl = nll_batch(&params, &val_set, cfg.nll_constant)?;
            val_curve.push(vl);
            if vl < best_val {
                best_val = vl;
                best = params.clone();
                best_epoch = epoch;
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= cfg.patience {
                    break;
                }
            }
        } else {
            best = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome { params: best, train_loss: train_curve, val_loss: val_curve, best_epoch, epochs_run })
}
