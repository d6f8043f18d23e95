//! Experiment configuration: one JSON document, every field defaulted and
//! overridable, hashed for provenance tagging of every output artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{LogBase, NoiseModel};
use crate::neural::TrainConfig;
use crate::qualify::GateParams;
use crate::solver::WmmseOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_links: usize,
    pub topo_seed_a: u64,
    pub topo_seed_b: u64,
    /// Labeled samples generated from topology A for the training stage.
    pub train_size: usize,
    /// Requests in the evaluation stream.
    pub test_size: usize,
    /// Ensemble size.
    pub m: usize,
    /// Hidden layer widths; input (N^2) and output (2N) are implied.
    pub layer_dims: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub nll_constant: f64,
    pub val_fraction: f64,
    pub patience: usize,
    /// Global-norm gradient clip during training; `null` disables.
    pub grad_clip: Option<f64>,
    /// Confidence-interval width multiplier.
    pub alpha: f64,
    /// Credibility threshold.
    pub epsilon: f64,
    /// Epsilon values swept when reporting gate sensitivity.
    pub eps_sweep: Vec<f64>,
    /// Enhanced samples accumulated before a retraining round fires.
    pub n_si: usize,
    pub p_max: f64,
    pub sigma2: f64,
    pub log_base: LogBase,
    pub wmmse_max_iter: usize,
    pub wmmse_tol: f64,
    /// Fraction of stream requests drawn from topology B.
    pub b_fraction: f64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_links: 10,
            topo_seed_a: 101,
            topo_seed_b: 202,
            train_size: 5000,
            test_size: 2000,
            m: 5,
            layer_dims: vec![1000, 1000, 500, 500, 100],
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            nll_constant: 0.0,
            val_fraction: 0.1,
            patience: 10,
            grad_clip: Some(10.0),
            alpha: 1.96,
            epsilon: 0.2,
            eps_sweep: vec![0.01, 0.02, 0.1, 0.2, 0.5],
            n_si: 1000,
            p_max: 1.0,
            sigma2: 1.0,
            log_base: LogBase::Natural,
            wmmse_max_iter: 500,
            wmmse_tol: 1e-5,
            b_fraction: 0.5,
            master_seed: 42,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serialization cannot fail");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 {
            return Err(Error::invalid("n_links must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::invalid("ensemble size m must be at least 1"));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::invalid("p_max must be positive"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.b_fraction) {
            return Err(Error::invalid("b_fraction must lie in [0, 1]"));
        }
        if self.n_si == 0 {
            return Err(Error::invalid("n_si must be at least 1"));
        }
        self.train_config().validate()
    }

    /// FNV-1a hash of the canonical JSON form, as a hex provenance tag.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in canonical.as_bytes() {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::new(self.sigma2).expect("validated config has positive sigma2")
    }

    pub fn gate_params(&self) -> GateParams {
        GateParams {
            alpha: self.alpha,
            epsilon: self.epsilon,
            p_max: self.p_max,
            log_base: self.log_base,
        }
    }

    pub fn wmmse_options(&self) -> WmmseOptions {
        WmmseOptions { p_max: self.p_max, max_iter: self.wmmse_max_iter, tol: self.wmmse_tol }
    }

    /// Training hyperparameters with the given derived seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            nll_constant: self.nll_constant,
            seed: self.master_seed,
            val_fraction: self.val_fraction,
            patience: self.patience,
            grad_clip: self.grad_clip,
        }
    }

    /// Full network shape: `[N^2, hidden..., 2N]`.
    pub fn full_layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layer_dims.len() + 2);
        dims.push(self.n_links * self.n_links);
        dims.extend_from_slice(&self.layer_dims);
        dims.push(2 * self.n_links);
        dims
    }
}
