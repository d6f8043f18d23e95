//! Deep ensembles: `M` independently seeded networks whose outputs form a
//! uniformly weighted Gaussian mixture. The mixture variance splits exactly
//! into an aleatoric part (mean of member variances) and an epistemic part
//! (spread of member means).

use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::PowerVector;
use crate::neural::{
    forward, init_params, train, LabeledSample, MlpParams, ModelFile, TrainConfig,
};
use crate::seeds::{derive_seed, STREAM_MEMBER};

pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;

/// A set of independently trained members with identical architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<MlpParams>,
}

impl Ensemble {
    pub fn new(members: Vec<MlpParams>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one member"))?;
        if members.iter().any(|m| m.layer_dims != first.layer_dims) {
            return Err(Error::invalid("ensemble members must share layer dimensions"));
        }
        Ok(Ensemble { members })
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn n_targets(&self) -> usize {
        self.members[0].n_targets()
    }
}

/// Mixture moments of the ensemble for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// Mixture mean per link, normalized power in (0, 1).
    pub mean: Vec<f64>,
    /// Mean of member variances.
    pub aleatoric_var: Vec<f64>,
    /// Variance of member means, clamped at zero.
    pub epistemic_var: Vec<f64>,
    /// `aleatoric_var + epistemic_var`.
    pub total_var: Vec<f64>,
}

impl EnsemblePrediction {
    /// Predicted physical powers: mixture mean rescaled by `p_max`.
    pub fn power(&self, p_max: f64) -> PowerVector {
        PowerVector::new(self.mean.iter().map(|&m| (m * p_max).clamp(0.0, p_max)).collect(), p_max)
            .expect("sigmoid means rescale to a feasible power")
    }
}

/// An ensemble together with its members' training curves.
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub ensemble: Ensemble,
    pub curves: Vec<MemberCurve>,
}

#[derive(Debug, Clone)]
pub struct MemberCurve {
    pub member: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains `m` members, each from a distinct derived seed, independently on
/// the full dataset. Members run in parallel; results do not depend on the
/// thread count.
pub fn train_ensemble(
    m: usize,
    layer_dims: &[usize],
    dataset: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainedEnsemble> {
    if m == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset must not be empty"));
    }
    let outcomes: Result<Vec<_>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let member_seed = derive_seed(cfg.seed, STREAM_MEMBER, i as u64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(member_seed);
            let params = init_params(layer_dims, &mut rng)?;
            let member_cfg = TrainConfig { seed: member_seed, ..cfg.clone() };
            train(params, dataset, &member_cfg)
        })
        .collect();
    let outcomes = outcomes?;
    let mut members = Vec::with_capacity(m);
    let mut curves = Vec::with_capacity(m);
    for (i, out) in outcomes.into_iter().enumerate() {
        curves.push(MemberCurve {
            member: i,
            train_loss: out.train_loss,
            val_loss: out.val_loss,
            best_epoch: out.best_epoch,
            epochs_run: out.epochs_run,
        });
        members.push(out.params);
    }
    Ok(TrainedEnsemble { ensemble: Ensemble::new(members)?, curves })
}

/// Uniform-mixture moments over all members for one feature vector.
pub fn predict(ens: &Ensemble, features: &[f64]) -> Result<EnsemblePrediction> {
    let n = ens.n_targets();
    let m = ens.m() as f64;
    let mut mean = vec![0.0; n];
    let mut mean_sq = vec![0.0; n];
    let mut aleatoric = vec![0.0; n];
    for member in ens.members() {
        let (mu, s2) = forward(member, features)?;
        for k in 0..n {
            mean[k] += mu[k] / m;
            mean_sq[k] += mu[k] * mu[k] / m;
            aleatoric[k] += s2[k] / m;
        }
    }
    let mut epistemic = vec![0.0; n];
    let mut total = vec![0.0; n];
    for k in 0..n {
        let raw = mean_sq[k] - mean[k] * mean[k];
        debug_assert!(raw >= -1e-12, "mixture variance identity violated: {raw}");
        epistemic[k] = raw.max(0.0);
        total[k] = aleatoric[k] + epistemic[k];
    }
    Ok(EnsemblePrediction { mean, aleatoric_var: aleatoric, epistemic_var: epistemic, total_var: total })
}

/// Elementwise square root of the epistemic variance.
pub fn epistemic_std(pred: &EnsemblePrediction) -> Vec<f64> {
    pred.epistemic_var.iter().map(|&v| v.sqrt()).collect()
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    version: u32,
    #[serde(rename = "M")]
    m: usize,
    members: Vec<ModelFile>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Serializes an ensemble to its versioned JSON form.
pub fn save_ensemble(ens: &Ensemble, config_hash: &str) -> Vec<u8> {
    let file = EnsembleFile {
        version: ENSEMBLE_SCHEMA_VERSION,
        m: ens.m(),
        members: ens.members().iter().map(|p| ModelFile::from_params(p, config_hash)).collect(),
    };
    serde_json::to_vec(&file).expect("ensemble serialization cannot fail")
}

pub fn load_ensemble(bytes: &[u8]) -> Result<Ensemble> {
    let probe: VersionProbe = serde_json::from_slice(bytes)
        .map_err(|e| Error::Format(format!("bad ensemble file: {e}")))?;
    if probe.version != ENSEMBLE_SCHEMA_VERSION {
        return Err(Error::Version { found: probe.version, expected: ENSEMBLE_SCHEMA_VERSION });
    }
    let file: EnsembleFile = serde_json::from_slice(bytes)
        .map_err(|e| Error::Format(format!("bad ensemble file: {e}")))?;
    if file.members.len() != file.m {
        return Err(Error::Format(format!(
            "member count {} does not match m = {}",
            file.members.len(),
            file.m
        )));
    }
    let members: Result<Vec<MlpParams>> =
        file.members.into_iter().map(ModelFile::into_params).collect();
    Ensemble::new(members?)
}
