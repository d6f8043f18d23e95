//! From-scratch feed-forward regressor with per-link mean and variance heads.
//!
//! The network maps the flattened channel gain matrix to `2N` outputs: the
//! first `N` pass through a sigmoid (normalized powers), the last `N` through
//! a softplus plus a small floor (predictive variances). Training minimizes
//! the per-link Gaussian negative log-likelihood with Adam.

mod io;
mod mlp;
mod optim;

pub use io::{load_model, save_model, ModelFile, MODEL_SCHEMA_VERSION};
pub use mlp::{
    backward, forward, forward_batch, init_params, nll_batch, nll_loss, Activation, Gradients,
    LabeledSample, MlpParams, VAR_FLOOR,
};
pub use optim::{adam_step, train, AdamState, TrainConfig, TrainOutcome};
