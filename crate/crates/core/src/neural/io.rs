use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::mlp::{Activation, MlpParams};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// On-disk model schema.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<LayerWeights>,
    pub created_from_config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl ModelFile {
    pub fn from_params(params: &MlpParams, config_hash: &str) -> Self {
        let weights = params
            .weights
            .iter()
            .zip(&params.biases)
            .map(|(w, b)| LayerWeights {
                w: w.rows().into_iter().map(|r| r.to_vec()).collect(),
                b: b.to_vec(),
            })
            .collect();
        ModelFile {
            version: MODEL_SCHEMA_VERSION,
            layer_dims: params.layer_dims.clone(),
            activation: params.activation,
            weights,
            created_from_config_hash: config_hash.to_string(),
        }
    }

    pub fn into_params(self) -> Result<MlpParams> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.weights.len());
        for (l, layer) in self.weights.into_iter().enumerate() {
            let rows = layer.w.len();
            let cols = layer.w.first().map_or(0, Vec::len);
            if layer.w.iter().any(|r| r.len() != cols) {
                return Err(Error::Format(format!("layer {l} has ragged weight rows")));
            }
            let flat: Vec<f64> = layer.w.into_iter().flatten().collect();
            let w = Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| Error::Format(e.to_string()))?;
            weights.push(w);
            biases.push(Array1::from_vec(layer.b));
        }
        let params = MlpParams {
            layer_dims: self.layer_dims,
            weights,
            biases,
            activation: self.activation,
        };
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(params)
    }
}

/// Serializes a model to its versioned JSON form.
pub fn save_model(params: &MlpParams, config_hash: &str) -> Vec<u8> {
    serde_json::to_vec(&ModelFile::from_params(params, config_hash))
        .expect("model serialization cannot fail")
}

/// Parses a model file, checking the schema version before anything else.
pub fn load_model(bytes: &[u8]) -> Result<MlpParams> {
    let probe: VersionProbe =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("bad model file: {e}")))?;
    if probe.version != MODEL_SCHEMA_VERSION {
        return Err(Error::Version { found: probe.version, expected: MODEL_SCHEMA_VERSION });
    }
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("bad model file: {e}")))?;
    file.into_params()
}
