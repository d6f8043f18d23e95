//! Dataset records and JSON-lines storage.
//!
//! One record per line: `topology_id`, the channel `seed`, the flattened
//! row-major gain matrix, and (in labeled datasets) the solver's power
//! allocation `p_star`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{
    gains_to_features, sample_channel, ChannelInstance, NoiseModel, PowerVector, Topology,
};
use crate::neural::LabeledSample;
use crate::seeds::derive_seed;
use crate::solver::{wmmse, WmmseOptions};

/// One stored channel instance, optionally labeled with a power allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub topology_id: String,
    pub seed: u64,
    /// Row-major `|h_nm|`, length `N^2`.
    pub gains: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_star: Option<Vec<f64>>,
}

impl DatasetRecord {
    pub fn from_instance(h: &ChannelInstance, p_star: Option<&PowerVector>) -> Self {
        DatasetRecord {
            topology_id: h.topology_id.clone(),
            seed: h.seed,
            gains: h.flat_gains(),
            p_star: p_star.map(|p| p.as_slice().to_vec()),
        }
    }

    pub fn n_links(&self) -> Result<usize> {
        let n = (self.gains.len() as f64).sqrt().round() as usize;
        if n * n != self.gains.len() || n == 0 {
            return Err(Error::Format(format!(
                "gains length {} is not a positive square",
                self.gains.len()
            )));
        }
        Ok(n)
    }

    pub fn instance(&self) -> Result<ChannelInstance> {
        let n = self.n_links()?;
        let gains = Array2::from_shape_vec((n, n), self.gains.clone())
            .map_err(|e| Error::Format(e.to_string()))?;
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Format("gains must be finite and nonnegative".into()));
        }
        Ok(ChannelInstance { topology_id: self.topology_id.clone(), seed: self.seed, gains })
    }

    /// Converts a labeled record into a training sample with targets
    /// normalized by `p_max`.
    pub fn labeled_sample(&self, p_max: f64) -> Result<LabeledSample> {
        let n = self.n_links()?;
        let p = self
            .p_star
            .as_ref()
            .ok_or_else(|| Error::Format("record is unlabeled (no p_star)".into()))?;
        if p.len() != n {
            return Err(Error::Format(format!(
                "p_star length {} does not match N = {n}",
                p.len()
            )));
        }
        let target: Vec<f64> = p.iter().map(|&x| (x / p_max).clamp(0.0, 1.0)).collect();
        LabeledSample::new(gains_to_features(&self.gains), target)
    }
}

/// Generates `count` labeled records from a topology. Sample `i` uses the
/// seed derived from `(master_seed, stream, i)` and is labeled with the
/// cold-started solver, so parallel and sequential generation agree.
pub fn generate_labeled(
    topo: &Topology,
    count: usize,
    master_seed: u64,
    stream: u64,
    noise: &NoiseModel,
    opts: &WmmseOptions,
) -> Result<Vec<DatasetRecord>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let h = sample_channel(topo, derive_seed(master_seed, stream, i as u64));
            let sol = wmmse(&h, noise, None, opts)?;
            Ok(DatasetRecord::from_instance(&h, Some(&sol.p)))
        })
        .collect()
}

/// Converts labeled records to training samples.
pub fn to_samples(records: &[DatasetRecord], p_max: f64) -> Result<Vec<LabeledSample>> {
    records.iter().map(|r| r.labeled_sample(p_max)).collect()
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset; parse failures name the offending line.
pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset { line: idx + 1, msg: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}
