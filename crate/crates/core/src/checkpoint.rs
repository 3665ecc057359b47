//! Versioned JSON container for a trained model.
//!
//! The file holds every named parameter array (name, shape, values in
//! row-major order), the model spec and data shape, the normalization
//! needed to map predictions back to raw units, and an opaque copy of the
//! resolved run configuration. Readers accept any version up to their own.

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ModelState};
use crate::numerics::DenseMatrix;
use crate::params::ParamSet;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "mtgp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub n_tasks: usize,
    pub input_dim: usize,
    pub task_sizes: Vec<usize>,
    #[serde(default)]
    pub task_names: Vec<String>,
    pub normalization: Option<Normalization<f64>>,
    pub params: Vec<NamedArray>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn from_state(
        state: &ModelState<f64>,
        normalization: Option<Normalization<f64>>,
        task_names: Vec<String>,
        config: serde_json::Value,
    ) -> Self {
        let params = state
            .params
            .groups()
            .map(|(name, m)| NamedArray { name: name.to_string(), shape: [m.rows(), m.cols()], values: m.as_slice().to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: state.spec.clone(),
            n_tasks: state.n_tasks,
            input_dim: state.input_dim,
            task_sizes: state.task_sizes.clone(),
            task_names,
            normalization,
            params,
            config,
        }
    }

    pub fn to_state(&self) -> Result<ModelState<f64>> {
        let mut params = ParamSet::new();
        for a in &self.params {
            let m = DenseMatrix::from_vec(a.shape[0], a.shape[1], a.values.clone())
                .map_err(|_| Error::SchemaMismatch(format!("array `{}` does not match its shape", a.name)))?;
            params.insert(a.name.clone(), m);
        }
        Ok(ModelState {
            spec: self.spec.clone(),
            n_tasks: self.n_tasks,
            input_dim: self.input_dim,
            task_sizes: self.task_sizes.clone(),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.params.iter().any(|a| a.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient { group: "checkpoint parameters".into() });
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::SchemaMismatch(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version > CHECKPOINT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint version {} is newer than supported version {CHECKPOINT_VERSION}",
                ck.version
            )));
        }
        Ok(ck)
    }
}
