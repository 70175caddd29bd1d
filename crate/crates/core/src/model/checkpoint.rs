//! JSON checkpoint container: hyper-parameters, input scaling, seed and every
//! tensor with its declared shape. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureScaler, HyperParams, Model, ModelParams};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "tablegraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub hyper: HyperParams,
    pub scaler: FeatureScaler,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            hyper: model.hyper.clone(),
            scaler: model.scaler.clone(),
            tensors: model
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorRecord {
                    name,
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model, checking every tensor against the shapes implied
    /// by the stored hyper-parameters.
    pub fn into_model(self) -> Result<Model> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        self.hyper.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let s = &self.scaler;
        if s.vertex_mean.len() != crate::graph::VERTEX_FEATURES
            || s.vertex_std.len() != crate::graph::VERTEX_FEATURES
            || s.edge_mean.len() != crate::graph::EDGE_FEATURES
            || s.edge_std.len() != crate::graph::EDGE_FEATURES
        {
            return bad("feature scaler has the wrong width".into());
        }
        let mut params = ModelParams::zeros(&self.hyper);
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != self.tensors.len() {
            return bad(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            ));
        }
        for ((name, shape), rec) in expected.iter().zip(&self.tensors) {
            if *name != rec.name || *shape != rec.shape {
                return bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, name, shape
                ));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return bad(format!("tensor {} has {} values", rec.name, rec.data.len()));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return bad(format!("tensor {} holds non-finite values", rec.name));
            }
        }
        for (slot, rec) in params.tensors_mut().into_iter().zip(&self.tensors) {
            slot.copy_from_slice(&rec.data);
        }
        Ok(Model {
            hyper: self.hyper,
            scaler: self.scaler,
            params,
        })
    }
}

pub fn save_checkpoint(model: &Model, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model, seed))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(path.as_ref(), json.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, u64)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let seed = ckpt.seed;
    Ok((ckpt.into_model()?, seed))
}
