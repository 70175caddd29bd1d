//! Bipartite graph-attention edge classifier.

mod checkpoint;
mod forward;
mod params;
mod train;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{
    attention_block, backward, bipartite_neighborhoods, forward, forward_with, graph_attention, normalize_rows, Bipartite,
    Direction, DropoutMasks, ForwardTrace, MaskSource, Mode, Neighborhoods, NoDropout, ReplayMasks,
    LAYER_NORM_EPS,
};
pub use params::{expected_param_count, AttentionBlockParams, BlockPair, ModelParams};
pub use train::{loss, loss_and_grad, train, Adam, TrainLog, Trainer};

use crate::error::{Error, Result};
use crate::graph::{CellGraph, EDGE_FEATURES, VERTEX_FEATURES};
use crate::types::RelationLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub blocks: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Loss weights indexed by [`RelationLabel::index`].
    pub class_weights: [f64; 3],
    pub epochs: usize,
    pub k: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            blocks: 4,
            dim: 64,
            ff_dim: 256,
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            dropout: 0.4,
            class_weights: [1.0, 1.0, 0.2],
            epochs: 15,
            k: 20,
        }
    }
}

impl HyperParams {
    /// Sets the model width and the feed-forward width (`4 * dim`).
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.ff_dim = 4 * dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.blocks == 0 || self.dim == 0 || self.ff_dim == 0 || self.k == 0 {
            return bad("blocks, dim, ff_dim and k must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return bad("learning rate and weight decay must be non-negative, epsilon positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.class_weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return bad("class weights must be positive");
        }
        Ok(())
    }
}

/// Fixed per-feature standardization fitted on the training graphs.
///
/// Raw features mix page-point magnitudes with unit ratios; standardizing them
/// keeps first-layer attention logits in a trainable range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub vertex_mean: Vec<f64>,
    pub vertex_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
}

impl Default for FeatureScaler {
    fn default() -> Self {
        FeatureScaler {
            vertex_mean: vec![0.0; VERTEX_FEATURES],
            vertex_std: vec![1.0; VERTEX_FEATURES],
            edge_mean: vec![0.0; EDGE_FEATURES],
            edge_std: vec![1.0; EDGE_FEATURES],
        }
    }
}

fn moments<'a>(rows: impl Iterator<Item = &'a Array2<f64>>, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut sum = Array1::<f64>::zeros(width);
    let mut sq = Array1::<f64>::zeros(width);
    for m in rows {
        n += m.nrows();
        sum += &m.sum_axis(Axis(0));
        sq += &m.mapv(|x| x * x).sum_axis(Axis(0));
    }
    if n == 0 {
        return (vec![0.0; width], vec![1.0; width]);
    }
    let mean = &sum / n as f64;
    let var = &sq / n as f64 - &mean * &mean;
    let std = var.mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
    (mean.to_vec(), std.to_vec())
}

impl FeatureScaler {
    pub fn fit(graphs: &[CellGraph]) -> Self {
        let (vertex_mean, vertex_std) = moments(graphs.iter().map(|g| &g.vertex_features), VERTEX_FEATURES);
        let (edge_mean, edge_std) = moments(graphs.iter().map(|g| &g.edge_features), EDGE_FEATURES);
        FeatureScaler {
            vertex_mean,
            vertex_std,
            edge_mean,
            edge_std,
        }
    }

    fn apply(x: &Array2<f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
        let mean = ndarray::ArrayView1::from(mean);
        let std = ndarray::ArrayView1::from(std);
        (x - &mean) / std
    }

    pub fn vertex(&self, x: &Array2<f64>) -> Array2<f64> {
        Self::apply(x, &self.vertex_mean, &self.vertex_std)
    }

    pub fn edge(&self, x: &Array2<f64>) -> Array2<f64> {
        Self::apply(x, &self.edge_mean, &self.edge_std)
    }
}

/// Trained (or freshly initialized) network together with its input scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hyper: HyperParams,
    pub scaler: FeatureScaler,
    pub params: ModelParams,
}

impl Model {
    pub fn init(hyper: HyperParams, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&hyper, &mut rng);
        Model {
            hyper,
            scaler: FeatureScaler::default(),
            params,
        }
    }
}

/// Argmax per row; exact ties resolve in class order Vertical, Horizontal, NoRelation.
pub fn argmax_labels(logits: &Array2<f64>) -> Vec<RelationLabel> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            RelationLabel::from_index(best).expect("three classes")
        })
        .collect()
}

/// Predicted label per edge of `graph`. A graph without edges has no predictions.
pub fn predict(graph: &CellGraph, model: &Model) -> Result<Vec<RelationLabel>> {
    if graph.n_edges() == 0 {
        return Ok(Vec::new());
    }
    let (logits, _) = forward(graph, model, Mode::Eval)?;
    Ok(argmax_labels(&logits))
}

/// Logits per edge in eval mode, or an empty matrix for an edgeless graph.
pub fn edge_logits(graph: &CellGraph, model: &Model) -> Result<Array2<f64>> {
    if graph.n_edges() == 0 {
        return Ok(Array2::zeros((0, 3)));
    }
    Ok(forward(graph, model, Mode::Eval)?.0)
}

#[cfg(test)]
mod tests;
