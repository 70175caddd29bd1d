use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::{backward, forward, Mode};
use super::params::ModelParams;
use super::{FeatureScaler, HyperParams, Model};
use crate::error::{Error, Result};
use crate::graph::CellGraph;
use crate::types::RelationLabel;

/// Class-weighted cross-entropy, normalized by the total applied weight, and
/// its gradient w.r.t. the logits.
pub fn loss_and_grad(
    logits: &Array2<f64>,
    labels: &[RelationLabel],
    class_weights: &[f64; 3],
) -> Result<(f64, Array2<f64>)> {
    if labels.is_empty() || logits.nrows() != labels.len() {
        return Err(Error::EmptyLoss);
    }
    let total_weight: f64 = labels.iter().map(|l| class_weights[l.index()]).sum();
    let mut grad = Array2::zeros(logits.dim());
    let mut value = 0.0;
    for ((row, mut g), label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let t = label.index();
        let w = class_weights[t] / total_weight;
        value += w * (sum.ln() - (row[t] - max));
        for (c, gc) in g.iter_mut().enumerate() {
            let p = exps[c] / sum;
            *gc = w * (p - if c == t { 1.0 } else { 0.0 });
        }
    }
    Ok((value, grad))
}

pub fn loss(logits: &Array2<f64>, labels: &[RelationLabel], class_weights: &[f64; 3]) -> Result<f64> {
    loss_and_grad(logits, labels, class_weights).map(|(v, _)| v)
}

/// Adam with the L2 penalty folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, h: &HyperParams) {
        self.t += 1;
        let bc1 = 1.0 - h.beta1.powi(self.t);
        let bc2 = 1.0 - h.beta2.powi(self.t);
        let grads = grads.named_tensors();
        for (((theta, m), v), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..theta.len() {
                let gi = g[i] + h.weight_decay * theta[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= h.learning_rate * mhat / (vhat.sqrt() + h.epsilon);
            }
        }
    }
}

/// One-graph-per-step optimizer loop with its own seeded generator.
pub struct Trainer {
    pub model: Model,
    adam: Adam,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    /// Initializes parameters from `seed`; dropout and shuffling continue
    /// from the same generator.
    pub fn new(hyper: HyperParams, scaler: FeatureScaler, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&hyper, &mut rng);
        Ok(Trainer {
            adam: Adam::new(&params),
            model: Model {
                hyper,
                scaler,
                params,
            },
            rng,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Forward in training mode, backpropagate and update. Returns the loss.
    pub fn step(&mut self, graph: &CellGraph) -> Result<f64> {
        let labels = graph.labels.as_deref().ok_or(Error::Unlabeled(self.steps))?;
        let (logits, trace) = forward(graph, &self.model, Mode::Train(&mut self.rng))?;
        let (value, d_logits) = loss_and_grad(&logits, labels, &self.model.hyper.class_weights)?;
        let grads = backward(&trace, &self.model.params, &d_logits);
        let hyper = self.model.hyper.clone();
        self.adam.step(&mut self.model.params, &grads, &hyper);
        self.steps += 1;
        Ok(value)
    }

    /// One pass over `graphs` in a seeded random order; returns the mean loss.
    pub fn epoch(&mut self, graphs: &[CellGraph]) -> Result<f64> {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for &i in &order {
            total += self.step(&graphs[i])?;
        }
        Ok(total / graphs.len().max(1) as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub skipped_edgeless: usize,
}

/// Trains on labeled graphs for `hyper.epochs` epochs. Graphs without edges
/// carry no signal and are skipped.
pub fn train(graphs: &[CellGraph], hyper: &HyperParams, seed: u64) -> Result<(Model, TrainLog)> {
    if let Some(i) = graphs.iter().position(|g| g.labels.is_none()) {
        return Err(Error::Unlabeled(i));
    }
    let usable: Vec<CellGraph> = graphs.iter().filter(|g| g.n_edges() > 0).cloned().collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset("no training graph has candidate edges".into()));
    }
    let mut trainer = Trainer::new(hyper.clone(), FeatureScaler::fit(&usable), seed)?;
    let mut log = TrainLog {
        skipped_edgeless: graphs.len() - usable.len(),
        ..TrainLog::default()
    };
    for epoch in 0..hyper.epochs {
        let mean = trainer.epoch(&usable)?;
        log::info!("epoch {} mean loss {:.5}", epoch + 1, mean);
        log.epoch_losses.push(mean);
    }
    log.steps = trainer.steps();
    Ok((trainer.model, log))
}
