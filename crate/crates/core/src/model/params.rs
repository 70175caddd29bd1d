use ndarray::{Array1, Array2};
use rand::Rng;

use super::HyperParams;
use crate::graph::{EDGE_FEATURES, VERTEX_FEATURES};

/// Weights of one attention block (either direction).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    pub w_2: Array2<f64>,
    pub b_2: Array1<f64>,
    pub norm1_gain: Array1<f64>,
    pub norm1_bias: Array1<f64>,
    pub norm2_gain: Array1<f64>,
    pub norm2_bias: Array1<f64>,
}

const BLOCK_TENSORS: [&str; 11] = [
    "w_q", "w_k", "w_v", "w_1", "b_1", "w_2", "b_2", "norm1_gain", "norm1_bias", "norm2_gain",
    "norm2_bias",
];

impl AttentionBlockParams {
    fn zeros(dim: usize, ff_dim: usize) -> Self {
        AttentionBlockParams {
            w_q: Array2::zeros((dim, dim)),
            w_k: Array2::zeros((dim, dim)),
            w_v: Array2::zeros((dim, dim)),
            w_1: Array2::zeros((dim, ff_dim)),
            b_1: Array1::zeros(ff_dim),
            w_2: Array2::zeros((ff_dim, dim)),
            b_2: Array1::zeros(dim),
            norm1_gain: Array1::zeros(dim),
            norm1_bias: Array1::zeros(dim),
            norm2_gain: Array1::zeros(dim),
            norm2_bias: Array1::zeros(dim),
        }
    }

    fn init<R: Rng>(dim: usize, ff_dim: usize, rng: &mut R) -> Self {
        AttentionBlockParams {
            w_q: glorot(dim, dim, rng),
            w_k: glorot(dim, dim, rng),
            w_v: glorot(dim, dim, rng),
            w_1: glorot(dim, ff_dim, rng),
            b_1: Array1::zeros(ff_dim),
            w_2: glorot(ff_dim, dim, rng),
            b_2: Array1::zeros(dim),
            norm1_gain: Array1::ones(dim),
            norm1_bias: Array1::zeros(dim),
            norm2_gain: Array1::ones(dim),
            norm2_bias: Array1::zeros(dim),
        }
    }

    fn tensors(&self) -> [(&[usize], &[f64]); 11] {
        macro_rules! t {
            ($a:expr) => {
                ($a.shape(), $a.as_slice().expect("standard layout"))
            };
        }
        [
            t!(self.w_q),
            t!(self.w_k),
            t!(self.w_v),
            t!(self.w_1),
            t!(self.b_1),
            t!(self.w_2),
            t!(self.b_2),
            t!(self.norm1_gain),
            t!(self.norm1_bias),
            t!(self.norm2_gain),
            t!(self.norm2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 11] {
        let AttentionBlockParams {
            w_q,
            w_k,
            w_v,
            w_1,
            b_1,
            w_2,
            b_2,
            norm1_gain,
            norm1_bias,
            norm2_gain,
            norm2_bias,
        } = self;
        [
            w_q.as_slice_mut().unwrap(),
            w_k.as_slice_mut().unwrap(),
            w_v.as_slice_mut().unwrap(),
            w_1.as_slice_mut().unwrap(),
            b_1.as_slice_mut().unwrap(),
            w_2.as_slice_mut().unwrap(),
            b_2.as_slice_mut().unwrap(),
            norm1_gain.as_slice_mut().unwrap(),
            norm1_bias.as_slice_mut().unwrap(),
            norm2_gain.as_slice_mut().unwrap(),
            norm2_bias.as_slice_mut().unwrap(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPair {
    pub edge_to_vertex: AttentionBlockParams,
    pub vertex_to_edge: AttentionBlockParams,
}

/// All learnable tensors. Gradients and optimizer moments reuse this type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub vertex_proj: Array2<f64>,
    pub edge_proj: Array2<f64>,
    pub blocks: Vec<BlockPair>,
    pub classifier_w: Array2<f64>,
    pub classifier_b: Array1<f64>,
}

fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
}

impl ModelParams {
    pub fn zeros(hyper: &HyperParams) -> Self {
        let (d, ff) = (hyper.dim, hyper.ff_dim);
        ModelParams {
            vertex_proj: Array2::zeros((VERTEX_FEATURES, d)),
            edge_proj: Array2::zeros((EDGE_FEATURES, d)),
            blocks: (0..hyper.blocks)
                .map(|_| BlockPair {
                    edge_to_vertex: AttentionBlockParams::zeros(d, ff),
                    vertex_to_edge: AttentionBlockParams::zeros(d, ff),
                })
                .collect(),
            classifier_w: Array2::zeros((d, 3)),
            classifier_b: Array1::zeros(3),
        }
    }

    /// Glorot-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init<R: Rng>(hyper: &HyperParams, rng: &mut R) -> Self {
        let (d, ff) = (hyper.dim, hyper.ff_dim);
        ModelParams {
            vertex_proj: glorot(VERTEX_FEATURES, d, rng),
            edge_proj: glorot(EDGE_FEATURES, d, rng),
            blocks: (0..hyper.blocks)
                .map(|_| BlockPair {
                    edge_to_vertex: AttentionBlockParams::init(d, ff, rng),
                    vertex_to_edge: AttentionBlockParams::init(d, ff, rng),
                })
                .collect(),
            classifier_w: glorot(d, 3, rng),
            classifier_b: Array1::zeros(3),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `(name, shape, data)` for every tensor in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn entry<'a>(name: String, shape: &[usize], data: &'a [f64]) -> (String, Vec<usize>, &'a [f64]) {
            (name, shape.to_vec(), data)
        }
        let mut out = vec![
            entry(
                "vertex_proj".into(),
                self.vertex_proj.shape(),
                self.vertex_proj.as_slice().unwrap(),
            ),
            entry(
                "edge_proj".into(),
                self.edge_proj.shape(),
                self.edge_proj.as_slice().unwrap(),
            ),
        ];
        for (n, pair) in self.blocks.iter().enumerate() {
            for (kind, block) in [("e2v", &pair.edge_to_vertex), ("v2e", &pair.vertex_to_edge)] {
                for (tname, (shape, data)) in BLOCK_TENSORS.iter().zip(block.tensors()) {
                    out.push(entry(format!("block{n}.{kind}.{tname}"), shape, data));
                }
            }
        }
        out.push(entry(
            "classifier_w".into(),
            self.classifier_w.shape(),
            self.classifier_w.as_slice().unwrap(),
        ));
        out.push(entry(
            "classifier_b".into(),
            self.classifier_b.shape(),
            self.classifier_b.as_slice().unwrap(),
        ));
        out
    }

    /// Mutable views over every tensor, same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.vertex_proj.as_slice_mut().unwrap());
        out.push(self.edge_proj.as_slice_mut().unwrap());
        for pair in &mut self.blocks {
            out.extend(pair.edge_to_vertex.tensors_mut());
            out.extend(pair.vertex_to_edge.tensors_mut());
        }
        out.push(self.classifier_w.as_slice_mut().unwrap());
        out.push(self.classifier_b.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }
}

/// Closed-form parameter count for a given shape.
pub fn expected_param_count(blocks: usize, dim: usize, ff_dim: usize) -> usize {
    let block = 3 * dim * dim + 2 * dim * ff_dim + ff_dim + dim + 4 * dim;
    (VERTEX_FEATURES + EDGE_FEATURES) * dim + blocks * 2 * block + dim * 3 + 3
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn param_count_is_closed_form() {
        for (blocks, dim) in [(1, 4), (2, 8), (4, 64)] {
            let h = HyperParams {
                blocks,
                dim,
                ff_dim: 4 * dim,
                ..HyperParams::default()
            };
            let mut p = ModelParams::zeros(&h);
            assert_eq!(p.param_count(), expected_param_count(blocks, dim, 4 * dim));
            let n = p.named_tensors().len();
            assert_eq!(p.tensors_mut().len(), n);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let h = HyperParams::default();
        let a = ModelParams::init(&h, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let b = ModelParams::init(&h, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let bound = (6.0f64 / 128.0).sqrt();
        assert!(a.blocks[0].edge_to_vertex.w_q.iter().all(|v| v.abs() <= bound));
        assert!(a.blocks[0].edge_to_vertex.norm1_gain.iter().all(|&v| v == 1.0));
        assert!(a.classifier_b.iter().all(|&v| v == 0.0));
    }
}
