//! Forward and reverse passes of the bipartite attention network.
//!
//! Cells and candidate edges are two node sets of a bipartite graph. In each
//! layer every vertex attends over its incident edges and every edge attends
//! over its two endpoints; both streams read the previous layer's states.
//! Gradients are hand-derived per layer and checked against finite
//! differences in the tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AttentionBlockParams, ModelParams};
use super::Model;
use crate::error::{Error, Result};
use crate::graph::CellGraph;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Compressed adjacency lists: `of(u)` is the neighbour list of node `u`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Neighborhoods {
    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut members = Vec::new();
        for l in lists {
            members.extend(l);
            offsets.push(members.len());
        }
        Neighborhoods { offsets, members }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, u: usize) -> &[usize] {
        &self.members[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Total number of (node, neighbour) entries.
    pub fn total(&self) -> usize {
        self.members.len()
    }

    fn range(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }
}

/// Neighbourhoods of the bipartite expansion: vertices see their incident
/// edges, edges see their two endpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bipartite {
    pub vertex_edges: Neighborhoods,
    pub edge_vertices: Neighborhoods,
}

pub fn bipartite_neighborhoods(n_vertices: usize, edges: &[(usize, usize)]) -> Bipartite {
    let mut incident = vec![Vec::new(); n_vertices];
    for (e, &(a, b)) in edges.iter().enumerate() {
        incident[a].push(e);
        incident[b].push(e);
    }
    Bipartite {
        vertex_edges: Neighborhoods::from_lists(incident),
        edge_vertices: Neighborhoods::from_lists(edges.iter().map(|&(a, b)| vec![a, b]).collect()),
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Scaled dot-product attention of one query over its neighbours' keys and
/// values. Returns the attended vector and the attention weights.
pub fn graph_attention(
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
) -> Result<(Array1<f64>, Vec<f64>)> {
    if keys.nrows() == 0 {
        return Err(Error::IsolatedNode {
            kind: "query",
            index: 0,
        });
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let mut w: Vec<f64> = keys.rows().into_iter().map(|k| k.dot(&query) * scale).collect();
    softmax_in_place(&mut w);
    let mut out = Array1::zeros(values.ncols());
    for (a, v) in w.iter().zip(values.rows()) {
        out.scaled_add(*a, &v);
    }
    Ok((out, w))
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise normalization to zero mean and unit variance (before gain/bias).
pub fn normalize_rows(z: &Array2<f64>) -> Array2<f64> {
    normalize(z).xhat
}

fn normalize(z: &Array2<f64>) -> NormCache {
    let d = z.ncols() as f64;
    let mut xhat = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|x| x - mean);
        let var = row.dot(&row) / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|x| x * *s);
    }
    NormCache { xhat, inv_std }
}

fn layer_norm(z: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let cache = normalize(z);
    let y = &cache.xhat * gain + bias;
    (y, cache)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dbias += &dy.sum_axis(Axis(0));
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dz = dy * gain;
    for ((mut row, xhat), &s) in dz
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_dx = row.sum() / d;
        let mean_dx_xhat = row.dot(&xhat) / d;
        row.zip_mut_with(&xhat, |g, &xh| *g = s * (*g - mean_dx - xh * mean_dx_xhat));
    }
    dz
}

/// Supplies dropout masks (already scaled by `1 / (1 - p)`), or `None` for identity.
pub trait MaskSource {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>>;
}

pub struct NoDropout;

impl MaskSource for NoDropout {
    fn mask(&mut self, _: usize, _: usize) -> Option<Array2<f64>> {
        None
    }
}

/// Inverted dropout drawn from a seeded generator.
pub struct DropoutMasks<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl MaskSource for DropoutMasks<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if self.p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        Some(Array2::from_shape_simple_fn((rows, cols), || {
            if self.rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        }))
    }
}

/// Replays a fixed sequence of masks (used to check gradients under dropout).
pub struct ReplayMasks(pub std::collections::VecDeque<Option<Array2<f64>>>);

impl MaskSource for ReplayMasks {
    fn mask(&mut self, _: usize, _: usize) -> Option<Array2<f64>> {
        self.0.pop_front().flatten()
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    EdgeToVertex,
    VertexToEdge,
}

#[derive(Clone, Debug)]
struct BlockCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<f64>,
    mask_attention: Option<Array2<f64>>,
    norm1: NormCache,
    normed: Array2<f64>,
    pre_activation: Array2<f64>,
    mask_ffn: Option<Array2<f64>>,
    norm2: NormCache,
}

/// Activations kept from a forward pass for backpropagation and inspection.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub bipartite: Bipartite,
    /// Vertex states, index 0 is the input embedding.
    pub vertex_states: Vec<Array2<f64>>,
    pub edge_states: Vec<Array2<f64>>,
    blocks: Vec<[BlockCache; 2]>,
    vertex_input: Array2<f64>,
    edge_input: Array2<f64>,
}

impl ForwardTrace {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Attention distribution of each query node in block `block`.
    pub fn attention_rows(&self, block: usize, dir: Direction) -> Vec<&[f64]> {
        let (cache, nbrs) = match dir {
            Direction::EdgeToVertex => (&self.blocks[block][0], &self.bipartite.vertex_edges),
            Direction::VertexToEdge => (&self.blocks[block][1], &self.bipartite.edge_vertices),
        };
        (0..nbrs.len()).map(|u| &cache.weights[nbrs.range(u)]).collect()
    }
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn block_forward(
    h_self: &Array2<f64>,
    h_other: &Array2<f64>,
    nbrs: &Neighborhoods,
    p: &AttentionBlockParams,
    masks: &mut dyn MaskSource,
    kind: &'static str,
) -> Result<(Array2<f64>, BlockCache)> {
    let (n, d) = h_self.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let q = h_self.dot(&p.w_q);
    let k = h_other.dot(&p.w_k);
    let v = h_other.dot(&p.w_v);
    let mut attended = Array2::zeros((n, d));
    let mut weights = Vec::with_capacity(nbrs.total());
    for u in 0..n {
        let nb = nbrs.of(u);
        if nb.is_empty() {
            return Err(Error::IsolatedNode { kind, index: u });
        }
        let qu = q.row(u);
        let start = weights.len();
        weights.extend(nb.iter().map(|&j| k.row(j).dot(&qu) * scale));
        softmax_in_place(&mut weights[start..]);
        let mut row = attended.row_mut(u);
        for (&a, &j) in weights[start..].iter().zip(nb) {
            row.scaled_add(a, &v.row(j));
        }
    }
    let mask_attention = masks.mask(n, d);
    let z1 = apply_mask(attended, &mask_attention) + h_self;
    let (normed, norm1) = layer_norm(&z1, &p.norm1_gain, &p.norm1_bias);
    let pre_activation = normed.dot(&p.w_1) + &p.b_1;
    let hidden = pre_activation.mapv(|x| x.max(0.0));
    let ffn = hidden.dot(&p.w_2) + &p.b_2;
    let mask_ffn = masks.mask(n, d);
    let z2 = apply_mask(ffn, &mask_ffn) + &normed;
    let (out, norm2) = layer_norm(&z2, &p.norm2_gain, &p.norm2_bias);
    Ok((
        out,
        BlockCache {
            q,
            k,
            v,
            weights,
            mask_attention,
            norm1,
            normed,
            pre_activation,
            mask_ffn,
            norm2,
        },
    ))
}

/// One attention block: `self` nodes query their `other`-side neighbours,
/// followed by residual + norm, feed-forward, residual + norm.
pub fn attention_block(
    h_self: &Array2<f64>,
    h_other: &Array2<f64>,
    nbrs: &Neighborhoods,
    params: &AttentionBlockParams,
    masks: &mut dyn MaskSource,
) -> Result<Array2<f64>> {
    block_forward(h_self, h_other, nbrs, params, masks, "query").map(|(out, _)| out)
}

/// Returns gradients w.r.t. the block's self and other inputs and
/// accumulates parameter gradients into `g`.
fn block_backward(
    d_out: &Array2<f64>,
    c: &BlockCache,
    h_self: &Array2<f64>,
    h_other: &Array2<f64>,
    nbrs: &Neighborhoods,
    p: &AttentionBlockParams,
    g: &mut AttentionBlockParams,
) -> (Array2<f64>, Array2<f64>) {
    let d = h_self.ncols();
    let scale = 1.0 / (d as f64).sqrt();

    let dz2 = layer_norm_backward(d_out, &c.norm2, &p.norm2_gain, &mut g.norm2_gain, &mut g.norm2_bias);
    let d_ffn = apply_mask(dz2.clone(), &c.mask_ffn);
    let hidden = c.pre_activation.mapv(|x| x.max(0.0));
    g.w_2 += &hidden.t().dot(&d_ffn);
    g.b_2 += &d_ffn.sum_axis(Axis(0));
    let mut d_pre = d_ffn.dot(&p.w_2.t());
    d_pre.zip_mut_with(&c.pre_activation, |gr, &x| {
        if x <= 0.0 {
            *gr = 0.0
        }
    });
    g.w_1 += &c.normed.t().dot(&d_pre);
    g.b_1 += &d_pre.sum_axis(Axis(0));
    let d_normed = dz2 + d_pre.dot(&p.w_1.t());

    let dz1 = layer_norm_backward(&d_normed, &c.norm1, &p.norm1_gain, &mut g.norm1_gain, &mut g.norm1_bias);
    let d_att = apply_mask(dz1.clone(), &c.mask_attention);
    let mut d_self = dz1;

    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    let mut da = Vec::new();
    for u in 0..nbrs.len() {
        let nb = nbrs.of(u);
        let w = &c.weights[nbrs.range(u)];
        let gu = d_att.row(u);
        da.clear();
        da.extend(nb.iter().map(|&j| gu.dot(&c.v.row(j))));
        let mix: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
        for ((&a, &dak), &j) in w.iter().zip(&da).zip(nb) {
            let ds = a * (dak - mix) * scale;
            dv.row_mut(j).scaled_add(a, &gu);
            dq.row_mut(u).scaled_add(ds, &c.k.row(j));
            dk.row_mut(j).scaled_add(ds, &c.q.row(u));
        }
    }
    g.w_q += &h_self.t().dot(&dq);
    g.w_k += &h_other.t().dot(&dk);
    g.w_v += &h_other.t().dot(&dv);
    d_self += &dq.dot(&p.w_q.t());
    let d_other = dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t());
    (d_self, d_other)
}

pub fn forward(graph: &CellGraph, model: &Model, mode: Mode<'_>) -> Result<(Array2<f64>, ForwardTrace)> {
    match mode {
        Mode::Eval => forward_with(graph, model, &mut NoDropout),
        Mode::Train(rng) => forward_with(
            graph,
            model,
            &mut DropoutMasks {
                p: model.hyper.dropout,
                rng,
            },
        ),
    }
}

/// Edge logits (`|E| x 3`, columns in [`crate::types::RelationLabel`] index order).
pub fn forward_with(
    graph: &CellGraph,
    model: &Model,
    masks: &mut dyn MaskSource,
) -> Result<(Array2<f64>, ForwardTrace)> {
    let params = &model.params;
    let bipartite = bipartite_neighborhoods(graph.n_vertices(), &graph.edges);
    if let Some(u) = (0..graph.n_vertices()).find(|&u| bipartite.vertex_edges.of(u).is_empty()) {
        return Err(Error::IsolatedNode {
            kind: "vertex",
            index: u,
        });
    }
    let vertex_input = model.scaler.vertex(&graph.vertex_features);
    let edge_input = model.scaler.edge(&graph.edge_features);
    let mut vertex_states = vec![vertex_input.dot(&params.vertex_proj)];
    let mut edge_states = vec![edge_input.dot(&params.edge_proj)];
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for pair in &params.blocks {
        let (hv, he) = (vertex_states.last().unwrap(), edge_states.last().unwrap());
        let (hv_next, c_v) = block_forward(hv, he, &bipartite.vertex_edges, &pair.edge_to_vertex, masks, "vertex")?;
        let (he_next, c_e) = block_forward(he, hv, &bipartite.edge_vertices, &pair.vertex_to_edge, masks, "edge")?;
        vertex_states.push(hv_next);
        edge_states.push(he_next);
        blocks.push([c_v, c_e]);
    }
    let logits = edge_states.last().unwrap().dot(&params.classifier_w) + &params.classifier_b;
    Ok((
        logits,
        ForwardTrace {
            bipartite,
            vertex_states,
            edge_states,
            blocks,
            vertex_input,
            edge_input,
        },
    ))
}

/// Parameter gradients given the gradient of a scalar objective w.r.t. the logits.
pub fn backward(trace: &ForwardTrace, params: &ModelParams, d_logits: &Array2<f64>) -> ModelParams {
    let mut grads = params.zeros_like();
    let n = params.blocks.len();
    let he_last = &trace.edge_states[n];
    grads.classifier_w += &he_last.t().dot(d_logits);
    grads.classifier_b += &d_logits.sum_axis(Axis(0));
    let mut d_he = d_logits.dot(&params.classifier_w.t());
    // The last vertex states feed nothing downstream.
    let mut d_hv: Option<Array2<f64>> = None;
    for layer in (0..n).rev() {
        let pair = &params.blocks[layer];
        let gpair = &mut grads.blocks[layer];
        let (hv, he) = (&trace.vertex_states[layer], &trace.edge_states[layer]);
        let [c_v, c_e] = &trace.blocks[layer];
        let (mut dv_prev, mut de_prev) = (Array2::zeros(hv.dim()), Array2::zeros(he.dim()));
        if let Some(dv) = &d_hv {
            let (ds, dother) = block_backward(
                dv,
                c_v,
                hv,
                he,
                &trace.bipartite.vertex_edges,
                &pair.edge_to_vertex,
                &mut gpair.edge_to_vertex,
            );
            dv_prev += &ds;
            de_prev += &dother;
        }
        let (ds, dother) = block_backward(
            &d_he,
            c_e,
            he,
            hv,
            &trace.bipartite.edge_vertices,
            &pair.vertex_to_edge,
            &mut gpair.vertex_to_edge,
        );
        de_prev += &ds;
        dv_prev += &dother;
        d_hv = Some(dv_prev);
        d_he = de_prev;
    }
    grads.edge_proj += &trace.edge_input.t().dot(&d_he);
    if let Some(dv) = d_hv {
        grads.vertex_proj += &trace.vertex_input.t().dot(&dv);
    }
    grads
}
