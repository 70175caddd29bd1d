use std::collections::VecDeque;

use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{label_edges, truth_relations, CellGraph};
use crate::types::{BBox, Cell, StructuredCell, TableStructure};

fn grid_table(rows: usize, cols: usize) -> (Vec<Cell>, TableStructure) {
    let mut cells = Vec::new();
    let mut structured = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            let x1 = c as f64 * 50.0;
            let y2 = -(r as f64) * 15.0;
            let bbox = BBox::new(x1, x1 + 40.0 - 3.0 * (id % 3) as f64, y2 - 12.0, y2).unwrap();
            cells.push(Cell {
                id,
                content: format!("c{id}"),
                bbox,
            });
            structured.push(StructuredCell {
                id,
                content: format!("c{id}"),
                bbox: Some(bbox),
                start_row: r,
                end_row: r,
                start_col: c,
                end_col: c,
            });
        }
    }
    (cells, TableStructure::new(structured).unwrap())
}

fn labeled_grid(rows: usize, cols: usize, k: usize) -> CellGraph {
    let (cells, s) = grid_table(rows, cols);
    let g = CellGraph::build(&cells, k).unwrap();
    label_edges(&g, &truth_relations(&s).unwrap()).unwrap().0
}

fn small_hyper(blocks: usize, dim: usize) -> HyperParams {
    HyperParams {
        blocks,
        ..HyperParams::default()
    }
    .with_dim(dim)
}

/// Records every mask drawn so a forward pass can be replayed exactly.
struct Recording<'a> {
    inner: DropoutMasks<'a>,
    log: Vec<Option<Array2<f64>>>,
}

impl MaskSource for Recording<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let m = self.inner.mask(rows, cols);
        self.log.push(m.clone());
        m
    }
}

#[test]
fn bipartite_handshake() {
    let edges = [(0, 1), (0, 2), (1, 2), (2, 3)];
    let b = bipartite_neighborhoods(4, &edges);
    assert_eq!(b.vertex_edges.of(0), &[0, 1]);
    assert_eq!(b.vertex_edges.of(2), &[1, 2, 3]);
    assert_eq!(b.vertex_edges.of(3), &[3]);
    assert_eq!(b.edge_vertices.of(3), &[2, 3]);
    assert_eq!(b.vertex_edges.total(), 2 * edges.len());
    assert_eq!(b.edge_vertices.total(), 2 * edges.len());
}

#[test]
fn attention_single_neighbour_passes_value_through() {
    let q = array![0.3, -1.0];
    let k = array![[5.0, 2.0]];
    let v = array![[7.0, -8.0]];
    let (out, w) = graph_attention(q.view(), k.view(), v.view()).unwrap();
    assert_eq!(w, vec![1.0]);
    assert_eq!(out, array![7.0, -8.0]);
}

#[test]
fn attention_uniform_logits_average_values() {
    let q = array![0.0, 0.0];
    let k = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
    let v = array![[1.0, 0.0], [2.0, 0.0], [6.0, 3.0]];
    let (out, w) = graph_attention(q.view(), k.view(), v.view()).unwrap();
    for a in &w {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);
}

#[test]
fn attention_two_logit_weights() {
    // Scaled logits 1 and 2 (d = 1, so no rescaling).
    let q = array![1.0];
    let k = array![[1.0], [2.0]];
    let v = array![[0.0], [1.0]];
    let (out, w) = graph_attention(q.view(), k.view(), v.view()).unwrap();
    assert!((w[0] - 0.268_941_421_369_995_1).abs() < 1e-12);
    assert!((w[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
    assert!((out[0] - w[1]).abs() < 1e-15);
}

#[test]
fn attention_rejects_empty_neighbourhood() {
    let q = array![1.0];
    let k = Array2::<f64>::zeros((0, 1));
    assert!(graph_attention(q.view(), k.view(), k.view()).is_err());
}

#[test]
fn constant_rows_normalize_to_zero() {
    let z = array![[4.0, 4.0, 4.0], [1.0, 2.0, 3.0]];
    let n = normalize_rows(&z);
    assert!(n.row(0).iter().all(|v| v.abs() < 1e-12));
    let s = (2.0f64 / 3.0 + LAYER_NORM_EPS).sqrt();
    assert!((n[[1, 2]] - 1.0 / s).abs() < 1e-12);
}

#[test]
fn zero_weights_collapse_to_double_normalization() {
    let h = small_hyper(1, 4);
    let mut p = ModelParams::zeros(&h).blocks[0].edge_to_vertex.clone();
    p.norm1_gain.fill(1.0);
    p.norm2_gain.fill(1.0);
    let h_self = array![[1.0, 2.0, 0.0, -1.0], [3.0, 3.0, 3.0, 2.0]];
    let h_other = array![[9.0, 1.0, 1.0, 1.0], [0.0, 5.0, 2.0, 2.0]];
    let nbrs = bipartite_neighborhoods(2, &[(0, 1)]).vertex_edges;
    // Each self node attends over its single incident edge; any valid
    // neighbourhood works since the attended values are zero.
    let out = attention_block(&h_self, &h_other, &nbrs, &p, &mut NoDropout).unwrap();
    let expected = normalize_rows(&normalize_rows(&h_self));
    for (a, b) in out.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Straight-line recomputation of the eval-mode forward pass.
fn naive_logits(graph: &CellGraph, model: &Model) -> Array2<f64> {
    fn ln(x: &Array1<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
        let d = x.len() as f64;
        let mean = x.sum() / d;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let s = (var + 1e-5).sqrt();
        x.iter()
            .zip(g.iter().zip(b.iter()))
            .map(|(v, (g, b))| (v - mean) / s * g + b)
            .collect()
    }
    fn block(hs: &Array2<f64>, ho: &Array2<f64>, nb: &[Vec<usize>], p: &AttentionBlockParams) -> Array2<f64> {
        let d = hs.ncols();
        let mut out = Array2::zeros(hs.dim());
        for u in 0..hs.nrows() {
            let q = hs.row(u).dot(&p.w_q);
            let scores: Vec<f64> = nb[u]
                .iter()
                .map(|&j| ho.row(j).dot(&p.w_k).dot(&q) / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let mut att = Array1::<f64>::zeros(d);
            for (s, &j) in scores.iter().zip(&nb[u]) {
                att = att + ho.row(j).dot(&p.w_v) * ((s - m).exp() / z);
            }
            let t = ln(&(&hs.row(u) + &att), &p.norm1_gain, &p.norm1_bias);
            let hidden = (t.dot(&p.w_1) + &p.b_1).mapv(|x| if x > 0.0 { x } else { 0.0 });
            let f = hidden.dot(&p.w_2) + &p.b_2;
            out.row_mut(u).assign(&ln(&(&t + &f), &p.norm2_gain, &p.norm2_bias));
        }
        out
    }
    let n = graph.n_vertices();
    let mut v_nb = vec![Vec::new(); n];
    for (e, &(a, b)) in graph.edges.iter().enumerate() {
        v_nb[a].push(e);
        v_nb[b].push(e);
    }
    let e_nb: Vec<Vec<usize>> = graph.edges.iter().map(|&(a, b)| vec![a, b]).collect();
    let p = &model.params;
    let mut hv = model.scaler.vertex(&graph.vertex_features).dot(&p.vertex_proj);
    let mut he = model.scaler.edge(&graph.edge_features).dot(&p.edge_proj);
    for pair in &p.blocks {
        let nv = block(&hv, &he, &v_nb, &pair.edge_to_vertex);
        let ne = block(&he, &hv, &e_nb, &pair.vertex_to_edge);
        hv = nv;
        he = ne;
    }
    he.dot(&p.classifier_w) + &p.classifier_b
}

#[test]
fn forward_matches_naive_recomputation() {
    let g = labeled_grid(3, 4, 4);
    let mut model = Model::init(small_hyper(3, 8), 11);
    model.scaler = FeatureScaler::fit(std::slice::from_ref(&g));
    let (logits, trace) = forward(&g, &model, Mode::Eval).unwrap();
    let naive = naive_logits(&g, &model);
    assert_eq!(logits.dim(), (g.n_edges(), 3));
    assert_eq!(trace.n_blocks(), 3);
    for (a, b) in logits.iter().zip(naive.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn minimal_graph_shapes_and_determinism() {
    let g = labeled_grid(1, 2, 20);
    assert_eq!(g.edges, vec![(0, 1)]);
    let model = Model::init(HyperParams::default(), 5);
    let (a, trace) = forward(&g, &model, Mode::Eval).unwrap();
    let (b, _) = forward(&g, &model, Mode::Eval).unwrap();
    assert_eq!(a.dim(), (1, 3));
    assert_eq!(a, b);
    assert_eq!(trace.vertex_states.len(), 5);
    assert_eq!(trace.edge_states[4].dim(), (1, 64));
}

#[test]
fn isolated_vertex_is_an_error() {
    let mut g = labeled_grid(1, 3, 1);
    g.edges = vec![(0, 1)];
    g.edge_features = g.edge_features.slice(ndarray::s![0..1, ..]).to_owned();
    let model = Model::init(small_hyper(1, 4), 0);
    assert!(matches!(
        forward(&g, &model, Mode::Eval),
        Err(Error::IsolatedNode { kind: "vertex", index: 2 })
    ));
}

#[test]
fn attention_rows_are_distributions() {
    let g = labeled_grid(4, 3, 5);
    let model = Model::init(small_hyper(2, 8), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, trace) = forward(&g, &model, Mode::Train(&mut rng)).unwrap();
    for b in 0..2 {
        for dir in [Direction::EdgeToVertex, Direction::VertexToEdge] {
            for row in trace.attention_rows(b, dir) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|a| *a >= 0.0));
            }
        }
    }
}

fn fd_check(graph: &CellGraph, model: &Model, seed: u64) -> f64 {
    let labels = graph.labels.as_deref().unwrap();
    let w = model.hyper.class_weights;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = Recording {
        inner: DropoutMasks {
            p: model.hyper.dropout,
            rng: &mut rng,
        },
        log: Vec::new(),
    };
    let (logits, trace) = forward_with(graph, model, &mut rec).unwrap();
    let masks: VecDeque<_> = rec.log.into();
    let (_, d_logits) = loss_and_grad(&logits, labels, &w).unwrap();
    let grads = backward(&trace, &model.params, &d_logits);
    let analytic: Vec<f64> = grads.named_tensors().iter().flat_map(|(_, _, d)| d.to_vec()).collect();

    let eval = |m: &Model| {
        let (l, _) = forward_with(graph, m, &mut ReplayMasks(masks.clone())).unwrap();
        loss(&l, labels, &w).unwrap()
    };
    let h = 1e-6;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let n_tensors = probe.params.tensors_mut().len();
    for t in 0..n_tensors {
        let len = probe.params.tensors_mut()[t].len();
        for i in 0..len {
            let orig = probe.params.tensors_mut()[t][i];
            probe.params.tensors_mut()[t][i] = orig + h;
            let up = eval(&probe);
            probe.params.tensors_mut()[t][i] = orig - h;
            let down = eval(&probe);
            probe.params.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_under_dropout() {
    let g = labeled_grid(2, 3, 3);
    let mut hyper = small_hyper(2, 8);
    hyper.dropout = 0.3;
    let mut model = Model::init(hyper, 4);
    model.scaler = FeatureScaler::fit(std::slice::from_ref(&g));
    let worst = fd_check(&g, &model, 9);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn last_vertex_block_gets_no_gradient() {
    let g = labeled_grid(2, 2, 3);
    let model = Model::init(small_hyper(2, 4), 1);
    let (logits, trace) = forward(&g, &model, Mode::Eval).unwrap();
    let (_, d) = loss_and_grad(&logits, g.labels.as_deref().unwrap(), &[1.0, 1.0, 0.2]).unwrap();
    let grads = backward(&trace, &model.params, &d);
    assert!(grads.blocks[1].edge_to_vertex.w_q.iter().all(|v| *v == 0.0));
    assert!(grads.blocks[0].edge_to_vertex.w_q.iter().any(|v| *v != 0.0));
}

#[test]
fn uniform_logits_give_log_three() {
    let logits = Array2::zeros((2, 3));
    let one = loss(&logits, &[RelationLabel::Vertical, RelationLabel::Horizontal], &[1.0, 1.0, 0.2]).unwrap();
    assert!((one - 3f64.ln()).abs() < 1e-12);
    let mixed = loss(&logits, &[RelationLabel::Vertical, RelationLabel::NoRelation], &[1.0, 1.0, 0.2]).unwrap();
    assert!((mixed - (0.2 + 1.0) * 3f64.ln() / 1.2).abs() < 1e-12);
    assert!(loss(&Array2::zeros((0, 3)), &[], &[1.0, 1.0, 0.2]).is_err());
}

#[test]
fn loss_gradient_rows_sum_to_zero() {
    let logits = array![[0.5, -1.0, 2.0], [3.0, 0.0, 0.0]];
    let labels = [RelationLabel::NoRelation, RelationLabel::Vertical];
    let (_, g) = loss_and_grad(&logits, &labels, &[1.0, 1.0, 0.2]).unwrap();
    for row in g.rows() {
        assert!(row.sum().abs() < 1e-15);
    }
}

#[test]
fn argmax_ties_follow_class_order() {
    let logits = array![[1.0, 1.0, 1.0], [0.0, 2.0, 2.0], [0.0, -1.0, 3.0]];
    assert_eq!(
        argmax_labels(&logits),
        vec![RelationLabel::Vertical, RelationLabel::Horizontal, RelationLabel::NoRelation]
    );
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let g = labeled_grid(2, 3, 4);
    let mut hyper = small_hyper(1, 8);
    hyper.learning_rate = 0.0;
    hyper.weight_decay = 0.0;
    let mut t = Trainer::new(hyper, FeatureScaler::default(), 3).unwrap();
    let before = t.model.params.clone();
    t.step(&g).unwrap();
    assert_eq!(t.model.params, before);
    assert_eq!(t.steps(), 1);
}

#[test]
fn training_is_deterministic() {
    let graphs = vec![labeled_grid(2, 3, 4), labeled_grid(3, 2, 4), labeled_grid(3, 3, 6)];
    let mut hyper = small_hyper(2, 8);
    hyper.epochs = 2;
    let (a, la) = train(&graphs, &hyper, 17).unwrap();
    let (b, lb) = train(&graphs, &hyper, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.steps, 6);
    let (c, _) = train(&graphs, &hyper, 18).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn training_rejects_unlabeled_graphs() {
    let (cells, _) = grid_table(2, 2);
    let g = CellGraph::build(&cells, 3).unwrap();
    assert!(matches!(train(&[g], &HyperParams::default(), 0), Err(Error::Unlabeled(0))));
}

#[test]
fn overfits_repeated_table() {
    let g = labeled_grid(3, 3, 6);
    let graphs = vec![g.clone(); 10];
    let mut hyper = small_hyper(2, 16);
    hyper.dropout = 0.0;
    hyper.learning_rate = 5e-3;
    hyper.epochs = 10;
    let (model, log) = train(&graphs, &hyper, 1).unwrap();
    assert!(log.epoch_losses.last().unwrap() < &log.epoch_losses[0]);
    let pred = predict(&g, &model).unwrap();
    assert_eq!(pred, g.labels.unwrap());
}

#[test]
fn outputs_depend_only_on_nearby_cells() {
    // A path 0-1-2-...-7: with two blocks, edge (0,1) sees vertex features of 0 and 1 only.
    let n = 8;
    let cells: Vec<Cell> = (0..n)
        .map(|i| Cell {
            id: i,
            content: String::new(),
            bbox: BBox::new(i as f64 * 50.0 + i as f64, i as f64 * 50.0 + 40.0, 0.0, 10.0).unwrap(),
        })
        .collect();
    let mut g = CellGraph::build(&cells, 1).unwrap();
    assert_eq!(g.edges, (0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>());
    let model = Model::init(small_hyper(2, 8), 6);
    let base = edge_logits(&g, &model).unwrap();
    g.vertex_features.row_mut(3).mapv_inplace(|x| x + 10.0);
    let far = edge_logits(&g, &model).unwrap();
    assert_eq!(base.row(0), far.row(0));
    assert_ne!(base.row(2), far.row(2));
    g.vertex_features.row_mut(1).mapv_inplace(|x| x + 10.0);
    let near = edge_logits(&g, &model).unwrap();
    assert_ne!(base.row(0), near.row(0));
}

#[test]
fn logits_are_permutation_equivariant() {
    let g = labeled_grid(3, 3, 4);
    let n = g.n_vertices();
    let perm: Vec<usize> = (0..n).map(|i| (i * 4 + 3) % n).collect();
    let mut vf = Array2::zeros(g.vertex_features.dim());
    for i in 0..n {
        vf.row_mut(perm[i]).assign(&g.vertex_features.row(i));
    }
    let mut mapped: Vec<((usize, usize), usize)> = g
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(a, b))| ((perm[a].min(perm[b]), perm[a].max(perm[b])), e))
        .collect();
    mapped.sort();
    let mut ef = Array2::zeros(g.edge_features.dim());
    for (new, &(_, old)) in mapped.iter().enumerate() {
        ef.row_mut(new).assign(&g.edge_features.row(old));
    }
    let h = CellGraph {
        cells: g.cells.clone(),
        edges: mapped.iter().map(|(e, _)| *e).collect(),
        vertex_features: vf,
        edge_features: ef,
        labels: None,
    };
    let model = Model::init(small_hyper(2, 8), 8);
    let a = edge_logits(&g, &model).unwrap();
    let b = edge_logits(&h, &model).unwrap();
    for (new, &(_, old)) in mapped.iter().enumerate() {
        for c in 0..3 {
            assert!((a[[old, c]] - b[[new, c]]).abs() < 1e-10);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let g = labeled_grid(2, 3, 4);
    let mut model = Model::init(small_hyper(2, 8), 21);
    model.scaler = FeatureScaler::fit(std::slice::from_ref(&g));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, 21, &path).unwrap();
    let (back, seed) = load_checkpoint(&path).unwrap();
    assert_eq!(seed, 21);
    assert_eq!(back, model);
    assert_eq!(edge_logits(&g, &back).unwrap(), edge_logits(&g, &model).unwrap());
}

#[test]
fn checkpoint_rejects_bad_shapes() {
    let model = Model::init(small_hyper(1, 4), 0);
    let mut ck = Checkpoint::from_model(&model, 0);
    ck.tensors[0].shape = vec![4, 8];
    assert!(matches!(ck.clone().into_model(), Err(Error::Checkpoint(_))));
    let mut ck = Checkpoint::from_model(&model, 0);
    ck.tensors.pop();
    assert!(ck.into_model().is_err());
    let mut ck = Checkpoint::from_model(&model, 0);
    ck.tensors[1].data[0] = f64::NAN;
    assert!(ck.into_model().is_err());
    let mut ck = Checkpoint::from_model(&model, 0);
    ck.format = "other".into();
    assert!(ck.into_model().is_err());
}

#[test]
fn hyper_validation() {
    assert!(HyperParams::default().validate().is_ok());
    assert!(HyperParams { dropout: 1.0, ..HyperParams::default() }.validate().is_err());
    assert!(HyperParams { blocks: 0, ..HyperParams::default() }.validate().is_err());
    assert!(HyperParams { class_weights: [1.0, 0.0, 0.2], ..HyperParams::default() }.validate().is_err());
}
