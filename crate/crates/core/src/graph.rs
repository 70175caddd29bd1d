//! Candidate-edge graph over table cells: KNN edges, geometric features and
//! edge labels.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Ordering;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::truth_relations_of;
use crate::types::{interval_overlap_ratio, BBox, Cell, RelationLabel, RelationSet, TableStructure};

pub const VERTEX_FEATURES: usize = 8;
pub const EDGE_FEATURES: usize = 8;

pub const VERTEX_FEATURE_NAMES: [&str; VERTEX_FEATURES] = [
    "width", "height", "rel_width", "rel_height", "x_center", "y_center", "rel_x_center",
    "rel_y_center",
];

pub const EDGE_FEATURE_NAMES: [&str; EDGE_FEATURES] = [
    "distance", "dx", "dy", "rel_distance", "rel_dx", "rel_dy", "x_overlap", "y_overlap",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CellGraph {
    pub cells: Vec<Cell>,
    /// Canonical `(a, b)` with `a < b`, sorted and unique.
    pub edges: Vec<(usize, usize)>,
    pub vertex_features: Array2<f64>,
    pub edge_features: Array2<f64>,
    pub labels: Option<Vec<RelationLabel>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelCoverage {
    pub covered: usize,
    pub total: usize,
}

impl LabelCoverage {
    /// Fraction of truth relations present as candidate edges; 1.0 when there are none.
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn center_dist2(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (ax - bx, ay - by);
    dx * dx + dy * dy
}

/// Union of every cell's `k` nearest neighbours by box-center distance, ties
/// going to the lower id. Returned pairs are id-based and canonical.
pub fn knn_edges(cells: &[Cell], k: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(cells.len() * k);
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for a in cells {
        heap.clear();
        for b in cells {
            if a.id == b.id {
                continue;
            }
            let cand = Candidate {
                dist2: center_dist2(&a.bbox, &b.bbox),
                id: b.id,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        edges.extend(heap.drain().map(|c| (a.id.min(c.id), a.id.max(c.id))));
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Tight bounding box of all cells; must have positive width and height.
pub fn table_box(cells: &[Cell]) -> Result<BBox> {
    let b = BBox::enclosing(cells.iter().map(|c| &c.bbox)).ok_or(Error::EmptyTable)?;
    if b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "table box {}x{} has zero area",
            b.width(),
            b.height()
        )));
    }
    Ok(b)
}

pub fn vertex_features(cells: &[Cell], table: &BBox) -> Result<Array2<f64>> {
    let (tw, th) = (table.width(), table.height());
    if tw <= 0.0 || th <= 0.0 {
        return Err(Error::DegenerateGeometry("zero-area table box".into()));
    }
    let mut out = Array2::zeros((cells.len(), VERTEX_FEATURES));
    for (i, c) in cells.iter().enumerate() {
        let (w, h) = (c.bbox.width(), c.bbox.height());
        let (cx, cy) = c.bbox.center();
        let row = [
            w,
            h,
            w / tw,
            h / th,
            cx,
            cy,
            (cx - table.x1) / tw,
            (cy - table.y1) / th,
        ];
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

/// Features of edges given as positions into `cells`.
pub fn edge_features(cells: &[Cell], edges: &[(usize, usize)], table: &BBox) -> Result<Array2<f64>> {
    let (tw, th) = (table.width(), table.height());
    if tw <= 0.0 || th <= 0.0 {
        return Err(Error::DegenerateGeometry("zero-area table box".into()));
    }
    let diag = (tw * tw + th * th).sqrt();
    let mut out = Array2::zeros((edges.len(), EDGE_FEATURES));
    for (e, &(i, j)) in edges.iter().enumerate() {
        let (a, b) = (&cells[i].bbox, &cells[j].bbox);
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let (dx, dy) = ((ax - bx).abs(), (ay - by).abs());
        let dist = (dx * dx + dy * dy).sqrt();
        let row = [
            dist,
            dx,
            dy,
            dist / diag,
            dx / tw,
            dy / th,
            interval_overlap_ratio((a.x1, a.x2), (b.x1, b.x2)),
            interval_overlap_ratio((a.y1, a.y2), (b.y1, b.y2)),
        ];
        out.row_mut(e).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

impl CellGraph {
    /// Builds the KNN graph with features. Cell ids must be `0..n`; the cells
    /// are stored ordered by id so ids double as vertex indices.
    pub fn build(cells: &[Cell], k: usize) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut cells = cells.to_vec();
        cells.sort_by_key(|c| c.id);
        if let Some((pos, c)) = cells.iter().enumerate().find(|(i, c)| c.id != *i) {
            return Err(Error::schema(
                "cells",
                format!("cell ids must be contiguous from 0; found id {} at position {pos}", c.id),
            ));
        }
        for c in &cells {
            c.bbox.validate()?;
        }
        let edges = knn_edges(&cells, k.max(1));
        let tb = table_box(&cells)?;
        let vertex_features = vertex_features(&cells, &tb)?;
        let edge_features = edge_features(&cells, &edges, &tb)?;
        Ok(CellGraph {
            cells,
            edges,
            vertex_features,
            edge_features,
            labels: None,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Relations whose label is Vertical or Horizontal under `labels`.
    pub fn relations_for(&self, labels: &[RelationLabel]) -> RelationSet {
        self.edges
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l != RelationLabel::NoRelation)
            .map(|(&(a, b), &l)| crate::types::Relation::new(a, b, l).expect("edges are canonical"))
            .collect()
    }
}

/// Labels every edge from the truth relations and reports how many truth
/// relations the candidate edges cover.
pub fn label_edges(graph: &CellGraph, truth: &RelationSet) -> Result<(CellGraph, LabelCoverage)> {
    let n = graph.n_vertices();
    let mut lookup = BTreeMap::new();
    for r in truth {
        if r.a() >= n {
            return Err(Error::UnknownCell(r.a()));
        }
        if r.b() >= n {
            return Err(Error::UnknownCell(r.b()));
        }
        lookup.insert(r.pair(), r.label());
    }
    let labels: Vec<RelationLabel> = graph
        .edges
        .iter()
        .map(|e| lookup.get(e).copied().unwrap_or(RelationLabel::NoRelation))
        .collect();
    let covered = labels.iter().filter(|l| **l != RelationLabel::NoRelation).count();
    let mut out = graph.clone();
    out.labels = Some(labels);
    Ok((
        out,
        LabelCoverage {
            covered,
            total: lookup.len(),
        },
    ))
}

/// Ground-truth relations by cell id; same adjacency as the evaluation metric.
pub fn truth_relations(structure: &TableStructure) -> Result<RelationSet> {
    truth_relations_of(structure)
}
