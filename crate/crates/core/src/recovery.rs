//! Labeled graph to logical table structure.
//!
//! Rows and columns come from 1-D banding of the cell boxes; predicted
//! relations then repair spans the geometry missed.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::CellGraph;
use crate::metrics::truth_relations_of;
use crate::types::{interval_overlap_ratio, Cell, Relation, RelationLabel, RelationSet, StructuredCell, TableStructure};

/// Minimum overlap ratio for a cell to join a band or to be assigned to one.
pub const BAND_OVERLAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraph {
    pub cells: Vec<Cell>,
    pub relations: RelationSet,
}

impl LabeledGraph {
    /// Checks that cell ids are unique and every relation endpoint is a cell.
    pub fn new(cells: Vec<Cell>, relations: RelationSet) -> Result<Self> {
        let ids: BTreeSet<usize> = cells.iter().map(|c| c.id).collect();
        if ids.len() != cells.len() {
            return Err(Error::schema("cells", "duplicate cell id"));
        }
        for r in &relations {
            for id in [r.a(), r.b()] {
                if !ids.contains(&id) {
                    return Err(Error::UnknownCell(id));
                }
            }
        }
        Ok(LabeledGraph { cells, relations })
    }

    /// The graph's cells with the relations implied by per-edge `labels`.
    pub fn from_prediction(graph: &CellGraph, labels: &[RelationLabel]) -> Self {
        LabeledGraph {
            cells: graph.cells.clone(),
            relations: graph.relations_for(labels),
        }
    }
}

/// Clusters intervals into bands. `order` lists interval indices in
/// processing order; bands come back in creation order.
fn bands(intervals: &[(f64, f64)], order: &[usize]) -> Vec<(f64, f64)> {
    let mut bands: Vec<(f64, f64)> = Vec::new();
    for &i in order {
        let iv = intervals[i];
        let mut best: Option<(usize, f64)> = None;
        for (b, band) in bands.iter().enumerate() {
            let r = interval_overlap_ratio(iv, *band);
            if r >= BAND_OVERLAP && best.is_none_or(|(_, br)| r > br) {
                best = Some((b, r));
            }
        }
        match best {
            Some((b, _)) => {
                let band = &mut bands[b];
                let lo = band.0.max(iv.0);
                let hi = band.1.min(iv.1);
                *band = if lo <= hi { (lo, hi) } else { *band };
            }
            None => bands.push(iv),
        }
    }
    bands
}

/// Index range of the bands an interval overlaps with at least [`BAND_OVERLAP`].
fn span_of(iv: (f64, f64), bands: &[(f64, f64)]) -> Option<(usize, usize)> {
    let hits: Vec<usize> = (0..bands.len())
        .filter(|&b| interval_overlap_ratio(iv, bands[b]) >= BAND_OVERLAP)
        .collect();
    Some((*hits.first()?, *hits.last()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Span {
    rows: (usize, usize),
    cols: (usize, usize),
}

impl Span {
    fn slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.rows.0..=self.rows.1).flat_map(move |r| (self.cols.0..=self.cols.1).map(move |c| (r, c)))
    }

    fn area(&self) -> usize {
        (self.rows.1 - self.rows.0 + 1) * (self.cols.1 - self.cols.0 + 1)
    }
}

/// Slot occupancy keyed by `(row, col)`.
#[derive(Default)]
struct Occupancy(BTreeMap<(usize, usize), usize>);

impl Occupancy {
    fn free_for(&self, span: &Span, who: usize) -> bool {
        span.slots().all(|s| self.0.get(&s).is_none_or(|&o| o == who))
    }

    fn fill(&mut self, span: &Span, who: usize) {
        for s in span.slots() {
            self.0.insert(s, who);
        }
    }

    fn clear(&mut self, span: &Span) {
        for s in span.slots() {
            self.0.remove(&s);
        }
    }

    /// Largest free sub-rectangle of `span`; ties go to the top-left-most.
    fn largest_free(&self, span: &Span) -> Option<Span> {
        let mut best: Option<Span> = None;
        for r0 in span.rows.0..=span.rows.1 {
            for r1 in r0..=span.rows.1 {
                for c0 in span.cols.0..=span.cols.1 {
                    for c1 in c0..=span.cols.1 {
                        let cand = Span {
                            rows: (r0, r1),
                            cols: (c0, c1),
                        };
                        if best.is_none_or(|b| cand.area() > b.area()) && self.free_for(&cand, usize::MAX) {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        best
    }
}

/// Extends `target` minimally along one axis so its range meets `other`.
fn stretch(target: (usize, usize), other: (usize, usize)) -> (usize, usize) {
    if target.1 < other.0 {
        (target.0, other.0)
    } else if target.0 > other.1 {
        (other.1, target.1)
    } else {
        target
    }
}

fn intersects(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

fn dense(used: &BTreeSet<usize>) -> BTreeMap<usize, usize> {
    used.iter().enumerate().map(|(i, &u)| (u, i)).collect()
}

/// Recovers row and column spans for every cell. Never fails on a non-empty
/// graph of valid cells, whatever the relations say.
pub fn recover_structure(g: &LabeledGraph) -> Result<TableStructure> {
    if g.cells.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = g.cells.len();
    let y_iv: Vec<(f64, f64)> = g.cells.iter().map(|c| (c.bbox.y1, c.bbox.y2)).collect();
    let x_iv: Vec<(f64, f64)> = g.cells.iter().map(|c| (c.bbox.x1, c.bbox.x2)).collect();

    // Rows top to bottom (y grows upward), columns left to right.
    let mut by_y: Vec<usize> = (0..n).collect();
    by_y.sort_by(|&a, &b| {
        let (ca, cb) = (g.cells[a].bbox.center().1, g.cells[b].bbox.center().1);
        cb.total_cmp(&ca).then(g.cells[a].id.cmp(&g.cells[b].id))
    });
    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| {
        let (ca, cb) = (g.cells[a].bbox.center().0, g.cells[b].bbox.center().0);
        ca.total_cmp(&cb).then(g.cells[a].id.cmp(&g.cells[b].id))
    });
    let mut row_bands = bands(&y_iv, &by_y);
    row_bands.sort_by(|a, b| (b.0 + b.1).total_cmp(&(a.0 + a.1)));
    let mut col_bands = bands(&x_iv, &by_x);
    col_bands.sort_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)));

    let nearest = |iv: (f64, f64), bands: &[(f64, f64)]| -> (usize, usize) {
        span_of(iv, bands).unwrap_or_else(|| {
            let mid = 0.5 * (iv.0 + iv.1);
            let b = (0..bands.len())
                .min_by(|&a, &b| {
                    let da = (0.5 * (bands[a].0 + bands[a].1) - mid).abs();
                    let db = (0.5 * (bands[b].0 + bands[b].1) - mid).abs();
                    da.total_cmp(&db)
                })
                .expect("at least one band");
            (b, b)
        })
    };
    let mut spans: Vec<Span> = (0..n)
        .map(|i| Span {
            rows: nearest(y_iv[i], &row_bands),
            cols: nearest(x_iv[i], &col_bands),
        })
        .collect();

    // Place small cells first; a conflicting cell keeps the largest free part
    // of its range or, failing that, moves to a fresh column on the right.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (spans[i].area(), g.cells[i].id));
    let mut occ = Occupancy::default();
    let mut extra_cols = col_bands.len();
    for &i in &order {
        let span = spans[i];
        if !occ.free_for(&span, usize::MAX) {
            spans[i] = occ.largest_free(&span).unwrap_or_else(|| {
                extra_cols += 1;
                Span {
                    rows: span.rows,
                    cols: (extra_cols - 1, extra_cols - 1),
                }
            });
        }
        occ.fill(&spans[i], i);
    }

    let index: BTreeMap<usize, usize> = g.cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    for rel in &g.relations {
        let (Some(&a), Some(&b)) = (index.get(&rel.a()), index.get(&rel.b())) else {
            continue;
        };
        let (sa, sb) = (spans[a], spans[b]);
        let axis_rows = match rel.label() {
            RelationLabel::Horizontal => true,
            RelationLabel::Vertical => false,
            RelationLabel::NoRelation => continue,
        };
        let range = |s: &Span| if axis_rows { s.rows } else { s.cols };
        if intersects(range(&sa), range(&sb)) {
            continue;
        }
        let len = |r: (usize, usize)| r.1 - r.0;
        // The smaller-span endpoint grows first; the other only if that is blocked.
        let first = if len(range(&sa)) < len(range(&sb)) { (a, b) } else { (b, a) };
        for (t, o) in [first, (first.1, first.0)] {
            let mut grown = spans[t];
            if axis_rows {
                grown.rows = stretch(grown.rows, spans[o].rows);
            } else {
                grown.cols = stretch(grown.cols, spans[o].cols);
            }
            if occ.free_for(&grown, t) {
                occ.clear(&spans[t]);
                occ.fill(&grown, t);
                spans[t] = grown;
                break;
            }
        }
    }

    let used_rows: BTreeSet<usize> = spans.iter().flat_map(|s| s.rows.0..=s.rows.1).collect();
    let used_cols: BTreeSet<usize> = spans.iter().flat_map(|s| s.cols.0..=s.cols.1).collect();
    let (rmap, cmap) = (dense(&used_rows), dense(&used_cols));
    let cells = g
        .cells
        .iter()
        .zip(&spans)
        .map(|(c, s)| StructuredCell {
            id: c.id,
            content: c.content.clone(),
            bbox: Some(c.bbox),
            start_row: rmap[&s.rows.0],
            end_row: rmap[&s.rows.1],
            start_col: cmap[&s.cols.0],
            end_col: cmap[&s.cols.1],
        })
        .collect();
    TableStructure::new(cells)
}

/// Relations (by cell id) of the recovered structure.
pub fn relations_of_recovery(g: &LabeledGraph) -> Result<RelationSet> {
    truth_relations_of(&recover_structure(g)?)
}

/// Convenience for building relation sets in examples and tests.
pub fn relation_set(items: &[(usize, usize, RelationLabel)]) -> Result<RelationSet> {
    items.iter().map(|&(a, b, l)| Relation::new(a, b, l)).collect()
}
