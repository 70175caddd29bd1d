//! Domain vocabulary shared by every stage: boxes, cells, relations and
//! logical table structures.
//!
//! Geometry uses the PDF convention throughout: x grows to the right and
//! y grows upward, so the top row of a table has the largest y values.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned bounding box in PDF points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, x2: f64, y1: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, x2, y1, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x1, self.x2, self.y1, self.y2].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry(format!("non-finite box {self:?}")));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::DegenerateGeometry(format!("inverted box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            x2: self.x2.max(other.x2),
            y1: self.y1.min(other.y1),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            x2: self.x2 + dx,
            y1: self.y1 + dy,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            x2: self.x2 * factor,
            y1: self.y1 * factor,
            y2: self.y2 * factor,
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // Both boxes are degenerate; call them identical only if they coincide.
            if self == other {
                1.0
            } else {
                0.0
            }
        } else {
            inter / union
        }
    }

    /// Tight box around a non-empty set of boxes.
    pub fn enclosing<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> Option<BBox> {
        boxes.into_iter().copied().reduce(|a, b| a.union(&b))
    }
}

/// Overlap of two closed 1-D intervals divided by the smaller extent, in `[0, 1]`.
///
/// A zero-length interval counts as fully overlapped when it lies inside the
/// other interval.
pub fn interval_overlap_ratio(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.1.min(b.1) - a.0.max(b.0);
    let smaller = (a.1 - a.0).min(b.1 - b.0);
    if smaller <= 0.0 {
        return if inter >= 0.0 { 1.0 } else { 0.0 };
    }
    (inter.max(0.0) / smaller).clamp(0.0, 1.0)
}

/// A table cell as extracted from a document: text plus geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub content: String,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    Vertical,
    Horizontal,
    NoRelation,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 3] = [
        RelationLabel::Vertical,
        RelationLabel::Horizontal,
        RelationLabel::NoRelation,
    ];

    /// Class index used by the classifier; also the argmax tie-break order.
    pub fn index(self) -> usize {
        match self {
            RelationLabel::Vertical => 0,
            RelationLabel::Horizontal => 1,
            RelationLabel::NoRelation => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationLabel::Vertical => "vertical",
            RelationLabel::Horizontal => "horizontal",
            RelationLabel::NoRelation => "none",
        })
    }
}

/// Unordered adjacency between two cells, stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    a: usize,
    b: usize,
    label: RelationLabel,
}

impl Relation {
    pub fn new(a: usize, b: usize, label: RelationLabel) -> Result<Self> {
        canonical_relation(a, b, label)
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn label(&self) -> RelationLabel {
        self.label
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.a, self.b)
    }
}

pub fn canonical_relation(a: usize, b: usize, label: RelationLabel) -> Result<Relation> {
    if a == b {
        return Err(Error::DegenerateRelation(a));
    }
    if label == RelationLabel::NoRelation {
        return Err(Error::InvalidLabel);
    }
    Ok(Relation {
        a: a.min(b),
        b: a.max(b),
        label,
    })
}

pub type RelationSet = BTreeSet<Relation>;

/// A cell with its logical coordinates (inclusive spans).
///
/// Ground-truth structure files carry no geometry, so the box is optional.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredCell {
    pub id: usize,
    pub content: String,
    pub bbox: Option<BBox>,
    pub start_row: usize,
    pub end_row: usize,
    pub start_col: usize,
    pub end_col: usize,
}

impl StructuredCell {
    pub fn is_spanning(&self) -> bool {
        self.end_row > self.start_row || self.end_col > self.start_col
    }

    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.start_row..=self.end_row
    }

    pub fn cols(&self) -> std::ops::RangeInclusive<usize> {
        self.start_col..=self.end_col
    }

    pub fn slot_count(&self) -> usize {
        (self.end_row - self.start_row + 1) * (self.end_col - self.start_col + 1)
    }
}

/// Logical table: cells placed on an `n_rows x n_cols` grid without overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct TableStructure {
    cells: Vec<StructuredCell>,
    n_rows: usize,
    n_cols: usize,
}

impl TableStructure {
    /// Builds a structure whose grid is exactly large enough for its cells.
    pub fn new(cells: Vec<StructuredCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyTable);
        }
        let n_rows = cells.iter().map(|c| c.end_row).max().unwrap_or(0) + 1;
        let n_cols = cells.iter().map(|c| c.end_col).max().unwrap_or(0) + 1;
        Self::with_dims(cells, n_rows, n_cols)
    }

    pub fn with_dims(cells: Vec<StructuredCell>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyTable);
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::schema("structure", "grid must have at least one row and column"));
        }
        let mut ids = BTreeSet::new();
        for c in &cells {
            if c.start_row > c.end_row || c.start_col > c.end_col {
                return Err(Error::schema(
                    "structure",
                    format!("cell {} has an inverted span", c.id),
                ));
            }
            if c.end_row >= n_rows || c.end_col >= n_cols {
                return Err(Error::schema(
                    "structure",
                    format!("cell {} lies outside the {n_rows}x{n_cols} grid", c.id),
                ));
            }
            if let Some(b) = &c.bbox {
                b.validate()?;
            }
            if !ids.insert(c.id) {
                return Err(Error::schema("structure", format!("duplicate cell id {}", c.id)));
            }
        }
        let s = TableStructure {
            cells,
            n_rows,
            n_cols,
        };
        grid_of(&s)?;
        Ok(s)
    }

    pub fn cells(&self) -> &[StructuredCell] {
        &self.cells
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_complicated(&self) -> bool {
        self.cells.iter().any(StructuredCell::is_spanning)
    }

    pub fn cell(&self, id: usize) -> Option<&StructuredCell> {
        self.cells.iter().find(|c| c.id == id)
    }
}

/// Dense slot map of a structure; `None` marks a blank slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    n_rows: usize,
    n_cols: usize,
    slots: Vec<Option<usize>>,
}

impl Grid {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.slots[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[Option<usize>] {
        &self.slots[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.n_rows).map(|r| self.row(r).to_vec()).collect()
    }
}

pub fn grid_of(structure: &TableStructure) -> Result<Grid> {
    let (n_rows, n_cols) = (structure.n_rows, structure.n_cols);
    let mut slots = vec![None; n_rows * n_cols];
    for c in &structure.cells {
        for r in c.rows() {
            for col in c.cols() {
                let slot = &mut slots[r * n_cols + col];
                if let Some(first) = *slot {
                    return Err(Error::Overlap {
                        row: r,
                        col,
                        first,
                        second: c.id,
                    });
                }
                *slot = Some(c.id);
            }
        }
    }
    Ok(Grid {
        n_rows,
        n_cols,
        slots,
    })
}
