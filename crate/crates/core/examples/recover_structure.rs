//! Turn labeled cell pairs into rows and columns.
//!
//! The table has a header spanning two columns:
//!
//! ```text
//! +-------------+
//! |   Results   |
//! +------+------+
//! | mean | std  |
//! +------+------+
//! | 1.2  | 0.3  |
//! +------+------+
//! ```

use tablegraph::recovery::{recover_structure, relation_set, LabeledGraph};
use tablegraph::types::{grid_of, BBox, Cell, RelationLabel::{Horizontal as H, Vertical as V}};

fn cell(id: usize, text: &str, x1: f64, x2: f64, y1: f64, y2: f64) -> tablegraph::Result<Cell> {
    Ok(Cell { id, content: text.into(), bbox: BBox::new(x1, x2, y1, y2)? })
}

fn main() -> tablegraph::Result<()> {
    let cells = vec![
        cell(0, "Results", 10.0, 90.0, 40.0, 50.0)?,
        cell(1, "mean", 10.0, 40.0, 20.0, 30.0)?,
        cell(2, "std", 60.0, 90.0, 20.0, 30.0)?,
        cell(3, "1.2", 10.0, 40.0, 0.0, 10.0)?,
        cell(4, "0.3", 60.0, 90.0, 0.0, 10.0)?,
    ];
    let relations = relation_set(&[(0, 1, V), (0, 2, V), (1, 2, H), (1, 3, V), (2, 4, V), (3, 4, H)])?;
    let structure = recover_structure(&LabeledGraph::new(cells, relations)?)?;
    for c in structure.cells() {
        println!(
            "{:<8} rows {}..={}  cols {}..={}",
            c.content, c.start_row, c.end_row, c.start_col, c.end_col
        );
    }
    let grid = grid_of(&structure)?;
    println!("grid {} x {}", grid.n_rows(), grid.n_cols());
    Ok(())
}
