//! Score a predicted structure against the truth with adjacency relations.
//!
//! Usage: `cargo run --release --example evaluate_relations [pred_dir truth_dir]`.
//! Without arguments a built-in pair of tables is scored.

use tablegraph::metrics::{compare, relations_from_structure};
use tablegraph::pipeline::{evaluate_dirs, EvalSettings};
use tablegraph::types::{StructuredCell, TableStructure};

fn table(cells: &[(&str, usize, usize)]) -> tablegraph::Result<TableStructure> {
    TableStructure::new(
        cells
            .iter()
            .enumerate()
            .map(|(id, &(content, row, col))| StructuredCell {
                id,
                content: content.into(),
                bbox: None,
                start_row: row,
                end_row: row,
                start_col: col,
                end_col: col,
            })
            .collect(),
    )
}

fn main() -> tablegraph::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [pred, truth] = args.as_slice() {
        let report = evaluate_dirs(pred.as_ref(), truth.as_ref(), EvalSettings::default())?;
        print!("{}", report.to_text());
        return Ok(());
    }
    let truth = table(&[("a", 0, 0), ("b", 0, 1), ("c", 1, 0), ("d", 1, 1)])?;
    let pred = table(&[("a", 0, 0), ("b", 0, 1), ("c", 0, 2), ("d", 0, 3)])?;
    let t = relations_from_structure(&truth)?;
    let p = relations_from_structure(&pred)?;
    for r in &p {
        let hit = if t.contains(r) { "correct" } else { "wrong" };
        println!("{:?} {} - {}  {hit}", r.label, r.a_content, r.b_content);
    }
    let m = compare(&p, &t);
    println!("precision {:.3}  recall {:.3}  F1 {:.3}", m.precision, m.recall, m.f1);
    Ok(())
}
