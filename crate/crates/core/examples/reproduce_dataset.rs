//! Train and evaluate on a real dataset laid out as
//! `<dir>/train/{chunk,structure}` and `<dir>/test/{chunk,structure}`.
//!
//! Usage: `cargo run --release --example reproduce_dataset [dir]`, or set
//! `TABLEGRAPH_DATASET_DIR`. Does nothing when no dataset is available.
//! The reference result is a macro F1 of at least 0.90 on the test split.

use std::path::PathBuf;

use tablegraph::ingest::{dataset_pairs, read_chunks, read_structure, YAxis};
use tablegraph::model::{train, HyperParams};
use tablegraph::pipeline::{evaluate_pairs, infer_chunks, load_training_set, EvalSettings};

const TARGET_F1: f64 = 0.90;

fn main() -> tablegraph::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .or_else(|| std::env::var("TABLEGRAPH_DATASET_DIR").ok())
        .map(PathBuf::from);
    let Some(dir) = dir.filter(|d| d.join("train/chunk").is_dir() && d.join("test/chunk").is_dir()) else {
        println!("no dataset found; pass a directory with train/ and test/ splits");
        return Ok(());
    };
    let hyper = HyperParams::default();
    let set = load_training_set(&dir.join("train"), hyper.k, YAxis::Up)?;
    let cov = set.coverage();
    println!("{} training tables, candidate coverage {:.2}%", set.tables.len(), 100.0 * cov.ratio());
    let (model, log) = train(&set.graphs(), &hyper, 0)?;
    println!("final epoch loss {:.5}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));

    let (pairs, _) = dataset_pairs(&dir.join("test"))?;
    let mut items = Vec::new();
    for p in &pairs {
        let chunks = read_chunks(&p.chunk_path)?;
        match infer_chunks(&chunks, &model) {
            Ok(inf) => items.push((p.name.clone(), inf.structure, read_structure(&p.structure_path)?)),
            Err(e) => eprintln!("{}: {e}", p.name),
        }
    }
    let report = evaluate_pairs(&items, EvalSettings::default())?;
    print!("{}", report.to_text());
    let verdict = if report.macro_avg.f1 >= TARGET_F1 { "meets" } else { "below" };
    println!("macro F1 {:.4} {verdict} the {TARGET_F1} reference", report.macro_avg.f1);
    Ok(())
}
