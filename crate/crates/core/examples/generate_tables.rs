//! Generate a synthetic dataset and print a summary of one table.
//!
//! Usage: `cargo run --release --example generate_tables [out_dir] [n]`
//! (defaults to a temporary directory and 20 tables).

use tablegraph::synth::{generate_one, write_dataset, GenConfig};
use tablegraph::types::grid_of;

fn main() -> tablegraph::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = std::env::temp_dir().join("tablegraph-generate");
    let out = args.next().map(Into::into).unwrap_or(tmp);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let cfg = GenConfig { complicated_prob: 0.5, ..GenConfig::default() };
    let manifest = write_dataset(&out, &cfg, n)?;
    let complicated = manifest.tables.iter().filter(|t| t.complicated).count();
    println!("{} tables in {} ({complicated} with spanning cells)", manifest.tables.len(), out.display());

    let t = generate_one(&cfg, 3);
    let grid = grid_of(&t.structure)?;
    println!("table seed 3: {} x {} grid, {} cells", grid.n_rows(), grid.n_cols(), t.structure.cells().len());
    for row in grid.to_rows() {
        let line: Vec<String> = row
            .iter()
            .map(|c| c.map_or("  .".to_string(), |id| format!("{id:>3}")))
            .collect();
        println!("  {}", line.join(" "));
    }
    for c in t.chunks.cells.iter().take(4) {
        let b = c.bbox;
        println!("  chunk {:>2} {:<8} x {:.1}..{:.1}  y {:.1}..{:.1}", c.id, c.content, b.x1, b.x2, b.y1, b.y2);
    }
    Ok(())
}
