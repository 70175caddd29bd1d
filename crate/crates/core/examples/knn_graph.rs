//! Build the candidate graph for a small table and show its features.
//!
//! Usage: `cargo run --release --example knn_graph [k]` (default 3).

use tablegraph::graph::{CellGraph, EDGE_FEATURE_NAMES, VERTEX_FEATURE_NAMES};
use tablegraph::synth::{generate_one, GenConfig, Range};

fn main() -> tablegraph::Result<()> {
    let k = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = GenConfig { rows: Range::new(3, 3), cols: Range::new(3, 3), ..GenConfig::default() };
    let table = generate_one(&cfg, 1);
    let graph = CellGraph::build(&table.chunks.cells, k)?;
    println!("{} cells, {} candidate edges with k = {k}", graph.n_vertices(), graph.n_edges());

    println!("vertex features: {}", VERTEX_FEATURE_NAMES.join(", "));
    for (i, row) in graph.vertex_features.rows().into_iter().enumerate().take(3) {
        let v: Vec<String> = row.iter().map(|x| format!("{x:7.3}")).collect();
        println!("  {i:>2} {}", v.join(" "));
    }
    println!("edge features: {}", EDGE_FEATURE_NAMES.join(", "));
    for (&(a, b), row) in graph.edges.iter().zip(graph.edge_features.rows()).take(5) {
        let v: Vec<String> = row.iter().map(|x| format!("{x:7.3}")).collect();
        println!("  {a:>2}-{b:<2} {}", v.join(" "));
    }
    Ok(())
}
