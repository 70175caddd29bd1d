//! Generate, train, infer and evaluate in memory.
//!
//! Usage: `cargo run --release --example end_to_end [train_tables] [test_tables] [epochs]`
//! (defaults 200, 50, 15). Prints per-epoch losses and held-out scores.

use std::time::Instant;

use tablegraph::model::{train, HyperParams};
use tablegraph::pipeline::{evaluate_pairs, infer_chunks, training_graph, EvalSettings};
use tablegraph::synth::{generate, GenConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> tablegraph::Result<()> {
    let (n_train, n_test, epochs) = (arg(1, 200), arg(2, 50), arg(3, 15));
    let hyper = HyperParams { epochs, ..HyperParams::default() };

    let train_tables = generate(&GenConfig { seed: 0, ..GenConfig::default() }, n_train)?;
    let test_tables = generate(&GenConfig { seed: 1_000_000, ..GenConfig::default() }, n_test)?;

    let graphs = train_tables
        .iter()
        .map(|t| training_graph(&t.chunks, &t.structure, hyper.k).map(|(g, _)| g))
        .collect::<tablegraph::Result<Vec<_>>>()?;
    let start = Instant::now();
    let (model, log) = train(&graphs, &hyper, 7)?;
    for (i, l) in log.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {:.5}", i + 1, l);
    }
    println!("trained {} steps in {:.1?}", log.steps, start.elapsed());

    let items = test_tables
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((format!("t{i}"), infer_chunks(&t.chunks, &model)?.structure, t.structure.clone())))
        .collect::<tablegraph::Result<Vec<_>>>()?;
    let all = evaluate_pairs(&items, EvalSettings::default())?;
    println!("all tables\n{}", all.to_text());
    let spanning = evaluate_pairs(&items, EvalSettings { spanning_only: true, ..EvalSettings::default() })?;
    println!("relations touching spanning cells\n{}", spanning.to_text());
    Ok(())
}
