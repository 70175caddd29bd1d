//! Overfit a small model on a handful of tables and report edge accuracy.
//!
//! Usage: `cargo run --release --example train_overfit [tables] [steps]`
//! (defaults 50, 300).

use tablegraph::model::{predict, FeatureScaler, HyperParams, Trainer};
use tablegraph::pipeline::training_graph;
use tablegraph::synth::{generate, GenConfig};

fn main() -> tablegraph::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse().unwrap_or(0));
    let n = args.next().unwrap_or(50).max(1);
    let steps = args.next().unwrap_or(300);

    let tables = generate(&GenConfig { seed: 500, ..GenConfig::default() }, n)?;
    let graphs = tables
        .iter()
        .map(|t| training_graph(&t.chunks, &t.structure, 20).map(|(g, _)| g))
        .collect::<tablegraph::Result<Vec<_>>>()?;
    let hyper = HyperParams { blocks: 2, learning_rate: 3e-3, dropout: 0.0, ..HyperParams::default() }.with_dim(16);
    let mut trainer = Trainer::new(hyper, FeatureScaler::fit(&graphs), 0)?;
    while trainer.steps() + graphs.len() <= steps {
        let loss = trainer.epoch(&graphs)?;
        println!("step {:>4}  mean loss {loss:.5}", trainer.steps());
    }

    let (mut correct, mut total) = (0, 0);
    for g in &graphs {
        let pred = predict(g, &trainer.model)?;
        correct += pred.iter().zip(g.labels.as_deref().unwrap_or(&[])).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    println!("edge accuracy {:.4} ({correct}/{total})", correct as f64 / total.max(1) as f64);
    Ok(())
}
