//! End-to-end wiring shared by the binary, the examples and the tests:
//! dataset loading, labeled-graph construction, inference and evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{label_edges, CellGraph, LabelCoverage};
use crate::ingest::{dataset_pairs, list_json, match_cells, read_chunks_with, read_structure, ChunkFile, YAxis};
use crate::metrics::{normalize_content, score_table, truth_relations_of, ContentRelation, EvalOptions, EvalReport};
use crate::model::{edge_logits, argmax_labels, Model};
use crate::recovery::{recover_structure, LabeledGraph};
use crate::types::{Relation, RelationLabel, RelationSet, TableStructure};

/// Candidate graph over the chunks, labeled from the truth structure.
///
/// Truth relations are carried over to chunk ids through the cell matching;
/// relations with an unmatched endpoint cannot be represented and count as
/// uncovered.
pub fn training_graph(chunks: &ChunkFile, truth: &TableStructure, k: usize) -> Result<(CellGraph, LabelCoverage)> {
    let graph = CellGraph::build(&chunks.cells, k)?;
    let matching = match_cells(chunks, truth);
    let to_chunk: BTreeMap<usize, usize> = matching
        .pairs
        .iter()
        .map(|&(ci, ti)| (truth.cells()[ti].id, chunks.cells[ci].id))
        .collect();
    let truth_rel = truth_relations_of(truth)?;
    let mut mapped = RelationSet::new();
    let mut dropped = 0;
    for r in &truth_rel {
        match (to_chunk.get(&r.a()), to_chunk.get(&r.b())) {
            (Some(&a), Some(&b)) if a != b => {
                mapped.insert(Relation::new(a, b, r.label())?);
            }
            _ => dropped += 1,
        }
    }
    let (graph, mut coverage) = label_edges(&graph, &mapped)?;
    coverage.total += dropped;
    Ok((graph, coverage))
}

/// A labeled training table loaded from disk.
#[derive(Clone, Debug)]
pub struct TrainingTable {
    pub name: String,
    pub graph: CellGraph,
    pub coverage: LabelCoverage,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub tables: Vec<TrainingTable>,
    /// Files in `chunk/` or `structure/` without a partner.
    pub orphans: Vec<String>,
}

impl TrainingSet {
    pub fn graphs(&self) -> Vec<CellGraph> {
        self.tables.iter().map(|t| t.graph.clone()).collect()
    }

    /// Coverage summed over all tables.
    pub fn coverage(&self) -> LabelCoverage {
        self.tables.iter().fold(LabelCoverage { covered: 0, total: 0 }, |acc, t| LabelCoverage {
            covered: acc.covered + t.coverage.covered,
            total: acc.total + t.coverage.total,
        })
    }
}

/// Loads and labels every `chunk/`, `structure/` pair under `dir` in parallel.
pub fn load_training_set(dir: &Path, k: usize, y_axis: YAxis) -> Result<TrainingSet> {
    let (pairs, orphans) = dataset_pairs(dir)?;
    let tables = pairs
        .par_iter()
        .map(|p| {
            let chunks = read_chunks_with(&p.chunk_path, y_axis)?;
            let truth = read_structure(&p.structure_path)?;
            let (graph, coverage) = training_graph(&chunks, &truth, k)?;
            Ok(TrainingTable {
                name: p.name.clone(),
                graph,
                coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet { tables, orphans })
}

/// Everything produced for one table at inference time.
#[derive(Clone, Debug)]
pub struct Inference {
    pub graph: CellGraph,
    pub logits: Array2<f64>,
    pub labels: Vec<RelationLabel>,
    pub structure: TableStructure,
}

pub fn infer_chunks(chunks: &ChunkFile, model: &Model) -> Result<Inference> {
    let graph = CellGraph::build(&chunks.cells, model.hyper.k)?;
    let logits = edge_logits(&graph, model)?;
    let labels = argmax_labels(&logits);
    let structure = recover_structure(&LabeledGraph::from_prediction(&graph, &labels))?;
    Ok(Inference {
        graph,
        logits,
        labels,
        structure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub a: usize,
    pub b: usize,
    /// Logits in the order vertical, horizontal, none.
    pub logits: [f64; 3],
    pub label: RelationLabel,
}

impl Inference {
    /// Relations read straight off the predicted edge labels, without
    /// building a structure first.
    pub fn content_relations(&self) -> Vec<ContentRelation> {
        let content = |id: usize| normalize_content(&self.graph.cells[id].content);
        self.graph
            .relations_for(&self.labels)
            .iter()
            .map(|r| ContentRelation {
                a_content: content(r.a()),
                b_content: content(r.b()),
                label: r.label(),
            })
            .collect()
    }

    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        self.graph
            .edges
            .iter()
            .zip(self.logits.rows())
            .zip(&self.labels)
            .map(|((&(a, b), row), &label)| EdgeRecord {
                a,
                b,
                logits: [row[0], row[1], row[2]],
                label,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalSettings {
    /// Keep only tables whose truth contains a spanning cell.
    pub only_complicated: bool,
    /// Score only relations touching a truth spanning cell. Implies
    /// `only_complicated`: other tables have nothing to score.
    pub spanning_only: bool,
    pub exclude_empty: bool,
}

/// Scores named `(predicted, truth)` pairs.
pub fn evaluate_pairs(items: &[(String, TableStructure, TableStructure)], settings: EvalSettings) -> Result<EvalReport> {
    let opts = EvalOptions {
        exclude_empty: settings.exclude_empty,
        spanning_only: settings.spanning_only,
    };
    let keep_complicated = settings.only_complicated || settings.spanning_only;
    let scored = items
        .par_iter()
        .filter(|(_, _, truth)| !keep_complicated || truth.is_complicated())
        .map(|(name, pred, truth)| Ok((name.clone(), score_table(pred, truth, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    if scored.is_empty() {
        return Err(Error::EmptyDataset(if keep_complicated {
            "no complicated tables to evaluate".into()
        } else {
            "no tables to evaluate".into()
        }));
    }
    EvalReport::from_tables(scored)
}

/// Pairs structure files by name across two directories and scores them.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path, settings: EvalSettings) -> Result<EvalReport> {
    let pred: BTreeMap<String, _> = list_json(pred_dir)?.into_iter().collect();
    let truth: BTreeMap<String, _> = list_json(truth_dir)?.into_iter().collect();
    let mut orphans: Vec<String> = pred
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .map(|k| format!("pred/{k}.json"))
        .collect();
    orphans.extend(truth.keys().filter(|k| !pred.contains_key(*k)).map(|k| format!("truth/{k}.json")));
    if !orphans.is_empty() {
        return Err(Error::Pairing(orphans));
    }
    let items = pred
        .par_iter()
        .map(|(name, p)| Ok((name.clone(), read_structure(p)?, read_structure(&truth[name])?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&items, settings)
}
