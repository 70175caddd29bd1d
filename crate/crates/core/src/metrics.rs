//! Adjacency-relation evaluation.
//!
//! A table is flattened into its horizontally and vertically adjacent cell
//! pairs (blank slots are skipped), and predicted tables are scored against
//! ground truth by matching those pairs on cell content.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{grid_of, Relation, RelationLabel, RelationSet, TableStructure};

/// Adjacent id pairs in emission order: rows top to bottom (left cell
/// first), then columns left to right (upper cell first). Each distinct pair
/// appears at most once per direction.
pub fn adjacent_pairs(s: &TableStructure) -> Result<Vec<(usize, usize, RelationLabel)>> {
    let grid = grid_of(s)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut emit = |a: usize, b: usize, label: RelationLabel, out: &mut Vec<_>| {
        if seen.insert((a.min(b), a.max(b), label)) {
            out.push((a, b, label));
        }
    };
    for r in 0..grid.n_rows() {
        let mut prev = None;
        for c in 0..grid.n_cols() {
            if let Some(id) = grid.get(r, c) {
                match prev {
                    Some(p) if p == id => {}
                    Some(p) => emit(p, id, RelationLabel::Horizontal, &mut out),
                    None => {}
                }
                prev = Some(id);
            }
        }
    }
    for c in 0..grid.n_cols() {
        let mut prev = None;
        for r in 0..grid.n_rows() {
            if let Some(id) = grid.get(r, c) {
                match prev {
                    Some(p) if p == id => {}
                    Some(p) => emit(p, id, RelationLabel::Vertical, &mut out),
                    None => {}
                }
                prev = Some(id);
            }
        }
    }
    Ok(out)
}

/// Id-based ground-truth relations of a structure.
pub fn truth_relations_of(s: &TableStructure) -> Result<RelationSet> {
    adjacent_pairs(s)?
        .into_iter()
        .map(|(a, b, l)| Relation::new(a, b, l))
        .collect()
}

pub fn normalize_content(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentRelation {
    pub a_content: String,
    pub b_content: String,
    pub label: RelationLabel,
}

impl ContentRelation {
    fn key(&self) -> (&str, &str, RelationLabel) {
        let (a, b) = (self.a_content.as_str(), self.b_content.as_str());
        if a <= b {
            (a, b, self.label)
        } else {
            (b, a, self.label)
        }
    }
}

pub fn relations_from_structure(s: &TableStructure) -> Result<Vec<ContentRelation>> {
    let content: BTreeMap<usize, String> = s
        .cells()
        .iter()
        .map(|c| (c.id, normalize_content(&c.content)))
        .collect();
    Ok(adjacent_pairs(s)?
        .into_iter()
        .map(|(a, b, label)| ContentRelation {
            a_content: content[&a].clone(),
            b_content: content[&b].clone(),
            label,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            correct: self.correct + o.correct,
            predicted: self.predicted + o.predicted,
            truth: self.truth + o.truth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub truth: usize,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// An empty prediction against an empty truth is a perfect score; an
    /// empty side against a non-empty one scores zero.
    pub fn from_counts(c: Counts) -> Self {
        let both_empty = c.predicted == 0 && c.truth == 0;
        let precision = ratio(c.correct, c.predicted, both_empty);
        let recall = ratio(c.correct, c.truth, both_empty);
        Metrics {
            precision,
            recall,
            f1: f1_of(precision, recall),
            correct: c.correct,
            predicted: c.predicted,
            truth: c.truth,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            correct: self.correct,
            predicted: self.predicted,
            truth: self.truth,
        }
    }
}

/// One-to-one multiset matching on (unordered contents, direction).
pub fn compare(predicted: &[ContentRelation], truth: &[ContentRelation]) -> Metrics {
    let mut available: BTreeMap<(&str, &str, RelationLabel), usize> = BTreeMap::new();
    for t in truth {
        *available.entry(t.key()).or_default() += 1;
    }
    let mut correct = 0;
    for p in predicted {
        if let Some(n) = available.get_mut(&p.key()) {
            if *n > 0 {
                *n -= 1;
                correct += 1;
            }
        }
    }
    Metrics::from_counts(Counts {
        correct,
        predicted: predicted.len(),
        truth: truth.len(),
    })
}

/// Returns `(macro, micro)`. Macro F1 is taken from the averaged precision
/// and recall, not averaged per table.
pub fn aggregate(per_table: &[Counts]) -> Result<(Metrics, Metrics)> {
    if per_table.is_empty() {
        return Err(Error::EmptyDataset("no tables to aggregate".into()));
    }
    let n = per_table.len() as f64;
    let per: Vec<Metrics> = per_table.iter().copied().map(Metrics::from_counts).collect();
    let total = per_table.iter().copied().fold(Counts::default(), |a, b| a + b);
    let p = per.iter().map(|m| m.precision).sum::<f64>() / n;
    let r = per.iter().map(|m| m.recall).sum::<f64>() / n;
    let macro_m = Metrics {
        precision: p,
        recall: r,
        f1: f1_of(p, r),
        correct: total.correct,
        predicted: total.predicted,
        truth: total.truth,
    };
    Ok((macro_m, Metrics::from_counts(total)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Drop relations with an empty-content endpoint on both sides.
    pub exclude_empty: bool,
    /// Keep only relations touching a cell that spans in the ground truth
    /// (endpoints identified by content).
    pub spanning_only: bool,
}

/// Scores one predicted table against its ground truth.
pub fn score_table(
    predicted: &TableStructure,
    truth: &TableStructure,
    opts: EvalOptions,
) -> Result<Counts> {
    let mut pred = relations_from_structure(predicted)?;
    let mut gold = relations_from_structure(truth)?;
    if opts.exclude_empty {
        let keep = |r: &ContentRelation| !r.a_content.is_empty() && !r.b_content.is_empty();
        pred.retain(keep);
        gold.retain(keep);
    }
    if opts.spanning_only {
        let spanning: BTreeSet<String> = truth
            .cells()
            .iter()
            .filter(|c| c.is_spanning())
            .map(|c| normalize_content(&c.content))
            .collect();
        let keep =
            |r: &ContentRelation| spanning.contains(&r.a_content) || spanning.contains(&r.b_content);
        pred.retain(keep);
        gold.retain(keep);
    }
    Ok(compare(&pred, &gold).counts())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl From<&Metrics> for Prf {
    fn from(m: &Metrics) -> Self {
        Prf {
            p: m.precision,
            r: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableScore {
    pub name: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub truth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    #[serde(rename = "micro")]
    pub micro_avg: Prf,
    pub per_table: Vec<TableScore>,
}

impl EvalReport {
    pub fn from_tables(tables: Vec<(String, Counts)>) -> Result<Self> {
        let counts: Vec<Counts> = tables.iter().map(|(_, c)| *c).collect();
        let (ma, mi) = aggregate(&counts)?;
        let per_table = tables
            .into_iter()
            .map(|(name, c)| {
                let m = Metrics::from_counts(c);
                TableScore {
                    name,
                    p: m.precision,
                    r: m.recall,
                    f1: m.f1,
                    correct: c.correct,
                    predicted: c.predicted,
                    truth: c.truth,
                }
            })
            .collect();
        Ok(EvalReport {
            macro_avg: (&ma).into(),
            micro_avg: (&mi).into(),
            per_table,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1");
        for (name, m) in [("macro", &self.macro_avg), ("micro", &self.micro_avg)] {
            let _ = writeln!(s, "{:<10} {:>9.4} {:>9.4} {:>9.4}", name, m.p, m.r, m.f1);
        }
        let _ = writeln!(s, "tables: {}", self.per_table.len());
        s
    }
}
