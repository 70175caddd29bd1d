//! Table file I/O and chunk-to-truth cell matching.
//!
//! Chunk files hold the extracted text fragments of one table:
//!
//! ```json
//! {"chunks": [{"pos": [x1, x2, y1, y2], "text": "..."}]}
//! ```
//!
//! Structure files hold the logical coordinates of every cell:
//!
//! ```json
//! {"cells": [{"id": 0, "content": "...", "start_row": 0, "end_row": 0,
//!             "start_col": 0, "end_col": 1}]}
//! ```
//!
//! `content` may also be a list of tokens, which are joined with spaces.
//! Structure files written by this crate add an optional `"pos"` box when the
//! cell geometry is known.

mod assignment;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use assignment::min_cost_assignment;

use crate::error::{Error, Result};
use crate::metrics::normalize_content;
use crate::types::{BBox, Cell, StructuredCell, TableStructure};

/// Vertical axis orientation of an input file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum YAxis {
    /// PDF user space: y grows upward. No conversion.
    #[default]
    Up,
    /// Image/screen space: y grows downward. Flipped on read.
    Down,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkFile {
    pub cells: Vec<Cell>,
}

impl ChunkFile {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn from_parts(parts: impl IntoIterator<Item = (String, BBox)>) -> Self {
        ChunkFile {
            cells: parts
                .into_iter()
                .enumerate()
                .map(|(id, (content, bbox))| Cell { id, content, bbox })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    pos: [f64; 4],
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ChunkDoc {
    chunks: Vec<ChunkRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ContentField {
    Text(String),
    Tokens(Vec<String>),
}

#[derive(Deserialize)]
struct CellRecordIn {
    id: usize,
    content: ContentField,
    start_row: usize,
    end_row: usize,
    start_col: usize,
    end_col: usize,
    #[serde(default)]
    pos: Option<[f64; 4]>,
}

#[derive(Serialize)]
struct CellRecordOut<'a> {
    id: usize,
    content: &'a str,
    start_row: usize,
    end_row: usize,
    start_col: usize,
    end_col: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos: Option<[f64; 4]>,
}

#[derive(Deserialize)]
struct StructureDocIn {
    cells: Vec<CellRecordIn>,
}

#[derive(Serialize)]
struct StructureDocOut<'a> {
    cells: Vec<CellRecordOut<'a>>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => Error::schema(origin.display().to_string(), e.to_string()),
            Category::Io | Category::Syntax | Category::Eof => Error::Parse {
                path: origin.to_path_buf(),
                offset: byte_offset(text, e.line(), e.column()),
                message: e.to_string(),
            },
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bbox_from_pos(pos: [f64; 4], y_axis: YAxis, context: &str) -> Result<BBox> {
    let [x1, x2, y1, y2] = pos;
    let (y1, y2) = match y_axis {
        YAxis::Up => (y1, y2),
        YAxis::Down => (-y2, -y1),
    };
    BBox::new(x1, x2, y1, y2).map_err(|e| Error::schema(context, e.to_string()))
}

pub fn parse_chunks(text: &str, origin: &Path, y_axis: YAxis) -> Result<ChunkFile> {
    let doc: ChunkDoc = parse_json(text, origin)?;
    if doc.chunks.is_empty() {
        return Err(Error::EmptyTable);
    }
    let ctx = origin.display().to_string();
    let cells = doc
        .chunks
        .into_iter()
        .enumerate()
        .map(|(id, c)| {
            Ok(Cell {
                id,
                content: c.text,
                bbox: bbox_from_pos(c.pos, y_axis, &ctx)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ChunkFile { cells })
}

pub fn read_chunks(path: impl AsRef<Path>) -> Result<ChunkFile> {
    read_chunks_with(path, YAxis::Up)
}

pub fn read_chunks_with(path: impl AsRef<Path>, y_axis: YAxis) -> Result<ChunkFile> {
    let path = path.as_ref();
    parse_chunks(&read_text(path)?, path, y_axis)
}

pub fn chunks_to_json(chunks: &ChunkFile) -> String {
    let doc = ChunkDoc {
        chunks: chunks
            .cells
            .iter()
            .map(|c| ChunkRecord {
                pos: [c.bbox.x1, c.bbox.x2, c.bbox.y1, c.bbox.y2],
                text: c.content.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("chunk serialization is infallible")
}

pub fn write_chunks(chunks: &ChunkFile, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), chunks_to_json(chunks).as_bytes())
}

pub fn parse_structure(text: &str, origin: &Path) -> Result<TableStructure> {
    let doc: StructureDocIn = parse_json(text, origin)?;
    let ctx = origin.display().to_string();
    let cells = doc
        .cells
        .into_iter()
        .map(|c| {
            let content = match c.content {
                ContentField::Text(s) => s,
                ContentField::Tokens(t) => t.join(" "),
            };
            Ok(StructuredCell {
                id: c.id,
                content,
                bbox: c.pos.map(|p| bbox_from_pos(p, YAxis::Up, &ctx)).transpose()?,
                start_row: c.start_row,
                end_row: c.end_row,
                start_col: c.start_col,
                end_col: c.end_col,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TableStructure::new(cells).map_err(|e| match e {
        Error::Schema { message, .. } => Error::schema(ctx, message),
        other => other,
    })
}

pub fn read_structure(path: impl AsRef<Path>) -> Result<TableStructure> {
    let path = path.as_ref();
    parse_structure(&read_text(path)?, path)
}

pub fn structure_to_json(s: &TableStructure) -> String {
    let doc = StructureDocOut {
        cells: s
            .cells()
            .iter()
            .map(|c| CellRecordOut {
                id: c.id,
                content: &c.content,
                start_row: c.start_row,
                end_row: c.end_row,
                start_col: c.start_col,
                end_col: c.end_col,
                pos: c.bbox.map(|b| [b.x1, b.x2, b.y1, b.y2]),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("structure serialization is infallible")
}

pub fn write_structure(s: &TableStructure, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), structure_to_json(s).as_bytes())
}

/// Result of aligning extracted chunks with ground-truth cells.
///
/// `pairs` holds `(chunk index, truth index)`; indices are positions in the
/// respective cell lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CellMatching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_chunks: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl CellMatching {
    pub fn is_identity(&self, n: usize) -> bool {
        self.pairs.len() == n && self.pairs.iter().all(|&(a, b)| a == b)
    }

    pub fn transposed(&self) -> CellMatching {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(a, b)| (b, a)).collect();
        pairs.sort_unstable();
        CellMatching {
            pairs,
            unmatched_chunks: self.unmatched_truth.clone(),
            unmatched_truth: self.unmatched_chunks.clone(),
        }
    }
}

pub const MATCH_THRESHOLD: f64 = 0.3;

/// Text plus optional geometry, the unit compared by [`match_items`].
#[derive(Clone, Debug)]
pub struct MatchItem {
    pub text: String,
    pub bbox: Option<BBox>,
}

/// `2 * LCS / (|a| + |b|)` over characters; two empty strings are identical.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    2.0 * prev[b.len()] as f64 / (a.len() + b.len()) as f64
}

/// Pair score: half text similarity, half box IoU. Without geometry on either
/// side only the text is compared.
pub fn pair_score(a: &MatchItem, b: &MatchItem) -> f64 {
    let text = text_similarity(&a.text, &b.text);
    match (&a.bbox, &b.bbox) {
        (Some(x), Some(y)) => 0.5 * text + 0.5 * x.iou(y),
        _ => text,
    }
}

/// Maximum-score one-to-one matching; pairs scoring below
/// [`MATCH_THRESHOLD`] are left unmatched. Among equal-score optima the
/// assignment closest to the diagonal wins.
pub fn match_items(left: &[MatchItem], right: &[MatchItem]) -> CellMatching {
    let (n, m) = (left.len(), right.len());
    if n == 0 || m == 0 {
        return CellMatching {
            pairs: Vec::new(),
            unmatched_chunks: (0..n).collect(),
            unmatched_truth: (0..m).collect(),
        };
    }
    let scores: Vec<Vec<f64>> = left
        .iter()
        .map(|a| right.iter().map(|b| pair_score(a, b)).collect())
        .collect();
    let tie = 1e-9 / n.max(m) as f64;
    let cost = |i: usize, j: usize| {
        let s = scores[i][j];
        let gain = if s >= MATCH_THRESHOLD { s } else { 0.0 };
        -gain + tie * i.abs_diff(j) as f64
    };
    let mut pairs = Vec::new();
    if n <= m {
        let mat: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| cost(i, j)).collect()).collect();
        for (i, j) in min_cost_assignment(&mat).into_iter().enumerate() {
            pairs.push((i, j));
        }
    } else {
        let mat: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost(i, j)).collect()).collect();
        for (j, i) in min_cost_assignment(&mat).into_iter().enumerate() {
            pairs.push((i, j));
        }
    }
    pairs.retain(|&(i, j)| scores[i][j] >= MATCH_THRESHOLD);
    pairs.sort_unstable();
    let mut left_used = vec![false; n];
    let mut right_used = vec![false; m];
    for &(i, j) in &pairs {
        left_used[i] = true;
        right_used[j] = true;
    }
    CellMatching {
        pairs,
        unmatched_chunks: (0..n).filter(|&i| !left_used[i]).collect(),
        unmatched_truth: (0..m).filter(|&j| !right_used[j]).collect(),
    }
}

pub fn match_cells(chunks: &ChunkFile, truth: &TableStructure) -> CellMatching {
    let left: Vec<MatchItem> = chunks
        .cells
        .iter()
        .map(|c| MatchItem {
            text: normalize_content(&c.content),
            bbox: Some(c.bbox),
        })
        .collect();
    let right: Vec<MatchItem> = truth
        .cells()
        .iter()
        .map(|c| MatchItem {
            text: normalize_content(&c.content),
            bbox: c.bbox,
        })
        .collect();
    match_items(&left, &right)
}

/// A chunk file paired with its ground-truth structure on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TablePair {
    pub name: String,
    pub chunk_path: PathBuf,
    pub structure_path: PathBuf,
}

/// JSON files directly inside `dir`, keyed by file stem, sorted by name.
pub fn list_json(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs `<dir>/chunk/*.json` with `<dir>/structure/*.json` by file name.
/// Files without a partner are skipped and returned as orphans.
pub fn dataset_pairs(dir: &Path) -> Result<(Vec<TablePair>, Vec<String>)> {
    let chunks = list_json(&dir.join("chunk"))?;
    let structures: std::collections::BTreeMap<String, PathBuf> =
        list_json(&dir.join("structure"))?.into_iter().collect();
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (name, chunk_path) in chunks {
        seen.insert(name.clone());
        match structures.get(&name) {
            Some(sp) => pairs.push(TablePair {
                name,
                chunk_path,
                structure_path: sp.clone(),
            }),
            None => orphans.push(format!("chunk/{name}.json")),
        }
    }
    for name in structures.keys().filter(|n| !seen.contains(*n)) {
        orphans.push(format!("structure/{name}.json"));
    }
    Ok((pairs, orphans))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("mem.json")
    }

    #[test]
    fn single_chunk() {
        let c = parse_chunks(r#"{"chunks":[{"pos":[0,10,0,5],"text":"A"}]}"#, &p(), YAxis::Up).unwrap();
        assert_eq!(c.cells.len(), 1);
        assert_eq!(c.cells[0].bbox, BBox::new(0.0, 10.0, 0.0, 5.0).unwrap());
        assert_eq!(c.cells[0].content, "A");
    }

    #[test]
    fn flipped_y_axis() {
        let c = parse_chunks(r#"{"chunks":[{"pos":[0,10,2,5],"text":"A"}]}"#, &p(), YAxis::Down).unwrap();
        assert_eq!(c.cells[0].bbox, BBox::new(0.0, 10.0, -5.0, -2.0).unwrap());
    }

    #[test]
    fn chunk_errors() {
        let truncated = r#"{"chunks":[{"pos":[0,10,0,5],"te"#;
        match parse_chunks(truncated, &p(), YAxis::Up) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= truncated.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_chunks(r#"{"chunks":[{"text":"A"}]}"#, &p(), YAxis::Up) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("pos"), "{message}"),
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(matches!(parse_chunks(r#"{"chunks":[]}"#, &p(), YAxis::Up), Err(Error::EmptyTable)));
        assert!(matches!(
            parse_chunks(r#"{"chunks":[{"pos":[10,0,0,5],"text":"A"}]}"#, &p(), YAxis::Up),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn structure_parsing() {
        let s = parse_structure(
            r#"{"cells":[{"id":0,"content":"x","start_row":0,"end_row":0,"start_col":0,"end_col":0}]}"#,
            &p(),
        )
        .unwrap();
        assert_eq!((s.n_rows(), s.n_cols()), (1, 1));

        let s = parse_structure(
            r#"{"cells":[{"id":0,"tex":"a","content":["a","b"],"start_row":0,"end_row":0,"start_col":0,"end_col":1}]}"#,
            &p(),
        )
        .unwrap();
        assert!(s.cells()[0].is_spanning());
        assert_eq!(s.cells()[0].content, "a b");

        let neg = r#"{"cells":[{"id":0,"content":"x","start_row":-1,"end_row":0,"start_col":0,"end_col":0}]}"#;
        assert!(matches!(parse_structure(neg, &p()), Err(Error::Schema { .. })));
        let inv = r#"{"cells":[{"id":0,"content":"x","start_row":2,"end_row":0,"start_col":0,"end_col":0}]}"#;
        assert!(matches!(parse_structure(inv, &p()), Err(Error::Schema { .. })));
        let overlap = r#"{"cells":[
            {"id":0,"content":"x","start_row":0,"end_row":0,"start_col":0,"end_col":1},
            {"id":1,"content":"y","start_row":0,"end_row":0,"start_col":1,"end_col":1}]}"#;
        assert!(matches!(parse_structure(overlap, &p()), Err(Error::Overlap { .. })));
    }

    #[test]
    fn two_by_two_file_has_four_records() {
        let cells = (0..4)
            .map(|i| StructuredCell {
                id: i,
                content: format!("v{i}"),
                bbox: None,
                start_row: i / 2,
                end_row: i / 2,
                start_col: i % 2,
                end_col: i % 2,
            })
            .collect();
        let s = TableStructure::new(cells).unwrap();
        let json: serde_json::Value = serde_json::from_str(&structure_to_json(&s)).unwrap();
        let recs = json["cells"].as_array().unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3]["start_row"], 1);
        assert_eq!(recs[3]["end_col"], 1);
        assert!(recs[0].get("pos").is_none());
        assert_eq!(parse_structure(&structure_to_json(&s), &p()).unwrap(), s);
    }

    #[test]
    fn lcs_similarity() {
        assert_eq!(text_similarity("abc", "abc"), 1.0);
        assert_eq!(text_similarity("", ""), 1.0);
        assert_eq!(text_similarity("", "x"), 0.0);
        assert!((text_similarity("abcd", "abxd") - 0.75).abs() < 1e-15);
    }

    fn item(text: &str, x: f64) -> MatchItem {
        MatchItem {
            text: text.into(),
            bbox: Some(BBox::new(x, x + 10.0, 0.0, 5.0).unwrap()),
        }
    }

    #[test]
    fn identity_and_noise() {
        let truth: Vec<_> = (0..5).map(|i| item(&format!("c{i}"), 20.0 * i as f64)).collect();
        assert!(match_items(&truth, &truth).is_identity(5));

        let mut chunks = truth.clone();
        chunks.push(MatchItem {
            text: String::new(),
            bbox: Some(BBox::new(200.0, 203.0, 50.0, 52.0).unwrap()),
        });
        let m = match_items(&chunks, &truth);
        assert!(m.is_identity(5));
        assert_eq!(m.unmatched_chunks, vec![5]);
        assert!(m.unmatched_truth.is_empty());
    }

    #[test]
    fn empty_inputs_yield_empty_matching() {
        let m = match_items(&[], &[item("a", 0.0)]);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_truth, vec![0]);
    }
}
