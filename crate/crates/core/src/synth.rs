//! Seeded synthetic tables: chunk files paired with their true structure.
//!
//! Table `i` of a batch is drawn from its own generator seeded with
//! `seed + i`, so batches can be generated in parallel and any single table
//! can be regenerated from the manifest.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{chunks_to_json, structure_to_json, write_atomic, ChunkFile};
use crate::types::{BBox, StructuredCell, TableStructure};

/// Inclusive range of values to draw from uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Range { min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub complicated_prob: f64,
    /// Spanning cells per complicated table.
    pub spans: Range<usize>,
    /// Largest number of grid slots one spanning cell may cover.
    pub max_span_slots: usize,
    /// Chance that a non-spanning slot is left empty.
    pub blank_prob: f64,
    pub col_width: Range<f64>,
    pub row_height: Range<f64>,
    /// Gap between a slot's border and the cell box, in points.
    pub padding: f64,
    /// Independent uniform shift of each box edge, in points (below `padding`).
    pub box_jitter: f64,
    /// Draw contents from a small shared vocabulary instead of unique tokens.
    pub duplicate_content: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            rows: Range::new(3, 15),
            cols: Range::new(2, 8),
            complicated_prob: 0.24,
            spans: Range::new(1, 3),
            max_span_slots: 4,
            blank_prob: 0.02,
            col_width: Range::new(30.0, 80.0),
            row_height: Range::new(10.0, 16.0),
            padding: 2.0,
            box_jitter: 0.5,
            duplicate_content: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rows.min == 0 || self.rows.min > self.rows.max || self.cols.min == 0 || self.cols.min > self.cols.max {
            return bad("row and column ranges must be non-empty and positive");
        }
        if self.rows.min * self.cols.min < 2 {
            return bad("tables need room for at least two cells");
        }
        if self.spans.min == 0 || self.spans.min > self.spans.max || self.max_span_slots < 2 {
            return bad("span count range must be non-empty and positive; max_span_slots at least 2");
        }
        if !(0.0..=1.0).contains(&self.complicated_prob) || !(0.0..1.0).contains(&self.blank_prob) {
            return bad("complicated_prob must lie in [0, 1] and blank_prob in [0, 1)");
        }
        if !(self.col_width.min > 0.0 && self.col_width.min <= self.col_width.max)
            || !(self.row_height.min > 0.0 && self.row_height.min <= self.row_height.max)
        {
            return bad("column width and row height ranges must be positive and non-empty");
        }
        if !(self.padding >= 0.0 && self.box_jitter >= 0.0) {
            return bad("padding and jitter must be non-negative");
        }
        if self.box_jitter > 0.0 && self.box_jitter >= self.padding {
            return bad("box_jitter must stay below padding so boxes never touch");
        }
        if 2.0 * (self.padding + self.box_jitter) >= self.col_width.min.min(self.row_height.min) {
            return bad("padding leaves no room for the cell box");
        }
        Ok(())
    }
}

/// One generated table.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTable {
    pub seed: u64,
    pub chunks: ChunkFile,
    pub structure: TableStructure,
}

/// Cell blocks of a table being laid out; uncovered slots stay blank.
struct Layout {
    rows: usize,
    cols: usize,
    /// `(start_row, end_row, start_col, end_col)` per cell, in placement order.
    blocks: Vec<(usize, usize, usize, usize)>,
}

impl Layout {
    /// Every row and every column holds at least one single-slot cell.
    fn well_posed(&self) -> bool {
        let mut row_ok = vec![false; self.rows];
        let mut col_ok = vec![false; self.cols];
        for &(r0, r1, c0, c1) in &self.blocks {
            if r0 == r1 && c0 == c1 {
                row_ok[r0] = true;
                col_ok[c0] = true;
            }
        }
        row_ok.into_iter().chain(col_ok).all(|b| b)
    }
}

fn span_shapes(rows: usize, cols: usize, max_slots: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for h in 1..=rows {
        for w in 1..=cols {
            if h * w >= 2 && h * w <= max_slots {
                out.push((h, w));
            }
        }
    }
    out
}

fn draw_layout(rng: &mut ChaCha8Rng, cfg: &GenConfig, rows: usize, cols: usize, complicated: bool) -> Layout {
    let shapes = span_shapes(rows, cols, cfg.max_span_slots);
    let mut taken = vec![vec![false; cols]; rows];
    let mut blocks = Vec::new();
    if complicated && !shapes.is_empty() {
        let want = rng.random_range(cfg.spans.min..=cfg.spans.max);
        let mut tries = 0;
        while blocks.len() < want && tries < 50 {
            tries += 1;
            let (h, w) = shapes[rng.random_range(0..shapes.len())];
            let r0 = rng.random_range(0..=rows - h);
            let c0 = rng.random_range(0..=cols - w);
            if (r0..r0 + h).all(|r| (c0..c0 + w).all(|c| !taken[r][c])) {
                for row in taken.iter_mut().skip(r0).take(h) {
                    row[c0..c0 + w].fill(true);
                }
                blocks.push((r0, r0 + h - 1, c0, c0 + w - 1));
            }
        }
    }
    for (r, row) in taken.iter().enumerate() {
        for (c, &t) in row.iter().enumerate() {
            if !t && !(cfg.blank_prob > 0.0 && rng.random::<f64>() < cfg.blank_prob) {
                blocks.push((r, r, c, c));
            }
        }
    }
    Layout { rows, cols, blocks }
}

/// Fallback used when random layouts keep failing: a single vertical pair
/// in the first column (if complicated) and no blanks.
fn plain_layout(rows: usize, cols: usize, complicated: bool) -> Layout {
    let mut blocks = Vec::new();
    let pair = complicated && rows >= 3 && cols >= 2;
    if pair {
        blocks.push((0, 1, 0, 0));
    }
    for r in 0..rows {
        for c in 0..cols {
            if !(pair && c == 0 && r <= 1) {
                blocks.push((r, r, c, c));
            }
        }
    }
    Layout { rows, cols, blocks }
}

const VOCAB: [&str; 8] = ["0", "1", "-", "n/a", "yes", "no", "total", "x"];

/// Generates one table from its own seed.
pub fn generate_one(cfg: &GenConfig, table_seed: u64) -> SynthTable {
    let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
    let rows = rng.random_range(cfg.rows.min..=cfg.rows.max);
    let cols = rng.random_range(cfg.cols.min..=cfg.cols.max);
    let complicated = rng.random::<f64>() < cfg.complicated_prob;
    let has_span = |l: &Layout| l.blocks.iter().any(|&(r0, r1, c0, c1)| r0 != r1 || c0 != c1);
    let layout = (0..200)
        .map(|_| draw_layout(&mut rng, cfg, rows, cols, complicated))
        .find(|l| l.well_posed() && has_span(l) == complicated)
        .unwrap_or_else(|| plain_layout(rows, cols, complicated));

    let widths: Vec<f64> = (0..cols)
        .map(|_| rng.random_range(cfg.col_width.min..=cfg.col_width.max))
        .collect();
    let heights: Vec<f64> = (0..rows)
        .map(|_| rng.random_range(cfg.row_height.min..=cfg.row_height.max))
        .collect();
    let ox = rng.random_range(20.0..300.0);
    let oy = rng.random_range(300.0..750.0);
    let mut xs = vec![ox];
    for w in &widths {
        xs.push(xs.last().unwrap() + w);
    }
    // Row tops, descending: y grows upward.
    let mut ys = vec![oy];
    for h in &heights {
        ys.push(ys.last().unwrap() - h);
    }

    let mut blocks = layout.blocks;
    blocks.sort_by_key(|&(r0, _, c0, _)| (r0, c0));
    let j = cfg.box_jitter;
    let jitter = |rng: &mut ChaCha8Rng| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let mut parts = Vec::with_capacity(blocks.len());
    let mut cells = Vec::with_capacity(blocks.len());
    for (id, &(r0, r1, c0, c1)) in blocks.iter().enumerate() {
        let p = cfg.padding;
        let bbox = BBox {
            x1: xs[c0] + p + jitter(&mut rng),
            x2: xs[c1 + 1] - p + jitter(&mut rng),
            y1: ys[r1 + 1] + p + jitter(&mut rng),
            y2: ys[r0] - p + jitter(&mut rng),
        };
        let content = if cfg.duplicate_content {
            VOCAB[rng.random_range(0..VOCAB.len())].to_string()
        } else {
            format!("c{id}")
        };
        parts.push((content.clone(), bbox));
        cells.push(StructuredCell {
            id,
            content,
            bbox: Some(bbox),
            start_row: r0,
            end_row: r1,
            start_col: c0,
            end_col: c1,
        });
    }
    let structure =
        TableStructure::with_dims(cells, rows, cols).expect("generated layouts never overlap");
    SynthTable {
        seed: table_seed,
        chunks: ChunkFile::from_parts(parts),
        structure,
    }
}

/// `n` tables; table `i` uses seed `cfg.seed + i`.
pub fn generate(cfg: &GenConfig, n: usize) -> Result<Vec<SynthTable>> {
    cfg.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| generate_one(cfg, cfg.seed.wrapping_add(i)))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub chunks: ChunkFile,
    /// Set when the noise bound reaches half the smallest gap between boxes,
    /// so neighbouring boxes may swap order or touch.
    pub ambiguous: bool,
}

/// Smallest positive gap between two boxes that face each other along an axis.
pub fn min_gap(chunks: &ChunkFile) -> Option<f64> {
    let mut best: Option<f64> = None;
    let cells = &chunks.cells;
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            let (a, b) = (&a.bbox, &b.bbox);
            let y_overlap = a.y1.max(b.y1) < a.y2.min(b.y2);
            let x_overlap = a.x1.max(b.x1) < a.x2.min(b.x2);
            let gap = if y_overlap {
                (b.x1 - a.x2).max(a.x1 - b.x2)
            } else if x_overlap {
                (b.y1 - a.y2).max(a.y1 - b.y2)
            } else {
                continue;
            };
            if gap > 0.0 {
                best = Some(best.map_or(gap, |g| g.min(gap)));
            }
        }
    }
    best
}

/// Shifts every box edge by independent uniform noise in `[-noise, noise]`.
/// Edges that would cross are clamped so each box stays valid.
pub fn perturb(chunks: &ChunkFile, noise: f64, seed: u64) -> Perturbed {
    let ambiguous = noise > 0.0 && min_gap(chunks).is_some_and(|g| noise >= 0.5 * g);
    if noise <= 0.0 {
        return Perturbed {
            chunks: chunks.clone(),
            ambiguous,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = chunks.clone();
    for c in &mut out.cells {
        let b = c.bbox;
        let mut d = || rng.random_range(-noise..=noise);
        let (x1, x2, y1, y2) = (b.x1 + d(), b.x2 + d(), b.y1 + d(), b.y2 + d());
        let (xm, ym) = (0.5 * (x1 + x2), 0.5 * (y1 + y2));
        c.bbox = BBox {
            x1: x1.min(xm),
            x2: x2.max(xm),
            y1: y1.min(ym),
            y2: y2.max(ym),
        };
    }
    Perturbed { chunks: out, ambiguous }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub chunk: PathBuf,
    pub structure: PathBuf,
    pub seed: u64,
    pub complicated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub tables: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn table_name(index: usize) -> String {
    format!("table_{index:05}")
}

/// Writes `out/chunk/<name>.json`, `out/structure/<name>.json` and
/// `out/manifest.json`. Paths in the manifest are relative to `out`.
pub fn write_dataset(out: &Path, cfg: &GenConfig, n: usize) -> Result<Manifest> {
    let tables = generate(cfg, n)?;
    let entries: Vec<ManifestEntry> = tables
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let name = table_name(i);
            let chunk = PathBuf::from("chunk").join(format!("{name}.json"));
            let structure = PathBuf::from("structure").join(format!("{name}.json"));
            write_atomic(&out.join(&chunk), chunks_to_json(&t.chunks).as_bytes())?;
            write_atomic(&out.join(&structure), structure_to_json(&t.structure).as_bytes())?;
            Ok(ManifestEntry {
                name,
                chunk,
                structure,
                seed: t.seed,
                complicated: t.structure.is_complicated(),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        tables: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}
