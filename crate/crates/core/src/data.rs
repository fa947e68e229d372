//! Binary relational matrices: loading, synthetic generation and
//! cross-validation splits.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::distributions::RngHandle;
use crate::error::{Error, Result};

/// An `I x J` binary matrix stored as the sorted set of its one-entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseBinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    ones: Vec<(usize, usize)>,
}

impl SparseBinaryMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        ones: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Config(format!(
                "matrix dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        let set: BTreeSet<(usize, usize)> = ones.into_iter().collect();
        if let Some(&(row, col)) = set.iter().find(|&&(i, j)| i >= n_rows || j >= n_cols) {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                n_rows,
                n_cols,
            });
        }
        Ok(SparseBinaryMatrix {
            n_rows,
            n_cols,
            ones: set.into_iter().collect(),
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, std::iter::empty())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// One-entries in row-major order.
    pub fn ones(&self) -> &[(usize, usize)] {
        &self.ones
    }

    pub fn n_ones(&self) -> usize {
        self.ones.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn density(&self) -> f64 {
        self.ones.len() as f64 / self.n_cells() as f64
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.ones.binary_search(&(row, col)).is_ok()
    }
}

/// Side information gathered while reading an edge list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Pairs listed more than once; each is kept once.
    pub duplicates: usize,
}

pub fn load_edge_list(source: impl BufRead) -> Result<SparseBinaryMatrix> {
    load_edge_list_with_report(source).map(|(m, _)| m)
}

/// Reads `row col` lines (zero-based, whitespace separated). An optional
/// `# I J` header on the first non-blank line fixes the dimensions; without
/// it they are inferred from the largest indices. Other `#` lines are comments.
pub fn load_edge_list_with_report(
    source: impl BufRead,
) -> Result<(SparseBinaryMatrix, LoadReport)> {
    let mut header: Option<(usize, usize)> = None;
    let mut seen_content = false;
    let mut pairs = BTreeSet::new();
    let mut report = LoadReport::default();

    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if !seen_content {
                let dims: Vec<&str> = rest.split_whitespace().collect();
                if let [r, c] = dims.as_slice() {
                    if let (Ok(r), Ok(c)) = (r.parse(), c.parse()) {
                        header = Some((r, c));
                    }
                }
            }
            seen_content = true;
            continue;
        }
        seen_content = true;
        let (row, col) = parse_pair(trimmed, line_no)?;
        if let Some((n_rows, n_cols)) = header {
            if row >= n_rows || col >= n_cols {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("index ({row}, {col}) outside the {n_rows}x{n_cols} header"),
                });
            }
        }
        if !pairs.insert((row, col)) {
            report.duplicates += 1;
        }
    }

    let (n_rows, n_cols) = match header {
        Some(dims) => dims,
        None => pairs
            .iter()
            .fold((0, 0), |(r, c), &(i, j)| (r.max(i + 1), c.max(j + 1))),
    };
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "empty edge list without a `# I J` header".into(),
        });
    }
    Ok((SparseBinaryMatrix::new(n_rows, n_cols, pairs)?, report))
}

fn parse_pair(line: &str, line_no: usize) -> Result<(usize, usize)> {
    let mut fields = line.split_whitespace();
    let parse = |field: Option<&str>| -> Result<usize> {
        field
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `row col`, got {line:?}"),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("{e} in {line:?}"),
            })
    };
    let row = parse(fields.next())?;
    let col = parse(fields.next())?;
    if fields.next().is_some() {
        return Err(Error::Parse {
            line: line_no,
            message: format!("trailing fields in {line:?}"),
        });
    }
    Ok((row, col))
}

/// Writes the canonical edge-list form: a `# I J` header then sorted pairs.
pub fn save_edge_list(matrix: &SparseBinaryMatrix, mut sink: impl Write) -> Result<()> {
    writeln!(sink, "# {} {}", matrix.n_rows, matrix.n_cols)?;
    for &(i, j) in &matrix.ones {
        writeln!(sink, "{i} {j}")?;
    }
    Ok(())
}

pub const DEFAULT_RATING_THRESHOLD: f64 = 3.0;

/// Reads `user item rating` lines; a cell is one when its rating is strictly
/// greater than `threshold`.
pub fn load_ratings(source: impl BufRead, threshold: f64) -> Result<SparseBinaryMatrix> {
    let mut n_rows = 0;
    let mut n_cols = 0;
    let mut ones = BTreeSet::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let [user, item, rating] = fields.as_slice() else {
            return Err(bad(format!("expected `user item rating`, got {trimmed:?}")));
        };
        let user: usize = user.parse().map_err(|e| bad(format!("user: {e}")))?;
        let item: usize = item.parse().map_err(|e| bad(format!("item: {e}")))?;
        let rating: f64 = rating.parse().map_err(|e| bad(format!("rating: {e}")))?;
        n_rows = n_rows.max(user + 1);
        n_cols = n_cols.max(item + 1);
        if rating > threshold {
            ones.insert((user, item));
        }
    }
    if n_rows == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no ratings found".into(),
        });
    }
    SparseBinaryMatrix::new(n_rows, n_cols, ones)
}

/// A rectangular latent class, half-open in both directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Block {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows.contains(&row) && self.cols.contains(&col)
    }
}

/// Overlapping block structure for synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub blocks: Vec<Block>,
    /// Probability that a cell inside a block is one.
    pub block_on_prob: f64,
    /// Probability that a cell outside every block is one.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 90x90 matrix with five overlapping blocks and no noise.
    pub fn five_blocks(seed: u64) -> Self {
        let block = |r: Range<usize>, c: Range<usize>| Block { rows: r, cols: c };
        SyntheticSpec {
            n_rows: 90,
            n_cols: 90,
            blocks: vec![
                block(0..30, 0..30),
                block(20..50, 15..45),
                block(40..70, 40..75),
                block(60..90, 55..90),
                block(10..40, 60..85),
            ],
            block_on_prob: 1.0,
            noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config(
                "synthetic matrix needs positive dimensions".into(),
            ));
        }
        for b in &self.blocks {
            if b.rows.start >= b.rows.end
                || b.cols.start >= b.cols.end
                || b.rows.end > self.n_rows
                || b.cols.end > self.n_cols
            {
                return Err(Error::Config(format!(
                    "block {}-{}:{}-{} does not fit a {}x{} matrix",
                    b.rows.start, b.rows.end, b.cols.start, b.cols.end, self.n_rows, self.n_cols
                )));
            }
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise must lie in [0, 1), got {}",
                self.noise
            )));
        }
        if !(0.0..=1.0).contains(&self.block_on_prob) {
            return Err(Error::Config(format!(
                "block on-probability must lie in [0, 1], got {}",
                self.block_on_prob
            )));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        make_synthetic_blocks(self, &mut RngHandle::new(self.seed))
    }
}

/// `IxJ;r0-r1:c0-c1;...;noise=p;on=p;seed=s`, or `five-blocks` for
/// [`SyntheticSpec::five_blocks`] (which also accepts `;seed=s`).
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("synthetic spec {s:?}: {msg}"));
        let mut parts = s.split(';').map(str::trim).filter(|p| !p.is_empty());
        let head = parts.next().ok_or_else(|| bad("empty".into()))?;
        let mut spec = if head == "five-blocks" {
            SyntheticSpec::five_blocks(0)
        } else {
            let (r, c) = head
                .split_once('x')
                .ok_or_else(|| bad("expected `IxJ` dimensions first".into()))?;
            SyntheticSpec {
                n_rows: r.trim().parse().map_err(|e| bad(format!("rows: {e}")))?,
                n_cols: c.trim().parse().map_err(|e| bad(format!("cols: {e}")))?,
                blocks: Vec::new(),
                block_on_prob: 1.0,
                noise: 0.0,
                seed: 0,
            }
        };
        let range = |text: &str| -> Result<Range<usize>> {
            let (a, b) = text
                .split_once('-')
                .ok_or_else(|| bad(format!("expected `start-end`, got {text:?}")))?;
            Ok(a.trim().parse().map_err(|e| bad(format!("{e}")))?
                ..b.trim().parse().map_err(|e| bad(format!("{e}")))?)
        };
        for part in parts {
            if let Some((key, value)) = part.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "noise" => {
                        spec.noise = value.parse().map_err(|e| bad(format!("noise: {e}")))?
                    }
                    "on" => {
                        spec.block_on_prob = value.parse().map_err(|e| bad(format!("on: {e}")))?
                    }
                    "seed" => spec.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            } else {
                let (rows, cols) = part
                    .split_once(':')
                    .ok_or_else(|| bad(format!("expected `r0-r1:c0-c1`, got {part:?}")))?;
                spec.blocks.push(Block {
                    rows: range(rows)?,
                    cols: range(cols)?,
                });
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_rows, self.n_cols)?;
        for b in &self.blocks {
            write!(
                f,
                ";{}-{}:{}-{}",
                b.rows.start, b.rows.end, b.cols.start, b.cols.end
            )?;
        }
        write!(
            f,
            ";noise={};on={};seed={}",
            self.noise, self.block_on_prob, self.seed
        )
    }
}

/// A generated matrix together with its ground-truth classes.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub matrix: SparseBinaryMatrix,
    pub blocks: Vec<Block>,
}

impl SyntheticData {
    pub fn n_classes(&self) -> usize {
        self.blocks.len()
    }

    /// Ground-truth metadata as `key=value` lines.
    pub fn write_metadata(&self, mut sink: impl Write) -> Result<()> {
        writeln!(sink, "rows={}", self.matrix.n_rows())?;
        writeln!(sink, "cols={}", self.matrix.n_cols())?;
        writeln!(sink, "ones={}", self.matrix.n_ones())?;
        writeln!(sink, "density={}", self.matrix.density())?;
        writeln!(sink, "n_classes={}", self.n_classes())?;
        for (k, b) in self.blocks.iter().enumerate() {
            writeln!(
                sink,
                "class{k}={}-{}:{}-{}",
                b.rows.start, b.rows.end, b.cols.start, b.cols.end
            )?;
        }
        Ok(())
    }
}

/// Cells covered by a block are one with the block's on-probability
/// (noisy-OR across overlapping blocks); other cells are one with the
/// background noise probability.
pub fn make_synthetic_blocks(spec: &SyntheticSpec, rng: &mut RngHandle) -> Result<SyntheticData> {
    spec.validate()?;
    let mut ones = Vec::new();
    for i in 0..spec.n_rows {
        for j in 0..spec.n_cols {
            let covering = spec.blocks.iter().filter(|b| b.contains(i, j)).count();
            let on = if covering > 0 {
                let p_off = (1.0 - spec.block_on_prob).powi(covering as i32);
                p_off == 0.0 || rng.uniform() >= p_off
            } else {
                spec.noise > 0.0 && rng.uniform() < spec.noise
            };
            if on {
                ones.push((i, j));
            }
        }
    }
    Ok(SyntheticData {
        matrix: SparseBinaryMatrix::new(spec.n_rows, spec.n_cols, ones)?,
        blocks: spec.blocks.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TestEntry {
    pub row: usize,
    pub col: usize,
    pub value: bool,
}

/// A training view with held-out cells forced to zero, plus the held-out
/// cells and their true values.
#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    pub train_view: SparseBinaryMatrix,
    pub test_entries: Vec<TestEntry>,
}

impl HoldoutSplit {
    pub fn from_cells(source: &SparseBinaryMatrix, mut cells: Vec<(usize, usize)>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        let test_entries: Vec<TestEntry> = cells
            .iter()
            .map(|&(row, col)| TestEntry {
                row,
                col,
                value: source.get(row, col),
            })
            .collect();
        let train_view = SparseBinaryMatrix {
            n_rows: source.n_rows,
            n_cols: source.n_cols,
            ones: source
                .ones
                .iter()
                .copied()
                .filter(|cell| cells.binary_search(cell).is_err())
                .collect(),
        };
        Ok(HoldoutSplit {
            train_view,
            test_entries,
        })
    }

    pub fn test_cells(&self) -> Vec<(usize, usize)> {
        self.test_entries.iter().map(|e| (e.row, e.col)).collect()
    }

    pub fn test_labels(&self) -> Vec<bool> {
        self.test_entries.iter().map(|e| e.value).collect()
    }
}

/// Partitions every cell of the matrix, zeros and ones alike, into
/// `n_folds` test sets of near-equal size.
pub fn make_cv_folds(
    matrix: &SparseBinaryMatrix,
    n_folds: usize,
    rng: &mut RngHandle,
) -> Result<Vec<HoldoutSplit>> {
    if n_folds < 2 {
        return Err(Error::Config(format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    if matrix.n_cells() < n_folds {
        return Err(Error::Config(format!(
            "{} cells cannot fill {n_folds} folds",
            matrix.n_cells()
        )));
    }
    let mut order: Vec<usize> = (0..matrix.n_cells()).collect();
    order.shuffle(rng);
    let mut folds = vec![Vec::new(); n_folds];
    for (pos, cell) in order.into_iter().enumerate() {
        folds[pos % n_folds].push((cell / matrix.n_cols, cell % matrix.n_cols));
    }
    folds
        .into_iter()
        .map(|cells| HoldoutSplit::from_cells(matrix, cells))
        .collect()
}
