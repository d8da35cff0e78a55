//! Toroidal `b x b` sub-blocks of a `P x Q` coefficient grid.
//!
//! Positions are 1-based and refer to the column-major vectorization of the
//! grid, so the entry at row `p`, column `q` sits at `p + (q - 1) P`. Blocks
//! wrap around both the bottom and the right edge of the grid.

use crate::error::{invalid, Result};

/// Top-left corner of a block, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockAnchor {
    pub p: usize,
    pub q: usize,
}

/// Vectorized positions covered by one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIndexSet {
    anchor: BlockAnchor,
    segment: usize,
    indices: Vec<usize>,
}

impl BlockIndexSet {
    pub fn anchor(&self) -> BlockAnchor {
        self.anchor
    }

    /// Segment of a stacked vector this block belongs to (0 when unstacked).
    pub fn segment(&self) -> usize {
        self.segment
    }

    /// Sorted, distinct, 1-based positions.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// The same positions as 0-based column indices.
    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|i| i - 1)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn shifted(mut self, offset: usize, segment: usize) -> Self {
        for i in &mut self.indices {
            *i += offset;
        }
        self.segment = segment;
        self
    }
}

/// Grid dimensions and block size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
}

impl BlockGrid {
    pub fn new(rows: usize, cols: usize, block: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("empty grid {rows}x{cols}")));
        }
        Ok(Self { rows, cols, block })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Indices of the `b x b` block anchored at `(p, q)` on a `P x Q` torus.
///
/// For `k1, k2` in `0..b` the position is `r = p + k1 + (k2 + q - 1) P`,
/// pulled back by `P` when it runs past the bottom of its column, then
/// reduced modulo `P Q` (a zero remainder stands for `P Q`).
pub fn block_index_set(p: usize, q: usize, b: usize, rows: usize, cols: usize) -> Result<BlockIndexSet> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("empty grid {rows}x{cols}")));
    }
    if !(1..=rows).contains(&p) || !(1..=cols).contains(&q) {
        return Err(invalid(format!("anchor ({p}, {q}) outside the {rows}x{cols} grid")));
    }
    if b < 1 || b > rows.min(cols) {
        return Err(invalid(format!("block size {b} must lie in 1..={}", rows.min(cols))));
    }
    let total = rows * cols;
    let mut indices = Vec::with_capacity(b * b);
    for k2 in 0..b {
        for k1 in 0..b {
            let mut r = p + k1 + (k2 + q - 1) * rows;
            if r > (q + k2) * rows {
                r -= rows;
            }
            r %= total;
            if r == 0 {
                r = total;
            }
            indices.push(r);
        }
    }
    indices.sort_unstable();
    Ok(BlockIndexSet {
        anchor: BlockAnchor { p, q },
        segment: 0,
        indices,
    })
}

/// 1-D block of `b` consecutive entries starting at `p`, wrapping modulo `P`.
pub fn block_index_set_1d(p: usize, b: usize, len: usize) -> Result<BlockIndexSet> {
    if len == 0 {
        return Err(invalid("empty 1-D grid"));
    }
    if !(1..=len).contains(&p) {
        return Err(invalid(format!("anchor {p} outside 1..={len}")));
    }
    if b < 1 || b > len {
        return Err(invalid(format!("block size {b} must lie in 1..={len}")));
    }
    let mut indices: Vec<usize> = (0..b)
        .map(|k| {
            let r = p + k;
            if r > len {
                r - len
            } else {
                r
            }
        })
        .collect();
    indices.sort_unstable();
    Ok(BlockIndexSet {
        anchor: BlockAnchor { p, q: 1 },
        segment: 0,
        indices,
    })
}

/// Candidate blocks handed to the solver.
///
/// Blocks are kept in lexicographic `(segment, p, q)` order, which is also the
/// solver's tie-break order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCollection {
    grid: BlockGrid,
    blocks: Vec<BlockIndexSet>,
}

impl BlockCollection {
    pub fn grid(&self) -> BlockGrid {
        self.grid
    }

    pub fn blocks(&self) -> &[BlockIndexSet] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Largest 1-based index referenced by any block.
    pub fn max_index(&self) -> usize {
        self.blocks
            .iter()
            .filter_map(|b| b.indices.last().copied())
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the anchors accepted by `keep`, e.g. to restrict candidates
    /// to a known range of spatial frequencies.
    pub fn with_anchor_filter(mut self, keep: impl Fn(BlockAnchor) -> bool) -> Self {
        self.blocks.retain(|b| keep(b.anchor));
        self
    }

    /// `n_segments` copies of this collection for a stacked vector, copy `s`
    /// shifted by `s P Q`.
    pub fn stacked(&self, n_segments: usize) -> Self {
        let stride = self.grid.len();
        let blocks = (0..n_segments)
            .flat_map(|s| self.blocks.iter().cloned().map(move |b| b.shifted(s * stride, s)))
            .collect();
        Self {
            grid: self.grid,
            blocks,
        }
    }

    /// Singleton blocks `{1}, {2}, ..., {n}`, i.e. plain OMP atoms.
    pub fn singletons(n: usize) -> Result<Self> {
        valid_blocks_1d(n, 1, 0)
    }
}

/// Every anchor of the `P x Q` torus, indices shifted by `segment_offset`.
pub fn valid_blocks(rows: usize, cols: usize, b: usize, segment_offset: usize) -> Result<BlockCollection> {
    let grid = BlockGrid::new(rows, cols, b)?;
    let mut blocks = Vec::with_capacity(rows * cols);
    for p in 1..=rows {
        for q in 1..=cols {
            blocks.push(block_index_set(p, q, b, rows, cols)?.shifted(segment_offset, 0));
        }
    }
    Ok(BlockCollection { grid, blocks })
}

/// Every anchor of a length-`P` ring with 1-D blocks of size `b`.
pub fn valid_blocks_1d(len: usize, b: usize, segment_offset: usize) -> Result<BlockCollection> {
    let grid = BlockGrid::new(len, 1, b)?;
    let blocks = (1..=len)
        .map(|p| block_index_set_1d(p, b, len).map(|s| s.shifted(segment_offset, 0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockCollection { grid, blocks })
}
