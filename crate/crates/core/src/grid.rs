//! The lattice of 2×2 blocks, Chebyshev neighborhoods on it, and square
//! tamper regions.
//!
//! All counting here is done with clipped rectangles: a neighborhood is the
//! square window of side `r` around its center, cut off at the image border,
//! and a tamper region is an `l × l` square of blocks. Their intersection is
//! again a rectangle, so every cardinality the recovery-rate theory needs is
//! a product of two interval lengths.

use crate::error::{Error, Result};

/// Position of a block on the lattice, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockIndex {
    pub row: usize,
    pub col: usize,
}

impl BlockIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn chebyshev(self, other: BlockIndex) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

impl std::fmt::Display for BlockIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

/// The `cols × rows` block lattice of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockGrid {
    cols: usize,
    rows: usize,
}

impl BlockGrid {
    pub const fn new(cols: usize, rows: usize) -> Self {
        Self { cols, rows }
    }

    /// Square lattice with `n` blocks per side.
    pub const fn square(n: usize) -> Self {
        Self { cols: n, rows: n }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn total(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_square(&self) -> bool {
        self.cols == self.rows
    }

    pub fn contains(&self, b: BlockIndex) -> bool {
        b.row < self.rows && b.col < self.cols
    }

    pub fn linear(&self, b: BlockIndex) -> usize {
        debug_assert!(self.contains(b));
        b.row * self.cols + b.col
    }

    pub fn block(&self, linear: usize) -> BlockIndex {
        BlockIndex::new(linear / self.cols, linear % self.cols)
    }

    pub fn iter(&self) -> impl Iterator<Item = BlockIndex> {
        let cols = self.cols;
        (0..self.total()).map(move |i| BlockIndex::new(i / cols, i % cols))
    }

    pub fn bounds(&self) -> BlockRect {
        BlockRect {
            row0: 0,
            col0: 0,
            row1: self.rows,
            col1: self.cols,
        }
    }

    /// Linear indices of the (up to 8) blocks sharing an edge or corner with `i`.
    pub fn neighbors8(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let b = self.block(i);
        let rows = b.row.saturating_sub(1)..=(b.row + 1).min(self.rows - 1);
        rows.flat_map(move |r| {
            let cols = b.col.saturating_sub(1)..=(b.col + 1).min(self.cols - 1);
            cols.map(move |c| (r, c))
        })
        .filter(move |&(r, c)| (r, c) != (b.row, b.col))
        .map(move |(r, c)| r * self.cols + c)
    }
}

/// Half-open rectangle of blocks `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BlockRect {
    pub fn rows(&self) -> usize {
        self.row1.saturating_sub(self.row0)
    }

    pub fn cols(&self) -> usize {
        self.col1.saturating_sub(self.col0)
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn contains(&self, b: BlockIndex) -> bool {
        (self.row0..self.row1).contains(&b.row) && (self.col0..self.col1).contains(&b.col)
    }

    pub fn intersect(&self, other: &BlockRect) -> BlockRect {
        BlockRect {
            row0: self.row0.max(other.row0),
            col0: self.col0.max(other.col0),
            row1: self.row1.min(other.row1),
            col1: self.col1.min(other.col1),
        }
    }
}

/// Validates the neighborhood side `r` (odd, at least 3) and returns the
/// half-width `(r - 1) / 2`.
pub fn half_width(r: usize) -> Result<usize> {
    if r < 3 || r.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "neighborhood side r must be odd and at least 3, got {r}"
        )));
    }
    Ok((r - 1) / 2)
}

/// The `r × r` Chebyshev window around a block, clipped to the lattice.
/// The center itself is a member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood {
    center: BlockIndex,
    r: usize,
    half: usize,
}

impl Neighborhood {
    pub fn new(center: BlockIndex, r: usize) -> Result<Self> {
        Ok(Self {
            center,
            r,
            half: half_width(r)?,
        })
    }

    pub fn center(&self) -> BlockIndex {
        self.center
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn contains(&self, b: BlockIndex) -> bool {
        self.center.chebyshev(b) <= self.half
    }

    pub fn rect(&self, grid: BlockGrid) -> BlockRect {
        BlockRect {
            row0: self.center.row.saturating_sub(self.half),
            col0: self.center.col.saturating_sub(self.half),
            row1: self.center.row + self.half + 1,
            col1: self.center.col + self.half + 1,
        }
        .intersect(&grid.bounds())
    }

    pub fn size(&self, grid: BlockGrid) -> usize {
        self.rect(grid).area()
    }
}

/// `|R|` for the clipped window of side `r` around `center`.
pub fn neighborhood_size(center: BlockIndex, r: usize, grid: BlockGrid) -> Result<usize> {
    Ok(Neighborhood::new(center, r)?.size(grid))
}

/// An `side × side` square of blocks with top-left block `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TamperRegion {
    pub origin: BlockIndex,
    pub side: usize,
}

impl TamperRegion {
    pub fn new(origin: BlockIndex, side: usize) -> Self {
        Self { origin, side }
    }

    pub fn rect(&self) -> BlockRect {
        BlockRect {
            row0: self.origin.row,
            col0: self.origin.col,
            row1: self.origin.row + self.side,
            col1: self.origin.col + self.side,
        }
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn contains(&self, b: BlockIndex) -> bool {
        self.rect().contains(b)
    }

    pub fn fits(&self, grid: BlockGrid) -> bool {
        self.origin.row + self.side <= grid.rows() && self.origin.col + self.side <= grid.cols()
    }

    pub fn check_fits(&self, grid: BlockGrid) -> Result<()> {
        if !self.fits(grid) {
            return Err(Error::Parameter(format!(
                "tamper region at {} with side {} leaves the {}x{} block grid",
                self.origin,
                self.side,
                grid.cols(),
                grid.rows()
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockIndex> {
        let TamperRegion { origin, side } = *self;
        (0..side).flat_map(move |i| (0..side).map(move |j| BlockIndex::new(origin.row + i, origin.col + j)))
    }

    /// Linear indices of the region's blocks, ascending.
    pub fn linear_indices(&self, grid: BlockGrid) -> Vec<usize> {
        self.blocks().map(|b| grid.linear(b)).collect()
    }
}

impl std::str::FromStr for TamperRegion {
    type Err = Error;

    /// Parses `row,col,side`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[row, col, side]) => Ok(TamperRegion::new(BlockIndex::new(row, col), side)),
            _ => Err(Error::Parameter(format!("region must be row,col,side; got {s:?}"))),
        }
    }
}

/// `|L ∩ R|` for a tamper region and the clipped window around `center`.
pub fn region_neighborhood_intersection(
    region: &TamperRegion,
    center: BlockIndex,
    r: usize,
    grid: BlockGrid,
) -> Result<usize> {
    let window = Neighborhood::new(center, r)?.rect(grid);
    Ok(window.intersect(&region.rect()).area())
}
