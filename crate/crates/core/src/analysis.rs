//! Recovery-rate theory for de-neighborhood mappings.
//!
//! A tampered block `B` can be restored exactly when its mapping block lies
//! outside the tampered area `L`. With the mapping block drawn uniformly from
//! the blocks outside the clipped window `R_B` of side `r`,
//!
//! ```text
//! H(B) = 1 - (|L| - |L ∩ R_B|) / (N - |R_B|)
//! ```
//!
//! where `N` is the number of blocks, and the area rate `H̄` is the mean of
//! `H(B)` over `B ∈ L`. Both cardinalities are rectangle areas, so this module
//! evaluates the rate exactly for any placement, border clipping included.
//! The piecewise closed forms for a square area away from the border are
//! provided separately as a cross-check.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{half_width, BlockGrid, BlockIndex, Neighborhood, TamperRegion};
use crate::mapping::deneighborhood_feasible;

/// Geometry of one theoretical evaluation: the grid, the neighborhood side
/// `r`, and the `l × l` tampered square with its top-left block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TheoryParams {
    pub grid: BlockGrid,
    pub r: usize,
    pub l: usize,
    pub origin: BlockIndex,
}

impl TheoryParams {
    /// Square grid with `n` blocks per side.
    pub fn square(n: usize, r: usize, l: usize, origin: BlockIndex) -> Self {
        Self {
            grid: BlockGrid::square(n),
            r,
            l,
            origin,
        }
    }

    pub fn region(&self) -> TamperRegion {
        TamperRegion::new(self.origin, self.l)
    }

    fn validate(&self) -> Result<usize> {
        let half = half_width(self.r)?;
        self.region().check_fits(self.grid)?;
        if self.r * self.r >= self.grid.total() {
            return Err(Error::Parameter(format!(
                "r = {} leaves no block outside the neighborhood on a {}-block grid",
                self.r,
                self.grid.total()
            )));
        }
        Ok(half)
    }
}

/// Per-block rates over the tampered square (row-major, `l × l`) and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProfile {
    pub side: usize,
    pub rates: Vec<f64>,
    pub average: f64,
}

impl RecoveryProfile {
    /// Rate of the block at 0-based offset `(i, j)` inside the square.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.side + j]
    }

    pub fn min(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn rate_from_counts(tampered: usize, overlap: usize, total: usize, window: usize) -> f64 {
    1.0 - (tampered - overlap) as f64 / (total - window) as f64
}

/// `H(B)` for a block of the tampered square, by exact counting.
pub fn block_recovery_rate_exact(params: &TheoryParams, block: BlockIndex) -> Result<f64> {
    params.validate()?;
    let region = params.region();
    if !region.contains(block) {
        return Err(Error::Domain(format!(
            "block {block} is outside the tampered square at {} with side {}",
            params.origin, params.l
        )));
    }
    let window = Neighborhood::new(block, params.r)?.rect(params.grid);
    let overlap = window.intersect(&region.rect()).area();
    Ok(rate_from_counts(region.len(), overlap, params.grid.total(), window.area()))
}

/// `H̄` with the full per-block profile.
pub fn average_recovery_rate(params: &TheoryParams) -> Result<RecoveryProfile> {
    let half = params.validate()?;
    if params.l == 0 {
        return Err(Error::Domain("tampered side l must be at least 1".into()));
    }
    let grid = params.grid;
    let region = params.region().rect();
    // Window and overlap are products of a row extent and a column extent.
    let extent = |x: usize, limit: usize, lo: usize, hi: usize| {
        let a = x.saturating_sub(half);
        let b = (x + half + 1).min(limit);
        let window = b - a;
        let overlap = b.min(hi).saturating_sub(a.max(lo));
        (window, overlap)
    };
    let row_ext: Vec<_> = (region.row0..region.row1)
        .map(|x| extent(x, grid.rows(), region.row0, region.row1))
        .collect();
    let col_ext: Vec<_> = (region.col0..region.col1)
        .map(|x| extent(x, grid.cols(), region.col0, region.col1))
        .collect();
    let tampered = params.l * params.l;
    let mut rates = Vec::with_capacity(tampered);
    for &(rw, ro) in &row_ext {
        for &(cw, co) in &col_ext {
            rates.push(rate_from_counts(tampered, ro * co, grid.total(), rw * cw));
        }
    }
    let average = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(RecoveryProfile {
        side: params.l,
        rates,
        average,
    })
}

/// Side lengths `(u, d)` of `L ∩ R` for the block at 1-based position
/// `(i, j)` of an `l × l` square that sits away from the image border.
///
/// Three regimes: `l ≤ (r-1)/2` (square inside every window), `(r-1)/2 < l ≤ r`
/// and `l > r`. Within the latter two each coordinate is in one of three
/// bands: near the leading edge the window is cut by the square's edge, in the
/// middle it spans the whole square (or the whole window), and near the
/// trailing edge it is cut on the other side.
pub fn closed_form_ud(r: usize, l: usize, i: usize, j: usize) -> Result<(usize, usize)> {
    let half = half_width(r)?;
    if i == 0 || j == 0 || i > l || j > l {
        return Err(Error::Domain(format!("position ({i}, {j}) is outside 1..={l}")));
    }
    let side = |k: usize| -> usize {
        if l <= half {
            l
        } else if l <= r {
            if k <= l - half {
                half + k
            } else if k <= half {
                l
            } else {
                half + (l - k) + 1
            }
        } else if k <= half {
            half + k
        } else if k <= l - half {
            r
        } else {
            half + (l - k) + 1
        }
    };
    Ok((side(i), side(j)))
}

/// `H(B)` from the closed-form `u × d` with an unclipped window (`|R| = r²`).
pub fn closed_form_block_rate(n: usize, r: usize, l: usize, i: usize, j: usize) -> Result<f64> {
    let (u, d) = closed_form_ud(r, l, i, j)?;
    Ok(rate_from_counts(l * l, u * d, n * n, r * r))
}

/// `H̄` from the closed forms, for a square away from the border.
pub fn closed_form_average_rate(n: usize, r: usize, l: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::Domain("tampered side l must be at least 1".into()));
    }
    let mut sum = 0.0;
    for i in 1..=l {
        for j in 1..=l {
            sum += closed_form_block_rate(n, r, l, i, j)?;
        }
    }
    Ok(sum / (l * l) as f64)
}

/// Rate under tampering scattered uniformly over the image: `1 - |L| / N`.
/// Mapping strategy does not matter in this mode.
pub fn random_tamper_rate(total_blocks: usize, tampered: usize) -> Result<f64> {
    if tampered > total_blocks || total_blocks == 0 {
        return Err(Error::Domain(format!(
            "{tampered} tampered blocks out of {total_blocks}"
        )));
    }
    Ok(1.0 - tampered as f64 / total_blocks as f64)
}

/// `Q = H(B) - (1 - l²/N)`: how much the de-neighborhood mapping beats a
/// uniformly random mapping for this block. Positive means better.
pub fn superiority_margin(params: &TheoryParams, block: BlockIndex) -> Result<f64> {
    let h = block_recovery_rate_exact(params, block)?;
    let random = 1.0 - (params.l * params.l) as f64 / params.grid.total() as f64;
    Ok(h - random)
}

/// Sufficient bound on `r` for `Q > 0`: `r ≤ n·√(u·d) / l`.
pub fn superiority_bound(n: usize, l: usize, u: usize, d: usize) -> f64 {
    n as f64 * ((u * d) as f64).sqrt() / l as f64
}

/// Placements compared by [`position_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Top-left block of the square on the image's top-left block.
    Corner,
    /// Top-left block at the given 0-based position.
    At(BlockIndex),
    /// Square centered on the image.
    Center,
}

impl Placement {
    /// The reference placement used throughout the tables: 1-based block
    /// `(4, 6)`, i.e. 0-based `(3, 5)`.
    pub const REFERENCE: Placement = Placement::At(BlockIndex::new(3, 5));

    pub fn origin(&self, grid: BlockGrid, l: usize) -> BlockIndex {
        match *self {
            Placement::Corner => BlockIndex::new(0, 0),
            Placement::At(b) => b,
            Placement::Center => BlockIndex::new(
                grid.rows().saturating_sub(l) / 2,
                grid.cols().saturating_sub(l) / 2,
            ),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Placement::Corner => "corner".into(),
            Placement::At(b) => format!("at({b})"),
            Placement::Center => "center".into(),
        }
    }
}

/// `H̄` for the corner, reference and centered placements.
pub fn position_sweep(n: usize, r: usize, l: usize) -> Result<Vec<(Placement, f64)>> {
    if l == 0 {
        return Err(Error::Domain("tampered side l must be at least 1".into()));
    }
    let grid = BlockGrid::square(n);
    [Placement::Corner, Placement::REFERENCE, Placement::Center]
        .into_iter()
        .map(|p| {
            let params = TheoryParams {
                grid,
                r,
                l,
                origin: p.origin(grid, l),
            };
            Ok((p, average_recovery_rate(&params)?.average))
        })
        .collect()
}

/// One row of a theory table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryRow {
    pub r: usize,
    pub l: usize,
    pub average: f64,
}

/// `H̄` over every `(r, l)` pair, in `r`-major order. Each `r` must admit a
/// de-neighborhood mapping on the grid.
pub fn theory_table(grid: BlockGrid, rs: &[usize], ls: &[usize], origin: BlockIndex) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::with_capacity(rs.len() * ls.len());
    for &r in rs {
        deneighborhood_feasible(grid, r)?;
        for &l in ls {
            let params = TheoryParams { grid, r, l, origin };
            rows.push(TheoryRow {
                r,
                l,
                average: average_recovery_rate(&params)?.average,
            });
        }
    }
    Ok(rows)
}

/// Writes `r,l,H_avg_theory`.
pub fn write_theory_csv<W: Write>(mut out: W, rows: &[TheoryRow]) -> Result<()> {
    writeln!(out, "r,l,H_avg_theory")?;
    for row in rows {
        writeln!(out, "{},{},{:.6}", row.r, row.l, row.average)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the per-block profile as an `l × l` grid of rates, one CSV row per
/// block row of the square.
pub fn write_heatmap_csv<W: Write>(mut out: W, profile: &RecoveryProfile) -> Result<()> {
    for row in profile.rates.chunks(profile.side) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
