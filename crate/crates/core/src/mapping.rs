//! Block mappings: the keyed bijection that decides which block stores each
//! block's recovery watermark.
//!
//! The de-neighborhood strategy draws a keyed random permutation in which no
//! block maps inside the `r × r` window around itself, so a contiguous
//! tampered area small enough to fit in that window can never take out a block
//! together with its recovery data. Random, fixed-offset and Arnold mappings
//! are provided as baselines behind the same type.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{half_width, BlockGrid, BlockIndex};
use crate::rng::SplitMix64;

/// Number of full repair sweeps before de-neighborhood construction gives up.
pub const MAX_REPAIR_PASSES: usize = 64;

/// Random partner draws per violator before falling back to a linear scan.
const PARTNER_PROBES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Keyed permutation avoiding each block's `r × r` window.
    Deneighborhood { r: usize },
    /// Keyed permutation without fixed points.
    Random,
    /// `i ↦ i + total/2 (mod total)`: upper half to lower half and back.
    Offset,
    /// Cat-map scrambling of block coordinates on a square grid.
    Arnold { iterations: usize },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Deneighborhood { .. } => "deneighborhood",
            Strategy::Random => "random",
            Strategy::Offset => "offset",
            Strategy::Arnold { .. } => "arnold",
        }
    }

    /// Neighborhood side for de-neighborhood mappings.
    pub fn r(&self) -> Option<usize> {
        match self {
            Strategy::Deneighborhood { r } => Some(*r),
            _ => None,
        }
    }

    /// Largest Chebyshev distance the strategy forbids between a block and
    /// its mapping block, if it forbids any.
    pub fn forbidden_radius(&self) -> Option<usize> {
        match self {
            Strategy::Deneighborhood { r } => Some((r.max(&1) - 1) / 2),
            Strategy::Random => Some(0),
            Strategy::Offset | Strategy::Arnold { .. } => None,
        }
    }

    /// Parses a strategy name, taking `r` and the Arnold iteration count from
    /// the arguments.
    pub fn from_name(name: &str, r: usize, arnold_iterations: usize) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "deneighborhood" | "de-neighborhood" | "dn" => Ok(Strategy::Deneighborhood { r }),
            "random" => Ok(Strategy::Random),
            "offset" => Ok(Strategy::Offset),
            "arnold" => Ok(Strategy::Arnold {
                iterations: arnold_iterations,
            }),
            other => Err(Error::Parameter(format!("unknown mapping strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Deneighborhood { r } => write!(f, "deneighborhood(r={r})"),
            Strategy::Arnold { iterations } => write!(f, "arnold(iterations={iterations})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `deneighborhood:<r>`, `random`, `offset`, `arnold` and `arnold:<iterations>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |what: &str| -> Result<usize> {
            arg.ok_or_else(|| Error::Parameter(format!("{name} needs {what}, as in {name}:<{what}>")))?
                .trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("bad {what} in {s:?}")))
        };
        match name.trim() {
            "deneighborhood" | "dn" => Ok(Strategy::Deneighborhood { r: number("r")? }),
            "arnold" if arg.is_none() => Ok(Strategy::Arnold { iterations: 1 }),
            "arnold" => Ok(Strategy::Arnold {
                iterations: number("iterations")?,
            }),
            other => Strategy::from_name(other, 0, 1),
        }
    }
}

/// A bijection `ε` over linear block indices together with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMapping {
    forward: Vec<u32>,
    inverse: Vec<u32>,
    strategy: Strategy,
}

impl BlockMapping {
    /// Wraps a forward table, rejecting anything that is not a permutation.
    pub fn from_forward(forward: Vec<u32>, strategy: Strategy) -> Result<Self> {
        let inverse = invert(&forward).ok_or_else(|| {
            Error::Parameter("mapping table is not a permutation of its index range".into())
        })?;
        Ok(Self {
            forward,
            inverse,
            strategy,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// `ε(i)`: the block holding block `i`'s recovery watermark.
    pub fn forward(&self, i: usize) -> usize {
        self.forward[i] as usize
    }

    /// `ε⁻¹(k)`: the block whose recovery watermark block `k` holds.
    pub fn inverse(&self, k: usize) -> usize {
        self.inverse[k] as usize
    }

    pub fn forward_table(&self) -> &[u32] {
        &self.forward
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Writes the `i,eps_i` CSV dump.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,eps_i")?;
        for (i, e) in self.forward.iter().enumerate() {
            writeln!(out, "{i},{e}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads an `i,eps_i` dump back into a raw forward table (no bijectivity check).
pub fn read_mapping_csv<R: BufRead>(input: R) -> Result<Vec<u32>> {
    let mut table = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if idx == 0 {
            if line.trim() != "i,eps_i" {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header i,eps_i".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<u32>().ok());
        let mut fields = line.split(',');
        match (parse(fields.next()), parse(fields.next()), fields.next()) {
            (Some(i), Some(e), None) if i as usize == table.len() => table.push(e),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected row {},<target>", table.len()),
                })
            }
        }
    }
    Ok(table)
}

fn invert(forward: &[u32]) -> Option<Vec<u32>> {
    let n = forward.len();
    let mut inverse = vec![u32::MAX; n];
    for (i, &t) in forward.iter().enumerate() {
        let slot = inverse.get_mut(t as usize)?;
        if *slot != u32::MAX {
            return None;
        }
        *slot = i as u32;
    }
    Some(inverse)
}

fn check_index_range(grid: BlockGrid) -> Result<()> {
    if grid.total() > u32::MAX as usize {
        return Err(Error::Parameter("block grid too large for 32-bit block indices".into()));
    }
    Ok(())
}

/// Checks that a de-neighborhood bijection is guaranteed to exist.
///
/// Accepted when `r² ≤ total / 2` (every block then has at least half of the
/// grid as allowed targets, which satisfies Hall's condition), or when a side
/// of the grid is even and longer than `r - 1`, in which case the half-side
/// cyclic shift is itself a valid mapping.
pub fn deneighborhood_feasible(grid: BlockGrid, r: usize) -> Result<()> {
    let half = half_width(r)?;
    let hall = r * r <= grid.total() / 2;
    let shift_witness = |side: usize| side.is_multiple_of(2) && side / 2 > half;
    if hall || shift_witness(grid.cols()) || shift_witness(grid.rows()) {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "r = {r} is infeasible on a {}x{} block grid: need r^2 <= total/2 = {} (Hall condition) \
             or an even grid side longer than r - 1",
            grid.cols(),
            grid.rows(),
            grid.total() / 2
        )))
    }
}

/// Keyed de-neighborhood mapping.
///
/// SplitMix64 seeded with `k3` drives a top-down Fisher–Yates shuffle of the
/// identity. Repair passes then visit the violating positions in shuffled
/// order and swap each with a partner `j` such that both `i → ε(j)` and
/// `j → ε(i)` clear the window; partners are drawn at random first and then by
/// a linear scan from a random start.
pub fn build_deneighborhood_mapping(k3: u64, grid: BlockGrid, r: usize) -> Result<BlockMapping> {
    check_index_range(grid)?;
    deneighborhood_feasible(grid, r)?;
    let half = half_width(r)?;
    let total = grid.total();
    let cols = grid.cols();
    let too_close = |a: usize, b: u32| {
        let b = b as usize;
        (a / cols).abs_diff(b / cols) <= half && (a % cols).abs_diff(b % cols) <= half
    };

    let mut rng = SplitMix64::new(k3);
    let mut perm: Vec<u32> = (0..total as u32).collect();
    rng.shuffle(&mut perm);

    for _pass in 0..MAX_REPAIR_PASSES {
        let mut violators: Vec<usize> = (0..total).filter(|&i| too_close(i, perm[i])).collect();
        if violators.is_empty() {
            return BlockMapping::from_forward(perm, Strategy::Deneighborhood { r });
        }
        rng.shuffle(&mut violators);
        for i in violators {
            if !too_close(i, perm[i]) {
                continue;
            }
            let fits = |j: usize, perm: &[u32]| j != i && !too_close(i, perm[j]) && !too_close(j, perm[i]);
            let mut partner = None;
            for _ in 0..PARTNER_PROBES {
                let j = rng.below_usize(total);
                if fits(j, &perm) {
                    partner = Some(j);
                    break;
                }
            }
            if partner.is_none() {
                let start = rng.below_usize(total);
                partner = (0..total).map(|k| (start + k) % total).find(|&j| fits(j, &perm));
            }
            if let Some(j) = partner {
                perm.swap(i, j);
            }
        }
    }

    let residual = (0..total).filter(|&i| too_close(i, perm[i])).count();
    if residual == 0 {
        return BlockMapping::from_forward(perm, Strategy::Deneighborhood { r });
    }
    Err(Error::Construction {
        residual,
        passes: MAX_REPAIR_PASSES,
    })
}

/// Keyed permutation with no fixed points; fixed points left by the shuffle
/// are swapped with the next position.
pub fn build_random_mapping(k3: u64, grid: BlockGrid) -> Result<BlockMapping> {
    check_index_range(grid)?;
    let total = grid.total();
    if total < 2 {
        return Err(Error::Parameter("random mapping needs at least 2 blocks".into()));
    }
    let mut rng = SplitMix64::new(k3);
    let mut perm: Vec<u32> = (0..total as u32).collect();
    rng.shuffle(&mut perm);
    for i in 0..total {
        if perm[i] as usize == i {
            perm.swap(i, (i + 1) % total);
        }
    }
    BlockMapping::from_forward(perm, Strategy::Random)
}

/// Half-image cyclic offset. The shift is a bijection for any size and an
/// involution when the block count is even.
pub fn build_offset_mapping(grid: BlockGrid) -> Result<BlockMapping> {
    check_index_range(grid)?;
    let total = grid.total();
    if total < 2 {
        return Err(Error::Parameter("offset mapping needs at least 2 blocks".into()));
    }
    let shift = total / 2;
    let forward = (0..total).map(|i| ((i + shift) % total) as u32).collect();
    BlockMapping::from_forward(forward, Strategy::Offset)
}

/// One step of the cat map on `(row, col)` modulo `n`.
pub fn arnold_step(row: usize, col: usize, n: usize) -> (usize, usize) {
    ((row + col) % n, (row + 2 * col) % n)
}

pub fn build_arnold_mapping(grid: BlockGrid, iterations: usize) -> Result<BlockMapping> {
    check_index_range(grid)?;
    if !grid.is_square() {
        return Err(Error::Parameter(format!(
            "Arnold mapping needs a square block grid, got {}x{}",
            grid.cols(),
            grid.rows()
        )));
    }
    if iterations == 0 {
        return Err(Error::Parameter("Arnold iteration count must be positive".into()));
    }
    let n = grid.cols();
    let forward = grid
        .iter()
        .map(|b| {
            let (mut row, mut col) = (b.row, b.col);
            for _ in 0..iterations {
                (row, col) = arnold_step(row, col, n);
            }
            grid.linear(BlockIndex::new(row, col)) as u32
        })
        .collect();
    BlockMapping::from_forward(forward, Strategy::Arnold { iterations })
}

/// Builds the mapping for any strategy; `k3` is ignored by keyless strategies.
pub fn build_mapping(strategy: Strategy, k3: u64, grid: BlockGrid) -> Result<BlockMapping> {
    match strategy {
        Strategy::Deneighborhood { r } => build_deneighborhood_mapping(k3, grid, r),
        Strategy::Random => build_random_mapping(k3, grid),
        Strategy::Offset => build_offset_mapping(grid),
        Strategy::Arnold { iterations } => build_arnold_mapping(grid, iterations),
    }
}

/// Result of an exhaustive mapping audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingAudit {
    pub is_bijection: bool,
    /// Smallest Chebyshev distance between a block and its target; `None` for
    /// an empty table.
    pub min_chebyshev_distance: Option<usize>,
    /// Blocks whose target lies within the forbidden radius.
    pub violations: usize,
}

/// Audits a raw forward table against a forbidden radius (`None` checks
/// bijectivity and distances only).
pub fn verify_table(forward: &[u32], grid: BlockGrid, forbidden_radius: Option<usize>) -> MappingAudit {
    let in_range = forward.len() == grid.total() && forward.iter().all(|&t| (t as usize) < grid.total());
    let is_bijection = in_range && invert(forward).is_some();
    let mut min_dist = None;
    let mut violations = 0;
    for (i, &t) in forward.iter().enumerate() {
        if t as usize >= grid.total() || i >= grid.total() {
            violations += 1;
            continue;
        }
        let d = grid.block(i).chebyshev(grid.block(t as usize));
        min_dist = Some(min_dist.map_or(d, |m: usize| m.min(d)));
        if forbidden_radius.is_some_and(|radius| d <= radius) {
            violations += 1;
        }
    }
    MappingAudit {
        is_bijection,
        min_chebyshev_distance: min_dist,
        violations,
    }
}

/// Audits a mapping against the constraint its own strategy promises.
pub fn verify_mapping(mapping: &BlockMapping, grid: BlockGrid) -> MappingAudit {
    verify_table(&mapping.forward, grid, mapping.strategy.forbidden_radius())
}
