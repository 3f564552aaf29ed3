//! Monte Carlo harness: embed, tamper, authenticate, recover and measure over
//! a grid of parameters, and compare the measured recovery rate against the
//! theoretical one.
//!
//! Every trial draws its keys and tamper content from a seed derived from the
//! plan's master seed and the trial's coordinates, so results do not depend
//! on execution order and trials run in parallel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{average_recovery_rate, random_tamper_rate, TheoryParams};
use crate::codec::KeySet;
use crate::error::{Error, Result};
use crate::grid::{BlockGrid, BlockIndex, TamperRegion};
use crate::image::{self, GrayImage};
use crate::mapping::{build_mapping, BlockMapping, Strategy};
use crate::protocol::{
    authenticate_with_mapping, embed_with_mapping, measure_recovery_rate, recover_with_policy, SourcePolicy,
    WatermarkedImage,
};
use crate::rng::{derive_seed, SplitMix64};

/// `10·log10(255² / MSE)`; infinite for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "cannot compare {}x{} with {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sse: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = u64::from(x.abs_diff(y));
            d * d
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.pixels().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Smooth gradient plus seeded noise, standing in for natural test images.
/// Only the geometry of tampering affects recovery statistics, so the
/// content just needs to be varied.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    let mut rng = SplitMix64::new(seed);
    let gx = rng.next_f64() * 2.0 - 1.0;
    let gy = rng.next_f64() * 2.0 - 1.0;
    let base = 64.0 + rng.next_f64() * 128.0;
    let freq = 1.0 + rng.next_f64() * 6.0;
    let amp = 20.0 + rng.next_f64() * 40.0;
    let noise_amp = 4.0 + rng.next_f64() * 28.0;
    let mut noise = vec![0u8; width * height];
    rng.fill_bytes(&mut noise);
    let (w, h) = (width as f64, height as f64);
    GrayImage::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let wave = (std::f64::consts::TAU * freq * (u + 0.5 * v)).sin();
        let n = (f64::from(noise[y * width + x]) / 255.0 - 0.5) * noise_amp;
        let value = base + 60.0 * (gx * (u - 0.5) + gy * (v - 0.5)) + amp * wave + n;
        value.round().clamp(0.0, 255.0) as u8
    })
}

/// Overwrites every pixel of the square's blocks with seeded random bytes.
/// Returns the tampered image and the square's linear block indices.
pub fn apply_square_tamper(
    image: &WatermarkedImage,
    region: TamperRegion,
    seed: u64,
) -> Result<(GrayImage, Vec<usize>)> {
    let grid = image.image.grid();
    region.check_fits(grid)?;
    let mut out = image.image.clone();
    let mut rng = SplitMix64::new(seed);
    let truth = region.linear_indices(grid);
    for &i in &truth {
        let mut px = [0u8; 4];
        rng.fill_bytes(&mut px);
        out.set_block(grid.block(i), px);
    }
    Ok((out, truth))
}

/// Overwrites `count` distinct blocks, sampled without replacement, with
/// seeded random bytes. Returns the tampered image and the sorted indices.
pub fn apply_random_tamper(image: &WatermarkedImage, count: usize, seed: u64) -> Result<(GrayImage, Vec<usize>)> {
    let grid = image.image.grid();
    let total = grid.total();
    if count > total {
        return Err(Error::Parameter(format!("cannot tamper {count} of {total} blocks")));
    }
    let mut rng = SplitMix64::new(seed);
    // Partial Fisher–Yates: the first `count` slots are the sample.
    let mut order: Vec<usize> = (0..total).collect();
    for k in 0..count {
        let j = k + rng.below_usize(total - k);
        order.swap(k, j);
    }
    let mut truth = order[..count].to_vec();
    truth.sort_unstable();
    let mut out = image.image.clone();
    for &i in &truth {
        let mut px = [0u8; 4];
        rng.fill_bytes(&mut px);
        out.set_block(grid.block(i), px);
    }
    Ok((out, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Synthetic { width: usize, height: usize, seed: u64 },
}

impl ImageSource {
    pub fn id(&self) -> String {
        match self {
            ImageSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            ImageSource::Synthetic { seed, .. } => format!("synthetic-{seed}"),
        }
    }

    pub fn load(&self) -> Result<GrayImage> {
        match self {
            ImageSource::File(p) => image::load(p),
            ImageSource::Synthetic { width, height, seed } => synthetic_image(*width, *height, *seed),
        }
    }

    /// `count` synthetic sources with seeds `0..count`.
    pub fn synthetic_set(count: usize, width: usize, height: usize) -> Vec<ImageSource> {
        (0..count as u64)
            .map(|seed| ImageSource::Synthetic { width, height, seed })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TamperMode {
    /// `l × l` square with the given top-left block.
    Square { origin: BlockIndex },
    /// `l²` blocks scattered uniformly over the image.
    Scattered,
}

/// What to run. Cells are the cross product of strategies and `l` values;
/// a de-neighborhood entry in `strategies` is expanded over `rs`, so its own
/// `r` is ignored.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub images: Vec<ImageSource>,
    pub rs: Vec<usize>,
    pub ls: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub tamper: TamperMode,
    pub trials: usize,
    pub master_seed: u64,
    pub policy: SourcePolicy,
}

impl ExperimentPlan {
    /// Strategies with de-neighborhood entries expanded over `rs`, in order.
    pub fn cell_strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::new();
        for s in &self.strategies {
            match s {
                Strategy::Deneighborhood { .. } => {
                    out.extend(self.rs.iter().map(|&r| Strategy::Deneighborhood { r }))
                }
                other => out.push(*other),
            }
        }
        out
    }
}

/// One trial's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub image_id: String,
    pub strategy: Strategy,
    pub l: usize,
    pub trial: usize,
    pub measured_rate: f64,
    pub theory_rate: f64,
    pub psnr_db: f64,
    pub seed: u64,
}

impl TrialRecord {
    pub fn abs_error(&self) -> f64 {
        (self.measured_rate - self.theory_rate).abs()
    }
}

/// Aggregate over all images and trials of one `(strategy, l)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub strategy: Strategy,
    pub l: usize,
    pub measured: f64,
    pub theory: f64,
    pub abs_error: f64,
    pub trials: usize,
    pub mean_psnr_db: f64,
    /// Sample standard deviation of the per-trial rates.
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub strategy: Strategy,
    pub l: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub cells: Vec<ExperimentCell>,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    pub fn cell(&self, strategy: Strategy, l: usize) -> Option<&ExperimentCell> {
        self.cells.iter().find(|c| c.strategy == strategy && c.l == l)
    }

    /// Writes `image_id,strategy,r,l,trial,measured_rate,theory_rate,abs_error,psnr_db,seed`.
    /// `r` is 0 for strategies without a neighborhood.
    pub fn write_trials_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "image_id,strategy,r,l,trial,measured_rate,theory_rate,abs_error,psnr_db,seed")?;
        for t in &self.trials {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.4},{:016x}",
                t.image_id,
                t.strategy.name(),
                t.strategy.r().unwrap_or(0),
                t.l,
                t.trial,
                t.measured_rate,
                t.theory_rate,
                t.abs_error(),
                t.psnr_db,
                t.seed
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes one row per cell: `strategy,r,l,trials,measured_rate,theory_rate,abs_error,std_dev,psnr_db`.
    pub fn write_cells_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "strategy,r,l,trials,measured_rate,theory_rate,abs_error,std_dev,psnr_db")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
                c.strategy.name(),
                c.strategy.r().unwrap_or(0),
                c.l,
                c.trials,
                c.measured,
                c.theory,
                c.abs_error,
                c.std_dev,
                c.mean_psnr_db
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Theoretical rate for a cell. De-neighborhood squares use the exact area
/// rate; random mappings and scattered tampering use `1 - |L|/N`; the
/// keyless baselines use the fraction of the square whose fixed mapping
/// block falls outside it.
pub fn theory_rate(
    strategy: Strategy,
    grid: BlockGrid,
    l: usize,
    tamper: TamperMode,
    mapping: Option<&BlockMapping>,
) -> Result<f64> {
    let TamperMode::Square { origin } = tamper else {
        return random_tamper_rate(grid.total(), l * l);
    };
    match strategy {
        Strategy::Deneighborhood { r } => Ok(average_recovery_rate(&TheoryParams { grid, r, l, origin })?.average),
        Strategy::Random => random_tamper_rate(grid.total(), l * l),
        Strategy::Offset | Strategy::Arnold { .. } => {
            let mapping = match mapping {
                Some(m) => m.clone(),
                None => build_mapping(strategy, 0, grid)?,
            };
            let region = TamperRegion::new(origin, l);
            let idx = region.linear_indices(grid);
            let outside = idx
                .iter()
                .filter(|&&i| !region.contains(grid.block(mapping.forward(i))))
                .count();
            Ok(outside as f64 / idx.len() as f64)
        }
    }
}

/// Optional artifact output for [`run_plan_with_artifacts`].
#[derive(Debug, Clone)]
pub struct ArtifactOptions {
    pub dir: PathBuf,
    pub masks: bool,
    pub recovered: bool,
}

fn artifact_stem(t: &TrialRecord) -> String {
    format!(
        "{}_{}_r{}_l{}_t{}",
        t.image_id,
        t.strategy.name(),
        t.strategy.r().unwrap_or(0),
        t.l,
        t.trial
    )
}

struct TrialOutput {
    record: TrialRecord,
    mask: Option<Vec<u8>>,
    recovered: Option<GrayImage>,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    plan: &ExperimentPlan,
    image: &GrayImage,
    image_id: &str,
    strategy: Strategy,
    l: usize,
    trial: usize,
    seed: u64,
    keep: bool,
) -> Result<TrialOutput> {
    let grid = image.grid();
    let mut rng = SplitMix64::new(seed);
    let keys = KeySet::new(rng.next_u64(), rng.next_u64(), rng.next_u64());
    let tamper_seed = rng.next_u64();

    let mapping = build_mapping(strategy, keys.k3, grid)?;
    let watermarked = embed_with_mapping(image, &keys, &mapping)?;
    let psnr_db = psnr(image, &watermarked.image)?;
    let (tampered, truth) = match plan.tamper {
        TamperMode::Square { origin } => {
            apply_square_tamper(&watermarked, TamperRegion::new(origin, l), tamper_seed)?
        }
        TamperMode::Scattered => apply_random_tamper(&watermarked, l * l, tamper_seed)?,
    };
    let report = authenticate_with_mapping(&tampered, &keys, &mapping)?;
    let result = recover_with_policy(&tampered, &report, &keys, &mapping, plan.policy)?;
    let measured_rate = measure_recovery_rate(&truth, &result)?;
    let theory_rate = theory_rate(strategy, grid, l, plan.tamper, Some(&mapping))?;

    Ok(TrialOutput {
        record: TrialRecord {
            image_id: image_id.to_string(),
            strategy,
            l,
            trial,
            measured_rate,
            theory_rate,
            psnr_db,
            seed,
        },
        mask: keep.then(|| report.final_map.pixel_mask()),
        recovered: keep.then_some(result.image),
    })
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run_plan_with_artifacts(plan, None)
}

/// Runs every cell. A failing trial fails its cell, which is recorded in the
/// report; other cells still run. Errors loading images abort the plan.
pub fn run_plan_with_artifacts(plan: &ExperimentPlan, artifacts: Option<&ArtifactOptions>) -> Result<ExperimentReport> {
    let strategies = plan.cell_strategies();
    if plan.images.is_empty() || plan.ls.is_empty() || strategies.is_empty() || plan.trials == 0 {
        return Ok(ExperimentReport::default());
    }
    let images: Vec<(String, GrayImage)> = plan
        .images
        .iter()
        .map(|src| Ok((src.id(), src.load()?)))
        .collect::<Result<_>>()?;
    let keep = artifacts.is_some_and(|a| a.masks || a.recovered);

    let cells: Vec<(usize, Strategy, usize)> = strategies
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| plan.ls.iter().map(move |&l| (si, s, l)))
        .collect();

    let outcomes: Vec<std::result::Result<Vec<TrialOutput>, CellFailure>> = cells
        .par_iter()
        .map(|&(si, strategy, l)| {
            let jobs: Vec<(usize, usize)> = (0..images.len())
                .flat_map(|ii| (0..plan.trials).map(move |t| (ii, t)))
                .collect();
            jobs.par_iter()
                .map(|&(ii, t)| {
                    let seed = derive_seed(plan.master_seed, &[si as u64, l as u64, ii as u64, t as u64]);
                    let (id, img) = &images[ii];
                    run_trial(plan, img, id, strategy, l, t, seed, keep)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| CellFailure {
                    strategy,
                    l,
                    message: e.to_string(),
                })
        })
        .collect();

    let mut report = ExperimentReport::default();
    for ((_, strategy, l), outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(outputs) => {
                let rates: Vec<f64> = outputs.iter().map(|o| o.record.measured_rate).collect();
                let (measured, std_dev) = mean_and_std(&rates);
                let theory = outputs.iter().map(|o| o.record.theory_rate).sum::<f64>() / outputs.len() as f64;
                let finite_psnr: Vec<f64> = outputs
                    .iter()
                    .map(|o| o.record.psnr_db)
                    .filter(|p| p.is_finite())
                    .collect();
                let mean_psnr_db = if finite_psnr.is_empty() {
                    f64::INFINITY
                } else {
                    finite_psnr.iter().sum::<f64>() / finite_psnr.len() as f64
                };
                report.cells.push(ExperimentCell {
                    strategy,
                    l,
                    measured,
                    theory,
                    abs_error: (measured - theory).abs(),
                    trials: outputs.len(),
                    mean_psnr_db,
                    std_dev,
                });
                if let Some(opts) = artifacts {
                    write_trial_artifacts(opts, &outputs)?;
                }
                report.trials.extend(outputs.into_iter().map(|o| o.record));
            }
            Err(failure) => report.failures.push(failure),
        }
    }

    if let Some(opts) = artifacts {
        let tables = opts.dir.join("tables");
        fs::create_dir_all(&tables)?;
        report.write_trials_csv(fs::File::create(tables.join("trials.csv"))?)?;
        report.write_cells_csv(fs::File::create(tables.join("cells.csv"))?)?;
    }
    Ok(report)
}

fn write_trial_artifacts(opts: &ArtifactOptions, outputs: &[TrialOutput]) -> Result<()> {
    let masks = opts.dir.join("masks");
    let recovered = opts.dir.join("recovered");
    for o in outputs {
        let stem = artifact_stem(&o.record);
        if let (true, Some(mask), Some(img)) = (opts.masks, &o.mask, &o.recovered) {
            fs::create_dir_all(&masks)?;
            let file = fs::File::create(masks.join(format!("{stem}.pgm")))?;
            image::write_pgm_raw(std::io::BufWriter::new(file), img.width(), img.height(), mask)?;
        }
        if let (true, Some(img)) = (opts.recovered, &o.recovered) {
            fs::create_dir_all(&recovered)?;
            image::save(recovered.join(format!("{stem}.pgm")), img)?;
        }
    }
    Ok(())
}

/// Loads every `.pgm`/`.png` in a directory as a file source, sorted by name.
pub fn image_sources_in(dir: &Path) -> Result<Vec<ImageSource>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    Ok(paths.into_iter().map(ImageSource::File).collect())
}
