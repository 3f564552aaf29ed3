use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fragmark::analysis::{average_recovery_rate, theory_table, write_heatmap_csv, write_theory_csv, TheoryParams};
use fragmark::codec::KeySet;
use fragmark::experiment::{
    apply_random_tamper, apply_square_tamper, image_sources_in, psnr, run_plan_with_artifacts, ArtifactOptions,
    ExperimentPlan, ExperimentReport, ImageSource, TamperMode,
};
use fragmark::grid::{BlockGrid, BlockIndex, TamperRegion};
use fragmark::image;
use fragmark::mapping::{build_mapping, verify_mapping, Strategy};
use fragmark::protocol::{
    authenticate_with_mapping, embed_with_mapping, measure_recovery_rate, recover_with_policy, recoverable_count,
    ProtocolSummary, SourcePolicy, WatermarkMetadata, WatermarkedImage,
};
use fragmark::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success (verify: image authentic)
  1  verify found tampered blocks
  2  usage error
  3  I/O error
  4  malformed input (key file, CSV, image, sidecar)
  5  invalid parameter, dimension or domain
  6  de-neighborhood mapping could not be constructed
  7  key fingerprint does not match the image
  8  one or more experiment cells failed";

#[derive(Parser)]
#[command(name = "fragmark", version, about = "Self-embedding fragile watermarking with de-neighborhood mapping")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write three fresh 64-bit keys.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Watermark an image; writes `<output>.json` alongside.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Overwrite blocks with seeded random bytes.
    Tamper {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Square `row,col,l` in 0-based block coordinates.
        #[arg(long, conflicts_with = "random", required_unless_present = "random")]
        region: Option<TamperRegion>,
        /// Number of blocks scattered over the image.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, env = "FRAGMARK_SEED", default_value = "0", value_parser = parse_u64)]
        seed: u64,
    },
    /// Authenticate an image; exits 1 if any block is tampered.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[command(flatten)]
        meta: MetaArgs,
        /// Pixel-resolution tamper mask (PGM or PNG).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Block-resolution tamper mask.
        #[arg(long)]
        block_mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Policy::Local)]
        policy: Policy,
    },
    /// Restore tampered blocks; writes the image and `<output>.report.json`.
    Recover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[command(flatten)]
        meta: MetaArgs,
        /// Known tampered square, to report the recovery rate.
        #[arg(long)]
        region: Option<TamperRegion>,
        #[arg(long, value_enum, default_value_t = Policy::Local)]
        policy: Policy,
    },
    /// Theoretical recovery rates as CSV.
    Analyze {
        /// Blocks per side.
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_odd)]
        r: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_positive)]
        l: Vec<usize>,
        #[arg(long, default_value = "3,5", value_parser = parse_block)]
        origin: BlockIndex,
        /// Per-block rates of the square; needs exactly one r and one l.
        #[arg(long)]
        heatmap: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo sweep comparing measured and theoretical rates.
    Experiment {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_delimiter = ',', default_value = "21,41,61,81,101", value_parser = parse_odd)]
        r: Vec<usize>,
        /// Strategies: deneighborhood, random, offset, arnold[:k].
        #[arg(long, value_delimiter = ',', default_value = "deneighborhood")]
        strategies: Vec<String>,
    },
    /// De-neighborhood against the random, offset and Arnold baselines.
    Compare {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_delimiter = ',', default_value = "51,101", value_parser = parse_odd)]
        r: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        arnold_iterations: usize,
    },
    /// Check a mapping's bijectivity and neighborhood constraint.
    AuditMapping {
        /// Blocks per side.
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Take k3 from a key file.
        #[arg(long, conflicts_with = "seed")]
        keys: Option<PathBuf>,
        /// Use this value as k3.
        #[arg(long, env = "FRAGMARK_SEED", value_parser = parse_u64)]
        seed: Option<u64>,
        /// Write the mapping as `i,eps_i` CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct StrategyArgs {
    #[arg(long, default_value = "deneighborhood")]
    strategy: String,
    #[arg(long, default_value_t = 101, value_parser = parse_odd)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    arnold_iterations: usize,
}

impl StrategyArgs {
    fn strategy(&self) -> fragmark::Result<Strategy> {
        Strategy::from_name(&self.strategy, self.r, self.arnold_iterations)
    }
}

#[derive(Args, Clone)]
struct MetaArgs {
    /// Sidecar written by `embed`; defaults to `<input>.json`.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Override the sidecar's strategy (requires --r for deneighborhood).
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, value_parser = parse_odd)]
    r: Option<usize>,
}

#[derive(Args, Clone)]
struct PlanArgs {
    /// Directory of PGM/PNG images; synthetic images otherwise.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    synthetic: usize,
    /// Side in pixels of synthetic images.
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100", value_parser = parse_positive)]
    l: Vec<usize>,
    #[arg(long, value_enum, default_value_t = TamperKind::Square)]
    tamper: TamperKind,
    #[arg(long, default_value = "3,5", value_parser = parse_block)]
    origin: BlockIndex,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, env = "FRAGMARK_SEED", default_value = "0", value_parser = parse_u64)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Policy::Local)]
    policy: Policy,
    /// Write `masks/`, `recovered/` and `tables/` here.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Write per-trial rows instead of per-cell rows.
    #[arg(long)]
    per_trial: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TamperKind {
    Square,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Local,
    Final,
}

impl From<Policy> for SourcePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Local => SourcePolicy::LocalEvidence,
            Policy::Final => SourcePolicy::FinalVerdict,
        }
    }
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| e.to_string())
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_odd(s: &str) -> Result<usize, String> {
    let v = parse_positive(s)?;
    if v % 2 == 0 {
        return Err(format!("{v} is not odd"));
    }
    Ok(v)
}

fn parse_block(s: &str) -> Result<BlockIndex, String> {
    let (row, col) = s.split_once(',').ok_or("expected row,col")?;
    let row = row.trim().parse().map_err(|e| format!("row: {e}"))?;
    let col = col.trim().parse().map_err(|e| format!("col: {e}"))?;
    Ok(BlockIndex::new(row, col))
}

enum Failure {
    Lib(Error),
    Tampered,
    Cells(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Lib(Error::Io(e.into()))
        } else {
            Failure::Lib(Error::Format(format!("sidecar: {e}")))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Parse { .. } | Error::Format(_) => 4,
        Error::Parameter(_) | Error::Dimension(_) | Error::Domain(_) | Error::UndefinedRate => 5,
        Error::Construction { .. } => 6,
        Error::KeyMismatch { .. } => 7,
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Tampered) => ExitCode::from(1),
        Err(Failure::Cells(n)) => {
            eprintln!("error: {n} experiment cell(s) failed");
            ExitCode::from(8)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Keygen { out } => keygen(&out),
        Command::Embed {
            input,
            output,
            keys,
            strategy,
        } => embed(&input, &output, &keys, &strategy),
        Command::Tamper {
            input,
            output,
            region,
            random,
            seed,
        } => tamper(&input, &output, region, random, seed),
        Command::Verify {
            input,
            keys,
            meta,
            mask,
            block_mask,
            policy,
        } => verify(&input, &keys, &meta, mask.as_deref(), block_mask.as_deref(), policy.into()),
        Command::Recover {
            input,
            output,
            keys,
            meta,
            region,
            policy,
        } => recover(&input, &output, &keys, &meta, region, policy.into()),
        Command::Analyze {
            n,
            r,
            l,
            origin,
            heatmap,
            out,
        } => analyze(n, &r, &l, origin, heatmap, out.as_deref()),
        Command::Experiment { plan, r, strategies } => {
            let strategies = strategies
                .iter()
                .map(|s| match s.as_str() {
                    "deneighborhood" => Ok(Strategy::Deneighborhood { r: 0 }),
                    other => other.parse(),
                })
                .collect::<fragmark::Result<Vec<_>>>()?;
            experiment(&plan, r, strategies)
        }
        Command::Compare {
            plan,
            r,
            arnold_iterations,
        } => {
            let strategies = vec![
                Strategy::Deneighborhood { r: 0 },
                Strategy::Random,
                Strategy::Offset,
                Strategy::Arnold {
                    iterations: arnold_iterations,
                },
            ];
            experiment(&plan, r, strategies)
        }
        Command::AuditMapping {
            n,
            strategy,
            keys,
            seed,
            dump,
        } => audit(n, &strategy, keys.as_deref(), seed, dump.as_deref()),
    }
}

fn output(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_keys(path: &Path) -> fragmark::Result<KeySet> {
    KeySet::parse_key_file(&fs::read_to_string(path)?)
}

fn keygen(out: &Path) -> CmdResult {
    let keys = KeySet::generate()?;
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(out)?;
    file.write_all(keys.to_key_file().as_bytes())?;
    eprintln!("wrote keys {} to {}", keys.fingerprint(), out.display());
    Ok(())
}

fn embed(input: &Path, output: &Path, keys: &Path, strategy: &StrategyArgs) -> CmdResult {
    let keys = load_keys(keys)?;
    let strategy = strategy.strategy()?;
    let host = image::load(input)?;
    let mapping = build_mapping(strategy, keys.k3, host.grid())?;
    let marked = embed_with_mapping(&host, &keys, &mapping)?;
    image::save(output, &marked.image)?;
    let meta = serde_json::to_string_pretty(&marked.metadata())?;
    fs::write(sidecar(output, ".json"), meta + "\n")?;
    println!("psnr_db={:.2}", psnr(&host, &marked.image)?);
    Ok(())
}

fn tamper(input: &Path, output: &Path, region: Option<TamperRegion>, random: Option<usize>, seed: u64) -> CmdResult {
    let img = image::load(input)?;
    let meta_path = sidecar(input, ".json");
    let marked = WatermarkedImage {
        image: img,
        strategy: Strategy::Random,
        key_fingerprint: String::new(),
    };
    let (tampered, truth) = match (region, random) {
        (Some(region), _) => apply_square_tamper(&marked, region, seed)?,
        (None, Some(count)) => apply_random_tamper(&marked, count, seed)?,
        (None, None) => unreachable!("clap requires --region or --random"),
    };
    image::save(output, &tampered)?;
    if meta_path.exists() {
        fs::copy(&meta_path, sidecar(output, ".json"))?;
    }
    println!("tampered_blocks={}", truth.len());
    Ok(())
}

fn load_meta(input: &Path, args: &MetaArgs) -> fragmark::Result<(Option<WatermarkMetadata>, Strategy)> {
    let path = args.meta.clone().unwrap_or_else(|| sidecar(input, ".json"));
    let meta: Option<WatermarkMetadata> = if path.exists() {
        let text = fs::read_to_string(&path)?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?)
    } else {
        None
    };
    let strategy = match (&args.strategy, &meta) {
        (Some(name), _) => Strategy::from_name(name, args.r.unwrap_or(0), 1)?,
        (None, Some(m)) => m.strategy()?,
        (None, None) => {
            return Err(Error::Parameter(format!(
                "no sidecar at {} and no --strategy given",
                path.display()
            )))
        }
    };
    Ok((meta, strategy))
}

fn verify(
    input: &Path,
    keys: &Path,
    meta_args: &MetaArgs,
    mask: Option<&Path>,
    block_mask: Option<&Path>,
    policy: SourcePolicy,
) -> CmdResult {
    let keys = load_keys(keys)?;
    let (meta, strategy) = load_meta(input, meta_args)?;
    if let Some(m) = &meta {
        m.check_keys(&keys)?;
    }
    let img = image::load(input)?;
    let mapping = build_mapping(strategy, keys.k3, img.grid())?;
    let report = authenticate_with_mapping(&img, &keys, &mapping)?;
    if let Some(p) = mask {
        write_mask(p, img.width(), img.height(), &report.final_map.pixel_mask())?;
    }
    if let Some(p) = block_mask {
        let grid = img.grid();
        write_mask(p, grid.cols(), grid.rows(), &report.final_map.block_mask())?;
    }
    let tampered = report.tampered_count();
    if tampered == 0 {
        println!("authentic");
        return Ok(());
    }
    println!(
        "tampered={} recovered_possible={}",
        tampered,
        recoverable_count(&report, &mapping, policy)
    );
    Err(Failure::Tampered)
}

fn write_mask(path: &Path, width: usize, height: usize, data: &[u8]) -> fragmark::Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        image::save(path, &fragmark::GrayImage::new(width, height, data.to_vec())?)
    } else {
        image::write_pgm_raw(BufWriter::new(fs::File::create(path)?), width, height, data)
    }
}

fn recover(
    input: &Path,
    output: &Path,
    keys: &Path,
    meta_args: &MetaArgs,
    region: Option<TamperRegion>,
    policy: SourcePolicy,
) -> CmdResult {
    let keys = load_keys(keys)?;
    let (meta, strategy) = load_meta(input, meta_args)?;
    if let Some(m) = &meta {
        m.check_keys(&keys)?;
    }
    let img = image::load(input)?;
    let grid = img.grid();
    let mapping = build_mapping(strategy, keys.k3, grid)?;
    let report = authenticate_with_mapping(&img, &keys, &mapping)?;
    let result = recover_with_policy(&img, &report, &keys, &mapping, policy)?;
    let mut summary = ProtocolSummary::new(&report, Some(&result));
    if let Some(region) = region {
        region.check_fits(grid)?;
        let rate = measure_recovery_rate(&region.linear_indices(grid), &result)?;
        summary.recovery_rate = Some(rate);
    }
    image::save(output, &result.image)?;
    fs::write(
        sidecar(output, ".report.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    print!(
        "tampered={} recovered={} unrecoverable={}",
        summary.tampered, summary.recovered, summary.unrecoverable
    );
    if let Some(rate) = summary.recovery_rate {
        print!(" recovery_rate={:.2}%", rate * 100.0);
    }
    println!();
    Ok(())
}

fn analyze(n: usize, rs: &[usize], ls: &[usize], origin: BlockIndex, heatmap: bool, out: Option<&Path>) -> CmdResult {
    let grid = BlockGrid::square(n);
    let mut w = output(out)?;
    if heatmap {
        let (&[r], &[l]) = (rs, ls) else {
            return Err(Error::Parameter("--heatmap takes exactly one --r and one --l".into()).into());
        };
        fragmark::mapping::deneighborhood_feasible(grid, r)?;
        let profile = average_recovery_rate(&TheoryParams { grid, r, l, origin })?;
        write_heatmap_csv(&mut w, &profile)?;
    } else {
        write_theory_csv(&mut w, &theory_table(grid, rs, ls, origin)?)?;
    }
    Ok(())
}

fn experiment(args: &PlanArgs, rs: Vec<usize>, strategies: Vec<Strategy>) -> CmdResult {
    let images = match &args.images {
        Some(dir) => image_sources_in(dir)?,
        None => ImageSource::synthetic_set(args.synthetic, args.size, args.size),
    };
    let plan = ExperimentPlan {
        images,
        rs,
        ls: args.l.clone(),
        strategies,
        tamper: match args.tamper {
            TamperKind::Square => TamperMode::Square { origin: args.origin },
            TamperKind::Random => TamperMode::Scattered,
        },
        trials: args.trials,
        master_seed: args.seed,
        policy: args.policy.into(),
    };
    let artifacts = args.artifacts.as_ref().map(|dir| ArtifactOptions {
        dir: dir.clone(),
        masks: true,
        recovered: true,
    });
    let report = run_plan_with_artifacts(&plan, artifacts.as_ref())?;
    write_report(&report, args)?;
    for f in &report.failures {
        eprintln!("cell {} l={} failed: {}", f.strategy, f.l, f.message);
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Cells(report.failures.len()))
    }
}

fn write_report(report: &ExperimentReport, args: &PlanArgs) -> fragmark::Result<()> {
    let mut w = output(args.out.as_deref())?;
    if args.per_trial {
        report.write_trials_csv(&mut w)
    } else {
        report.write_cells_csv(&mut w)
    }
}

fn audit(n: usize, strategy: &StrategyArgs, keys: Option<&Path>, seed: Option<u64>, dump: Option<&Path>) -> CmdResult {
    let k3 = match (keys, seed) {
        (Some(p), _) => load_keys(p)?.k3,
        (None, Some(s)) => s,
        (None, None) => 0,
    };
    let strategy = strategy.strategy()?;
    let grid = BlockGrid::square(n);
    let mapping = build_mapping(strategy, k3, grid)?;
    let audit = verify_mapping(&mapping, grid);
    let min = audit
        .min_chebyshev_distance
        .map_or_else(|| "none".to_string(), |d| d.to_string());
    println!(
        "strategy={} bijection={} min_chebyshev={} violations={}",
        strategy, audit.is_bijection, min, audit.violations
    );
    if let Some(p) = dump {
        mapping.write_csv(BufWriter::new(fs::File::create(p)?))?;
    }
    if audit.is_bijection && audit.violations == 0 {
        Ok(())
    } else {
        Err(Error::Construction {
            residual: audit.violations,
            passes: 0,
        }
        .into())
    }
}
