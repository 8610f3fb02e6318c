//! The `ctwindow` command line.
//!
//! Each subcommand is a plain function over its parsed arguments so the
//! binary stays a thin shell and the commands can be driven from tests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::augment::{augment_pair, AugmentConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, multi_label_dice, DiceRecord};
use crate::rng;
use crate::simulation::{
    fit_band_segmenter, generate_phantom, reference_phantom, run_shift_sweep, subject_phantom, PhantomConfig,
    SweepResult,
};
use crate::stats::{self, ComparisonMetadata, CompareSettings};
use crate::volume::{
    extract_label_slice, extract_slice, load_labels, load_volume, save_labels, save_volume, stack_label_slices,
    stack_slices,
};
use crate::windowing::{apply_window, testing_window, training_window, Strategy, SwnParams, WindowSampler};

/// Environment variable capping the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "CTWINDOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ctwindow", version, about = "CT tissue-window normalization and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a CT volume slice by slice.
    Window(WindowArgs),
    /// Per-label Dice between a predicted and a reference label volume.
    Dice(DiceArgs),
    /// Paired comparison of per-subject Dice tables against a reference method.
    Compare(CompareArgs),
    /// Phantom intensity-shift robustness sweep from a run config.
    Sweep(SweepArgs),
    /// Generate a synthetic phantom and its labels.
    Phantom(PhantomArgs),
    /// Spatially augment an image/label volume pair slice by slice.
    Augment(AugmentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Input CT volume header (`.ctv.json`).
    #[arg(long)]
    pub input: PathBuf,
    /// Output header path; a float32 volume is written.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "STN", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// SWN level standard deviation (HU).
    #[arg(long)]
    pub x: Option<f64>,
    /// SWN width standard deviation (HU).
    #[arg(long)]
    pub y: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Test)]
    pub mode: Mode,
    /// Slicing axis.
    #[arg(long, default_value_t = 2)]
    pub axis: usize,
}

#[derive(Debug, Args)]
pub struct DiceArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated label ids; defaults to every named organ in the truth.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<u8>>,
    /// Subject id written to the table; defaults to the truth file stem.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `METHOD=path.csv`, repeated once per method.
    #[arg(long = "table", value_parser = parse_table, required = true)]
    pub tables: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub reference: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 12)]
    pub m: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run config JSON; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV; overrides `output` in the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom config JSON; defaults to the reference three-organ phantom.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Augmentation config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_image: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_table(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected METHOD=path, got `{s}`")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// One applied window, printed as a JSON line.
#[derive(Debug, Serialize)]
struct AppliedWindow {
    axis: usize,
    index: usize,
    level: f32,
    half_width: f32,
}

/// Normalize a volume; one JSON line per slice describing its window goes to `log`.
pub fn cmd_window(args: &WindowArgs, log: &mut dyn Write) -> Result<()> {
    let volume = load_volume(&args.input)?;
    let mut sampler = match (args.mode, args.strategy) {
        (Mode::Train, Strategy::Swn) => {
            let (x, y) = args
                .x
                .zip(args.y)
                .ok_or_else(|| Error::Config("SWN training needs --x and --y".into()))?;
            Some(WindowSampler::new(SwnParams::new(x, y, args.seed)?)?)
        }
        _ => None,
    };
    let extent = *volume.dims().get(args.axis).ok_or(Error::InvalidAxis(args.axis))?;
    let mut slices = Vec::with_capacity(extent);
    for index in 0..extent {
        let window = match args.mode {
            Mode::Train => training_window(args.strategy, sampler.as_mut())?,
            Mode::Test => testing_window(args.strategy),
        };
        let line = AppliedWindow {
            axis: args.axis,
            index,
            level: window.level(),
            half_width: window.half_width(),
        };
        writeln!(log, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io("<stdout>", e))?;
        slices.push(apply_window(&extract_slice(&volume, args.axis, index)?, window));
    }
    let out = stack_slices(args.axis, &slices, volume.spacing())?;
    save_volume(&out, &args.output)?;
    let check = load_volume(&args.output)?;
    if check.dims() != volume.dims() {
        return Err(Error::DimsMismatch(check.dims().to_vec(), volume.dims().to_vec()));
    }
    Ok(())
}

fn subject_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".ctv.json").unwrap_or(&name).to_string()
}

pub fn cmd_dice(args: &DiceArgs) -> Result<Vec<DiceRecord>> {
    let pred = load_labels(&args.pred)?;
    let truth = load_labels(&args.truth)?;
    let labels = args.labels.clone().unwrap_or_else(|| truth.organ_ids());
    let subject = args.subject.clone().unwrap_or_else(|| subject_from_path(&args.truth));
    let records = multi_label_dice(&subject, &pred, &truth, &labels)?;
    metrics::write_dice_csv(&args.output, &records)?;
    Ok(records)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<stats::ComparisonRow>> {
    let mut tables = BTreeMap::new();
    for (name, path) in &args.tables {
        if tables.insert(name.clone(), metrics::read_dice_csv(path)?).is_some() {
            return Err(Error::Config(format!("method `{name}` given twice")));
        }
    }
    let settings = CompareSettings {
        alpha: args.alpha,
        m: args.m,
    };
    let rows = stats::compare_methods(&tables, &args.reference, settings)?;
    stats::write_comparison_csv(&args.output, &rows, &ComparisonMetadata::new(&args.reference, settings))?;
    Ok(rows)
}

/// Generate phantoms, fit one band segmenter per strategy, and sweep.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let make = |i: usize| generate_phantom(&subject_phantom(&cfg.phantom, cfg.seed, i as u64, cfg.jitter));
    let train = (0..cfg.train_subjects).map(make).collect::<Result<Vec<_>>>()?;
    let test = (cfg.train_subjects..cfg.train_subjects + cfg.test_subjects)
        .map(make)
        .collect::<Result<Vec<_>>>()?;
    let shifts = cfg.shifts.values()?;
    let mut result = SweepResult::default();
    for (k, spec) in cfg.strategies.iter().enumerate() {
        let swn = spec.swn_params(cfg.swn_seed(k))?;
        let seg = fit_band_segmenter(&train, spec.strategy, swn, cfg.epochs, &cfg.band)?;
        for b in &seg.bands {
            info!("{spec}: band {} [{:.2}, {:.2}] median {:.2}", b.label_name, b.lo, b.hi, b.median);
        }
        let rows = run_shift_sweep(&seg, &test, spec.strategy, &shifts)?;
        result.extend(rows.with_strategy_name(&spec.to_string()));
    }
    Ok(result)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepResult> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output path (use --output or `output` in the config)".into()))?;
    let result = run_sweep(&cfg)?;
    result.write_csv(&output)?;
    Ok(result)
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<()> {
    let mut cfg: PhantomConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => reference_phantom(15.0),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (image, labels) = generate_phantom(&cfg)?;
    save_volume(&image, &args.image)?;
    save_labels(&labels, &args.labels)?;
    load_volume(&args.image)?;
    load_labels(&args.labels)?;
    Ok(())
}

/// Augment every axial slice with one stream seeded from the config.
pub fn cmd_augment(args: &AugmentArgs) -> Result<()> {
    let mut cfg: AugmentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => AugmentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let image = load_volume(&args.image)?;
    let labels = load_labels(&args.labels)?;
    labels.check_aligned(&image)?;
    let mut stream = rng::stream(cfg.seed);
    let mut out_img = Vec::new();
    let mut out_lab = Vec::new();
    for z in 0..image.dims()[2] {
        let (a, b) = augment_pair(
            &extract_slice(&image, 2, z)?,
            &extract_label_slice(&labels, 2, z)?,
            &cfg,
            &mut stream,
        )?;
        out_img.push(a);
        out_lab.push(b);
    }
    let mut names = labels.label_names().clone();
    names
        .entry(cfg.pad_value_label)
        .or_insert_with(|| format!("label_{}", cfg.pad_value_label));
    save_volume(&stack_slices(2, &out_img, image.spacing())?, &args.out_image)?;
    save_labels(
        &stack_label_slices(2, &out_lab, labels.spacing(), names)?,
        &args.out_labels,
    )?;
    Ok(())
}

/// Run a parsed command, writing window logs to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Window(a) => cmd_window(a, stdout),
        Command::Dice(a) => cmd_dice(a).map(|_| ()),
        Command::Compare(a) => cmd_compare(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Augment(a) => cmd_augment(a),
    }
}

/// Worker count from [`THREADS_ENV`]; `None` means automatic.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}
