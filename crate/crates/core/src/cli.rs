//! Command-line interface: `precompute`, `train`, `eval`, `bd` and `sweep`.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial success (skipped images or
//! failed sweep jobs), 3 BD curves without overlap.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::compress::{load_checkpoint, Model, ModelSpec};
use crate::data::{ingest, load_samples, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, bd_metric, bd_rate, io as mio};
use crate::plot::write_plots;
use crate::textloss::TextTerm;
use crate::textpipe::{BoxFileDetector, GlyphTemplateRecognizer, InkDetector, TextDetector};
use crate::trainer::{run_sweep, train, JobStatus, SweepPlan, TrainOptions};
use crate::types::{MetricKind, RDCurve, TrainConfig};

/// Environment variable that overrides every cache directory.
pub const CACHE_ENV: &str = "TEXTCOMP_CACHE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_NO_OVERLAP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "textcomp", version, about = "Text-aware learned image compression toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect, recognize and cache text regions for a directory of images.
    Precompute(PrecomputeArgs),
    /// Train a codec from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a directory of images.
    Eval(EvalArgs),
    /// Bjontegaard delta between two curve files.
    Bd(BdArgs),
    /// Train and evaluate every (lambda, kappa) pair of a run config.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub split: Split,
    #[arg(long, default_value_t = 14.2)]
    pub m_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_max: f64,
    /// Directory of `<image_id>.json` box files from an external detector.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `train.kappa`.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Leave the recognizer out of training entirely.
    #[arg(long)]
    pub no_text: bool,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BdMetric {
    Rate,
    Cer,
    Wer,
    Psnr,
}

#[derive(Debug, Args)]
pub struct BdArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum)]
    pub metric: BdMetric,
    #[arg(long)]
    pub out: PathBuf,
    /// Quality axis for `--metric rate`.
    #[arg(long, default_value = "psnr")]
    pub quality: MetricKind,
    /// Curve label to pick when a file holds several curves of one metric.
    #[arg(long)]
    pub reference_label: Option<String>,
    #[arg(long)]
    pub target_label: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

fn default_model() -> ModelSpec {
    ModelSpec::default()
}

/// Run configuration file (TOML). Relative paths are resolved against the
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Training images.
    pub data: PathBuf,
    /// Test images, used by `sweep`.
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    pub cache: PathBuf,
    pub out: PathBuf,
    /// Box files from an external detector instead of the built-in one.
    #[serde(default)]
    pub boxes: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.into()),
            _ => e.into(),
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [Some(&mut cfg.data), cfg.test_data.as_mut(), Some(&mut cfg.cache), Some(&mut cfg.out), cfg.boxes.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok((cfg, text))
    }

    fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn split_dir(cache: &Path, split: Split) -> PathBuf {
    cache.join(match split {
        Split::Train => "train",
        Split::Test => "test",
    })
}

/// Manifest path for `split` under a cache root.
pub fn manifest_path(cache: &Path, split: Split) -> PathBuf {
    cache.join(match split {
        Split::Train => "manifest-train.json",
        Split::Test => "manifest-test.json",
    })
}

fn detector(boxes: &Option<PathBuf>) -> Box<dyn TextDetector + Sync> {
    match boxes {
        Some(dir) => Box::new(BoxFileDetector { dir: dir.clone() }),
        None => Box::new(InkDetector::default()),
    }
}

struct Ctx {
    cache_override: Option<PathBuf>,
}

impl Ctx {
    fn cache(&self, given: &Path) -> PathBuf {
        self.cache_override.clone().unwrap_or_else(|| given.to_path_buf())
    }
}

/// Ingests `data` into `<cache>/<split>/` and writes the manifest next to it.
fn precompute_split(
    data: &Path,
    cache: &Path,
    split: Split,
    boxes: &Option<PathBuf>,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<(DatasetManifest, PathBuf)> {
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let manifest = ingest(data, split, &split_dir(cache, split), detector(boxes).as_ref(), &rec, cfg, jobs)?;
    if manifest.entries.is_empty() && manifest.excluded.is_empty() && manifest.skipped.is_empty() {
        return Err(Error::Config(format!("no images found in {}", data.display())));
    }
    let path = manifest_path(cache, split);
    manifest.save(&path)?;
    Ok((manifest, path))
}

fn cmd_precompute(ctx: &Ctx, a: &PrecomputeArgs) -> Result<i32> {
    let cfg = TrainConfig { m_min: a.m_min, sigma_max: a.sigma_max, ..Default::default() };
    if a.m_min.is_nan() || a.sigma_max.is_nan() {
        return Err(Error::Config("filter thresholds must not be NaN".into()));
    }
    let (manifest, path) = precompute_split(&a.data, &ctx.cache(&a.cache), a.split, &a.boxes, &cfg, a.jobs)?;
    println!("{}", path.display());
    eprintln!(
        "{} images kept, {} excluded, {} skipped",
        manifest.entries.len(),
        manifest.excluded.len(),
        manifest.skipped.len()
    );
    Ok(if manifest.skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn prepare_out(cfg: &RunConfigFile, verbatim: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), verbatim)?;
    fs::write(cfg.out.join("effective-config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<i32> {
    let (mut cfg, verbatim) = RunConfigFile::load(&a.config)?;
    cfg.cache = ctx.cache(&cfg.cache);
    if let Some(k) = a.kappa {
        cfg.train.kappa = k;
        cfg.train.validate()?;
    }
    prepare_out(&cfg, &verbatim)?;
    let (manifest, _) = precompute_split(&cfg.data, &cfg.cache, Split::Train, &cfg.boxes, &cfg.train, a.jobs)?;
    let samples = load_samples(&manifest, &split_dir(&cfg.cache, Split::Train))?;
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let mut model = Model::from_spec(&cfg.model, cfg.train.seed)?;
    let text = if a.no_text { TextTerm::Disabled } else { TextTerm::Enabled };
    let opts = TrainOptions { out_dir: cfg.out.clone(), resume: a.resume.clone(), text };
    let outcome = train(&cfg.train, &samples, &mut model, &rec, &opts)?;
    println!("{}", outcome.state.checkpoint.display());
    if let Some(last) = outcome.state.last {
        eprintln!("{} steps; last total loss {:.6}", outcome.state.step, last.total);
    }
    Ok(EXIT_OK)
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let cache = ctx.cache(&a.cache);
    let (manifest, _) = precompute_split(&a.data, &cache, Split::Test, &a.boxes, &ck.config, a.jobs)?;
    let samples = load_samples(&manifest, &split_dir(&cache, Split::Test))?;
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let records = crate::trainer::evaluate(&model, &samples, &rec, a.jobs)?;
    let summary = metrics::aggregate(&records);
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    mio::write_results_csv(&a.out, &records, summary.as_ref())?;
    println!("{}", a.out.display());
    if let Some(s) = summary {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "{} images: bpp {:.4}, psnr {:.2} dB, cer {}, wer {}",
            s.images,
            s.mean_bpp,
            s.mean_psnr,
            opt(s.mean_cer),
            opt(s.mean_wer)
        );
    }
    Ok(if manifest.skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn pick_curve(path: &Path, metric: MetricKind, label: &Option<String>) -> Result<RDCurve> {
    let mut found: Vec<RDCurve> = mio::read_curves_csv(path)?
        .into_iter()
        .filter(|c| c.metric == metric && label.as_ref().is_none_or(|l| *l == c.label))
        .collect();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(Error::InvalidCurve(format!("no {metric} curve in {}", path.display()))),
        n => Err(Error::InvalidCurve(format!("{n} {metric} curves in {}; choose one with a label flag", path.display()))),
    }
}

fn cmd_bd(a: &BdArgs) -> Result<i32> {
    let (quality, name) = match a.metric {
        BdMetric::Rate => (a.quality, "rate"),
        BdMetric::Cer => (MetricKind::Cer, "cer"),
        BdMetric::Wer => (MetricKind::Wer, "wer"),
        BdMetric::Psnr => (MetricKind::Psnr, "psnr"),
    };
    let reference = pick_curve(&a.reference, quality, &a.reference_label)?;
    let target = pick_curve(&a.target, quality, &a.target_label)?;
    let result = match a.metric {
        BdMetric::Rate => bd_rate(&reference, &target)?,
        _ => bd_metric(&reference, &target, quality)?,
    };
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    mio::BDReport::new(&reference, &target, name, &result).write(&a.out)?;
    match result.value {
        Some(v) => {
            println!("BD-{}: {v:.4}%", name.to_uppercase());
            Ok(EXIT_OK)
        }
        None => {
            eprintln!("curves do not overlap on the integration axis");
            Ok(EXIT_NO_OVERLAP)
        }
    }
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<i32> {
    let (mut cfg, verbatim) = RunConfigFile::load(&a.config)?;
    cfg.cache = ctx.cache(&cfg.cache);
    let plan = cfg.sweep.clone().ok_or_else(|| Error::Config("missing [sweep] table".into()))?;
    let test_data = cfg.test_data.clone().ok_or_else(|| Error::Config("missing key `test_data`".into()))?;
    prepare_out(&cfg, &verbatim)?;
    let (train_m, _) = precompute_split(&cfg.data, &cfg.cache, Split::Train, &cfg.boxes, &cfg.train, a.jobs)?;
    let (test_m, _) = precompute_split(&test_data, &cfg.cache, Split::Test, &cfg.boxes, &cfg.train, a.jobs)?;
    let train_set = load_samples(&train_m, &split_dir(&cfg.cache, Split::Train))?;
    let test_set = load_samples(&test_m, &split_dir(&cfg.cache, Split::Test))?;
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let manifest = run_sweep(&plan, &cfg.train, &cfg.model, &train_set, &test_set, &rec, &cfg.out, a.jobs)?;
    let curves = manifest.curves();
    if !curves.is_empty() {
        write_plots(&curves, &cfg.out)?;
    }
    println!("{}", cfg.out.join("sweep.json").display());
    let failed = manifest.jobs.iter().filter(|j| matches!(j.status, JobStatus::Failed { .. })).count();
    eprintln!("{} jobs, {failed} failed, {} curves", manifest.jobs.len(), curves.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

/// Parses `args` (including the program name) and runs the command, with
/// `cache_override` replacing every cache directory.
pub fn run_with<I, T>(args: I, cache_override: Option<PathBuf>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    let ctx = Ctx { cache_override };
    let result = match &cli.command {
        Command::Precompute(a) => cmd_precompute(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Bd(a) => cmd_bd(a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

/// Runs with the process arguments and the cache override from the environment.
pub fn run() -> i32 {
    run_with(std::env::args_os(), std::env::var_os(CACHE_ENV).map(PathBuf::from))
}
