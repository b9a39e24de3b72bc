//! Training loop, evaluation and lambda/kappa sweeps.
//!
//! Randomness is keyed by position rather than drawn from a running stream:
//! the epoch order depends on `(seed, epoch)` and quantization noise on
//! `(seed, step, image)`. A run resumed from a checkpoint at step `s`
//! therefore replays steps `s..` exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::compress::{
    bpp, load_checkpoint, save_checkpoint, Checkpoint, CompressionModel, Model, ModelSpec, ParamSet, Quantization,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{self, decode_logits, io as mio, EditCounts, Summary};
use crate::textloss::{crop_image, total_loss, BatchItem, TextTerm, TotalLossBreakdown};
use crate::textpipe::TextRecognizer;
use crate::types::{clamp_image, EvalRecord, MetricKind, RDCurve, RDPoint, TrainConfig};

pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
/// Epoch window of the convergence test.
pub const CONVERGENCE_WINDOW: usize = 5;
/// Relative change of the epoch-mean loss above which training is extended.
pub const CONVERGENCE_TOL: f64 = 0.01;

/// Adam with bias correction; state lives in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamSet,
    pub v: ParamSet,
    /// Updates applied so far.
    pub t: usize,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self { lr, beta1: Self::BETA1, beta2: Self::BETA2, eps: Self::EPS, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[crate::autodiff::Tensor<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in
            params.values_mut().iter_mut().zip(grads).zip(self.m.values_mut().iter_mut()).zip(self.v.values_mut().iter_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// One row of the loss trace: the objective evaluated before update `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub rate_y: f64,
    pub rate_z: f64,
    pub distortion: f64,
    pub text: f64,
    pub total: f64,
}

impl TraceRow {
    fn new(step: usize, b: &TotalLossBreakdown) -> Self {
        Self { step, rate_y: b.rate_y, rate_z: b.rate_z, distortion: b.distortion, text: b.text, total: b.total }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["step", "rate_y", "rate_z", "distortion", "text", "total"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::NotFound(path.into()),
        _ => e.into(),
    })?;
    rdr.deserialize().map(|r| r.map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })).collect()
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Checkpoint to continue from; its parameters and optimizer state replace the model's.
    pub resume: Option<PathBuf>,
    pub text: TextTerm,
}

/// Where a run ended.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Optimizer steps taken.
    pub step: usize,
    /// Epochs started.
    pub epoch: usize,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub last: Option<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: Vec<TraceRow>,
    /// Whether the extension epochs were granted.
    pub extended: bool,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Image order for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0x5348_5546, epoch as u64)));
    idx
}

/// Quantization noise seed for image `k` of step `step`.
pub fn noise_seed(seed: u64, step: usize, k: usize) -> u64 {
    mix(seed, step as u64 + 1, k as u64 + 1)
}

/// Mean total loss per epoch over complete epochs in `trace`.
fn epoch_means(trace: &[TraceRow], per_epoch: usize, epochs: usize) -> Vec<f64> {
    (0..epochs)
        .filter_map(|e| {
            let rows: Vec<f64> = trace.iter().filter(|r| r.step / per_epoch == e).map(|r| r.total).collect();
            (rows.len() == per_epoch).then(|| rows.iter().sum::<f64>() / per_epoch as f64)
        })
        .collect()
}

/// True when the epoch-mean loss moved by more than [`CONVERGENCE_TOL`]
/// (relative) over the last [`CONVERGENCE_WINDOW`] epochs.
pub fn needs_extension(epoch_means: &[f64]) -> bool {
    let n = epoch_means.len();
    if n < 2 {
        return false;
    }
    let window = CONVERGENCE_WINDOW.min(n - 1);
    let (old, new) = (epoch_means[n - 1 - window], epoch_means[n - 1]);
    ((new - old) / old.abs().max(f64::MIN_POSITIVE)).abs() > CONVERGENCE_TOL
}

/// Minimizes the batch objective over `dataset` with Adam. Writes
/// `trace.csv`, periodic `step-NNNNNN.bin` checkpoints and a final
/// `checkpoint.bin` under `opts.out_dir`. A non-finite loss stops the run
/// with [`Error::Divergence`], leaving earlier checkpoints untouched.
pub fn train<M, R>(
    cfg: &TrainConfig,
    dataset: &[Sample],
    model: &mut M,
    recognizer: &R,
    opts: &TrainOptions,
) -> Result<TrainOutcome>
where
    M: CompressionModel,
    R: TextRecognizer<f32> + ?Sized,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    fs::create_dir_all(&opts.out_dir)?;
    let trace_path = opts.out_dir.join(TRACE_FILE);
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut trace = Vec::new();
    if let Some(path) = &opts.resume {
        let ck = load_checkpoint(path)?;
        if ck.model != model.spec() {
            return Err(Error::Config("checkpoint was written by a different model".into()));
        }
        model.params().check_layout(&ck.params)?;
        *model.params_mut() = ck.params;
        if let Some((m, v)) = ck.moments {
            adam.m = m;
            adam.v = v;
        }
        adam.t = ck.step;
        trace = match read_trace(&trace_path) {
            Ok(rows) => rows.into_iter().filter(|r| r.step < ck.step).collect(),
            Err(Error::NotFound(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
    }

    let per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let base_steps = cfg.epochs * per_epoch;
    let cap = cfg.max_steps.unwrap_or(usize::MAX);
    let mut planned = if cfg.epochs == 0 { usize::MAX } else { base_steps };
    let mut extended = false;
    let mut step = adam.t;
    let snapshot = |model: &M, adam: &Adam, step: usize| Checkpoint {
        model: model.spec(),
        params: model.params().clone(),
        moments: Some((adam.m.clone(), adam.v.clone())),
        step,
        config: cfg.clone(),
    };

    loop {
        if step >= planned.min(cap) {
            if !extended && step == base_steps && step < cap && cfg.extension_epochs > 0 {
                extended = needs_extension(&epoch_means(&trace, per_epoch, cfg.epochs));
                if extended {
                    log::info!("loss not converged after {} epochs; extending by {}", cfg.epochs, cfg.extension_epochs);
                    planned += cfg.extension_epochs * per_epoch;
                    continue;
                }
            }
            break;
        }
        let (epoch, b) = (step / per_epoch, step % per_epoch);
        let order = epoch_order(dataset.len(), cfg.seed, epoch);
        let chosen = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(order.len())];
        let batch: Vec<BatchItem> = chosen
            .iter()
            .map(|&i| BatchItem { image_id: &dataset[i].image_id, image: &dataset[i].image, cache: Some(&dataset[i].cache) })
            .collect();

        let g = Graph::<f32>::new();
        let params = model.params().bind(&g);
        let loss = total_loss(&g, &params, &batch, model, recognizer, cfg.lambda, cfg.kappa, opts.text, |k| {
            Quantization::Noise(noise_seed(cfg.seed, step, k))
        })?;
        let row = TraceRow::new(step, &loss.breakdown);
        if !row.total.is_finite() {
            write_trace(&trace_path, &trace)?;
            return Err(Error::Divergence { step });
        }
        let grads = g.backward(loss.total);
        let grads: Vec<_> = params
            .iter()
            .zip(model.params().values())
            .map(|(p, v)| grads.get(*p).map(|t| t.mapv(f64::from)).unwrap_or_else(|| ndarray::ArrayD::zeros(v.raw_dim())))
            .collect();
        if grads.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            write_trace(&trace_path, &trace)?;
            return Err(Error::Divergence { step });
        }
        drop(params);
        adam.step(model.params_mut(), &grads);
        trace.push(row);
        step += 1;
        if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
            save_checkpoint(&opts.out_dir.join(format!("step-{step:06}.bin")), &snapshot(model, &adam, step))?;
            write_trace(&trace_path, &trace)?;
        }
    }

    let checkpoint = opts.out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &snapshot(model, &adam, step))?;
    write_trace(&trace_path, &trace)?;
    let state = TrainState { step, epoch: step.div_ceil(per_epoch), seed: cfg.seed, checkpoint, last: trace.last().copied() };
    Ok(TrainOutcome { state, trace, extended })
}

/// Text of each retained region with a non-empty reading, as recognized on
/// the original (cached) and on `x_hat`.
fn region_pairs<R: TextRecognizer<f32> + ?Sized>(sample: &Sample, x_hat: &crate::types::ImageArray, recognizer: &R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for r in sample.cache.retained() {
        let reference = decode_logits(&r.logits, recognizer.charset());
        if reference.is_empty() {
            continue;
        }
        let hyp = decode_logits(&recognizer.recognize_image(&crop_image(x_hat, &r.bbox)?)?, recognizer.charset());
        out.push((reference, hyp));
    }
    Ok(out)
}

/// Evaluates one image with rounded latents.
pub fn evaluate_image<M, R>(model: &M, sample: &Sample, recognizer: &R) -> Result<EvalRecord>
where
    M: CompressionModel + ?Sized,
    R: TextRecognizer<f32> + ?Sized,
{
    let (h, w) = sample.image.shape();
    let g = Graph::<f32>::new();
    let params = model.params().bind_frozen(&g);
    let out = model.forward(&params, g.constant(sample.image.to_nchw()), Quantization::Round)?;
    let bits = out.bits_y.item() as f64 + out.bits_z.item() as f64;
    let xv = out.x_hat.value();
    let hwc = ndarray::Array3::from_shape_fn((h, w, 3), |(y, x, c)| xv[[0, c, y, x]] as f64);
    let x_hat = clamp_image(hwc)?;
    let pairs = region_pairs(sample, &x_hat, recognizer)?;
    let counts = pairs.iter().fold(EditCounts::default(), |acc, (r, h)| acc + metrics::char_edit_counts(r, h));
    Ok(EvalRecord {
        image_id: sample.image_id.clone(),
        bpp: bpp(bits, h, w)?,
        cer: metrics::cer(&counts),
        wer: metrics::wer(&pairs),
        psnr: metrics::psnr(&sample.image, &x_hat)?,
    })
}

/// Per-image records sorted by image id; `jobs` worker threads (0 = all cores).
pub fn evaluate<M, R>(model: &M, samples: &[Sample], recognizer: &R, jobs: usize) -> Result<Vec<EvalRecord>>
where
    M: CompressionModel + Sync + ?Sized,
    R: TextRecognizer<f32> + Sync + ?Sized,
{
    let mut order: Vec<&Sample> = samples.iter().collect();
    order.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| order.par_iter().map(|s| evaluate_image(model, s, recognizer)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub lambdas: Vec<f64>,
    pub kappas: Vec<f64>,
}

impl SweepPlan {
    pub fn jobs(&self) -> Vec<(f64, f64)> {
        self.kappas.iter().flat_map(|&k| self.lambdas.iter().map(move |&l| (l, k))).collect()
    }
}

pub fn curve_label(kappa: f64) -> String {
    format!("kappa={kappa}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Done,
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    pub lambda: f64,
    pub kappa: f64,
    pub dir: PathBuf,
    #[serde(flatten)]
    pub status: JobStatus,
    pub summary: Option<Summary>,
    /// Results were read back from an earlier run instead of retrained.
    #[serde(skip)]
    pub reused: bool,
}

impl SweepJob {
    /// One point per metric with a defined mean.
    pub fn points(&self) -> Vec<(MetricKind, RDPoint)> {
        let Some(s) = &self.summary else { return Vec::new() };
        [(MetricKind::Cer, s.mean_cer), (MetricKind::Wer, s.mean_wer), (MetricKind::Psnr, Some(s.mean_psnr))]
            .into_iter()
            .filter_map(|(m, v)| v.map(|value| (m, RDPoint { bpp: s.mean_bpp, value })))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: String,
}

/// Sweep manifest written as `sweep.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub model: ModelSpec,
    pub base_config: TrainConfig,
    pub optimizer: OptimizerInfo,
    pub plan: SweepPlan,
    pub jobs: Vec<SweepJob>,
}

impl SweepManifest {
    /// One curve per `(kappa, metric)` with at least three distinct rates.
    pub fn curves(&self) -> Vec<RDCurve> {
        let mut out = Vec::new();
        for &kappa in &self.plan.kappas {
            for metric in MetricKind::ALL {
                let mut pts: Vec<RDPoint> = self
                    .jobs
                    .iter()
                    .filter(|j| j.kappa == kappa)
                    .flat_map(|j| j.points())
                    .filter(|(m, _)| *m == metric)
                    .map(|(_, p)| p)
                    .collect();
                pts.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
                pts.dedup_by(|a, b| a.bpp == b.bpp);
                if let Ok(c) = RDCurve::new(curve_label(kappa), metric, pts) {
                    out.push(c);
                }
            }
        }
        out
    }
}

pub fn job_dir(out_dir: &Path, lambda: f64, kappa: f64) -> PathBuf {
    out_dir.join(format!("lambda={lambda}_kappa={kappa}"))
}

#[allow(clippy::too_many_arguments)]
fn run_job<R>(
    base: &TrainConfig,
    spec: &ModelSpec,
    lambda: f64,
    kappa: f64,
    train_set: &[Sample],
    test_set: &[Sample],
    recognizer: &R,
    dir: &Path,
) -> Result<(bool, Summary)>
where
    R: TextRecognizer<f32> + Sync + ?Sized,
{
    let results = dir.join("results.csv");
    let ckpt = dir.join(CHECKPOINT_FILE);
    if results.exists() && ckpt.exists() {
        let records = mio::read_results_csv(&results)?;
        let summary = metrics::aggregate(&records).ok_or_else(|| Error::Config("empty results".into()))?;
        return Ok((true, summary));
    }
    let cfg = TrainConfig { lambda, kappa, ..base.clone() };
    let mut model = Model::from_spec(spec, cfg.seed)?;
    train(&cfg, train_set, &mut model, recognizer, &TrainOptions { out_dir: dir.to_path_buf(), ..Default::default() })?;
    let records = evaluate(&model, test_set, recognizer, 1)?;
    let summary = metrics::aggregate(&records).ok_or_else(|| Error::Config("test set is empty".into()))?;
    mio::write_results_csv(&results, &records, Some(&summary))?;
    Ok((false, summary))
}

/// Trains and evaluates one job per `(lambda, kappa)` pair in parallel.
/// Failed jobs are recorded and the sweep continues; jobs whose results
/// already exist are reused. Writes `sweep.json` and `curves.csv`.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep<R>(
    plan: &SweepPlan,
    base: &TrainConfig,
    spec: &ModelSpec,
    train_set: &[Sample],
    test_set: &[Sample],
    recognizer: &R,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepManifest>
where
    R: TextRecognizer<f32> + Sync + ?Sized,
{
    if plan.lambdas.is_empty() || plan.kappas.is_empty() {
        return Err(Error::Config("sweep plan is empty".into()));
    }
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<SweepJob> = pool.install(|| {
        plan.jobs()
            .into_par_iter()
            .map(|(lambda, kappa)| {
                let dir = job_dir(out_dir, lambda, kappa);
                let (status, summary, reused) = match run_job(base, spec, lambda, kappa, train_set, test_set, recognizer, &dir) {
                    Ok((reused, sum)) => {
                        if reused {
                            log::info!("sweep job lambda={lambda} kappa={kappa}: reusing results");
                        }
                        (JobStatus::Done, Some(sum), reused)
                    }
                    Err(e) => {
                        log::warn!("sweep job lambda={lambda} kappa={kappa} failed: {e}");
                        (JobStatus::Failed { error: e.to_string() }, None, false)
                    }
                };
                let dir = dir.strip_prefix(out_dir).unwrap_or(&dir).to_path_buf();
                SweepJob { lambda, kappa, dir, status, summary, reused }
            })
            .collect()
    });
    let manifest = SweepManifest {
        model: spec.clone(),
        base_config: base.clone(),
        optimizer: OptimizerInfo {
            name: "adam".into(),
            lr: base.lr,
            beta1: Adam::BETA1,
            beta2: Adam::BETA2,
            eps: Adam::EPS,
            weight_decay: 0.0,
            schedule: "constant".into(),
        },
        plan: plan.clone(),
        jobs: results,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join("sweep.json"), text)?;
    mio::write_curves_csv(&out_dir.join("curves.csv"), &manifest.curves())?;
    Ok(manifest)
}
