mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::{p, textcomp, SMOKE_SIZE};
use textcomp::compress::{save_checkpoint, Checkpoint, IdentityCodec};
use textcomp::data::{save_image, write_synth_dataset, DatasetManifest};
use textcomp::metrics::io::{read_results_csv, write_curves_csv};
use textcomp::trainer::read_trace;
use textcomp::types::{ImageArray, MetricKind, RDCurve, RDPoint, TrainConfig};

fn dataset(root: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let dir = root.join(name);
    write_synth_dataset(&dir, count, 6, SMOKE_SIZE, seed).unwrap();
    dir
}

fn load_manifest(stdout: &str) -> DatasetManifest {
    DatasetManifest::load(Path::new(stdout.trim())).unwrap()
}

#[test]
fn precompute_writes_one_entry_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "imgs", 3, 1);
    let cache = dir.path().join("cache");
    let run = textcomp(&["precompute", "--data", p(&data), "--cache", p(&cache), "--split", "test"], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let m = load_manifest(&run.stdout);
    assert_eq!(m.entries.len(), 3);
    assert!(m.entries.iter().all(|e| e.retained_region_count > 0));
}

#[test]
fn precompute_on_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let run = textcomp(&["precompute", "--data", p(&empty), "--cache", p(&dir.path().join("c")), "--split", "train"], None);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("no images found"), "{}", run.stderr);
}

#[test]
fn infinite_median_threshold_excludes_every_train_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "imgs", 2, 2);
    let cache = dir.path().join("cache");
    let run = textcomp(&["precompute", "--data", p(&data), "--cache", p(&cache), "--split", "train", "--m-min", "inf"], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let m = load_manifest(&run.stdout);
    assert!(m.entries.is_empty());
    assert_eq!(m.excluded.len(), 2);
    assert!(m.excluded.iter().all(|e| e.retained_region_count == 0));
}

#[test]
fn cache_environment_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "imgs", 1, 3);
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    let run = textcomp(&["precompute", "--data", p(&data), "--cache", p(&flag), "--split", "test"], Some(&env));
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(Path::new(run.stdout.trim()).starts_with(&env));
    assert!(!flag.exists());
}

fn write_config(root: &Path, extra: &str) -> PathBuf {
    let path = root.join("run.toml");
    fs::write(
        &path,
        format!(
            "data = \"train\"\ncache = \"cache\"\nout = \"run\"\n\n\
             [model]\nkind = \"hyperprior\"\nchannels = 4\nlatent = 4\nhyper = 2\n\n\
             [train]\nlr = 0.01\nbatch_size = 2\nepochs = 0\nmax_steps = 12\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_writes_a_checkpoint_and_a_falling_trace() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), "train", 4, 4);
    let config = write_config(dir.path(), "");
    let run = textcomp(&["train", "--config", p(&config), "--jobs", "1"], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(Path::new(run.stdout.trim()).is_file());
    let out = dir.path().join("run");
    for f in ["config.toml", "effective-config.toml", "trace.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let trace = read_trace(&out.join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 12);
    let mean = |r: &[textcomp::trainer::TraceRow]| r.iter().map(|t| t.total).sum::<f64>() / r.len() as f64;
    assert!(mean(&trace[8..]) < mean(&trace[..4]));
}

#[test]
fn malformed_config_names_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), "train", 1, 5);
    let config = write_config(dir.path(), "learning_rate = 0.1\n");
    let run = textcomp(&["train", "--config", p(&config)], None);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("learning_rate"), "{}", run.stderr);
}

fn identity_checkpoint(root: &Path) -> PathBuf {
    let path = root.join("identity.bin");
    let ck = Checkpoint::from_model(&IdentityCodec::new(2.0).unwrap(), &TrainConfig::default());
    save_checkpoint(&path, &ck).unwrap();
    path
}

#[test]
fn eval_of_the_identity_codec_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "test", 2, 6);
    save_image(&ImageArray::filled(SMOKE_SIZE.0, SMOKE_SIZE.1, 1.0).unwrap(), &data.join("blank.png")).unwrap();
    let ck = identity_checkpoint(dir.path());
    let out = dir.path().join("eval/results.csv");
    let cache = dir.path().join("cache");
    let run = textcomp(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--cache", p(&cache), "--out", p(&out)], None);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let records = read_results_csv(&out).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r.bpp, 2.0);
        assert_eq!(r.psnr, 99.0);
        if r.image_id == "blank" {
            assert_eq!((r.cer, r.wer), (None, None));
        } else {
            assert_eq!((r.cer, r.wer), (Some(0.0), Some(0.0)), "{}", r.image_id);
        }
    }
    assert!(fs::read_to_string(&out).unwrap().lines().count() == 5);
}

#[test]
fn eval_with_a_missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "test", 1, 7);
    let run = textcomp(
        &["eval", "--checkpoint", p(&dir.path().join("nope.bin")), "--data", p(&data), "--cache", p(&dir.path().join("c")), "--out", p(&dir.path().join("r.csv"))],
        None,
    );
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("nope.bin"), "{}", run.stderr);
}

fn curves_file(path: &Path, bpp_scale: f64, bpp_offset: f64) -> PathBuf {
    let pts = (1..=4).map(|i| RDPoint { bpp: bpp_offset + 0.1 * i as f64 * bpp_scale, value: 22.0 + 2.5 * i as f64 }).collect();
    write_curves_csv(path, &[RDCurve::new("c", MetricKind::Psnr, pts).unwrap()]).unwrap();
    path.to_path_buf()
}

fn bd(reference: &Path, target: &Path, out: &Path) -> common::Run {
    textcomp(&["bd", "--reference", p(reference), "--target", p(target), "--metric", "rate", "--quality", "psnr", "--out", p(out)], None)
}

#[test]
fn bd_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = curves_file(&dir.path().join("a.csv"), 1.0, 0.0);
    let out = dir.path().join("bd.json");
    let run = bd(&c, &c, &out);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout.trim(), "BD-RATE: 0.0000%");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["valid"], true);
}

#[test]
fn bd_of_doubled_rate_is_plus_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let a = curves_file(&dir.path().join("a.csv"), 1.0, 0.0);
    let b = curves_file(&dir.path().join("b.csv"), 2.0, 0.0);
    let run = bd(&a, &b, &dir.path().join("bd.json"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout.trim(), "BD-RATE: 100.0000%");
}

#[test]
fn bd_without_overlap_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let a = curves_file(&dir.path().join("a.csv"), 1.0, 0.0);
    let b = dir.path().join("b.csv");
    let pts = (1..=4).map(|i| RDPoint { bpp: 0.1 * i as f64, value: 40.0 + i as f64 }).collect();
    write_curves_csv(&b, &[RDCurve::new("c", MetricKind::Psnr, pts).unwrap()]).unwrap();
    let out = dir.path().join("bd.json");
    let run = bd(&a, &b, &out);
    assert_eq!(run.code, 3, "{}", run.stderr);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["valid"], false);
}
