mod common;

use std::path::Path;

use common::{smoke_set, TINY};
use textcomp::compress::{load_checkpoint, CompressionModel, Model};
use textcomp::data::Sample;
use textcomp::textloss::TextTerm;
use textcomp::textpipe::GlyphTemplateRecognizer;
use textcomp::trainer::{train, TrainOptions, TrainOutcome};
use textcomp::types::TrainConfig;

fn config(kappa: f64, steps: usize) -> TrainConfig {
    TrainConfig { kappa, lr: 5e-3, batch_size: 2, epochs: 0, seed: 11, max_steps: Some(steps), ..TrainConfig::default() }
}

fn run(cfg: &TrainConfig, data: &[Sample], out: &Path, text: TextTerm, resume: Option<&Path>) -> (TrainOutcome, Model) {
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let mut model = Model::from_spec(&TINY, cfg.seed).unwrap();
    let opts = TrainOptions { out_dir: out.to_path_buf(), resume: resume.map(Path::to_path_buf), text };
    (train(cfg, data, &mut model, &rec, &opts).unwrap(), model)
}

fn param_bits(model: &Model) -> Vec<u64> {
    model.params().values().iter().flat_map(|t| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn zero_kappa_matches_the_text_free_baseline() {
    let data = smoke_set(4, 100);
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(0.0, 8);
    let (a, ma) = run(&cfg, &data, &dir.path().join("a"), TextTerm::Enabled, None);
    let (b, mb) = run(&cfg, &data, &dir.path().join("b"), TextTerm::Disabled, None);
    assert_eq!(param_bits(&ma), param_bits(&mb));
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!(x.total, y.total);
        assert_eq!(y.text, 0.0);
    }
}

#[test]
fn resuming_halfway_replays_the_second_half() {
    let data = smoke_set(4, 200);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 25, ..config(0.1, 50) };
    let (full, model_full) = run(&cfg, &data, &dir.path().join("full"), TextTerm::Enabled, None);
    let half = dir.path().join("full").join("step-000025.bin");
    assert_eq!(load_checkpoint(&half).unwrap().step, 25);
    let (resumed, model_resumed) = run(&cfg, &data, &dir.path().join("resumed"), TextTerm::Enabled, Some(&half));
    assert_eq!(resumed.state.step, 50);
    assert_eq!(resumed.trace, full.trace[25..]);
    assert_eq!(param_bits(&model_resumed), param_bits(&model_full));
}

#[test]
fn kappa_only_changes_the_total_at_step_zero() {
    let data = smoke_set(4, 300);
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = run(&config(0.0, 1), &data, &dir.path().join("a"), TextTerm::Enabled, None);
    let (b, _) = run(&config(0.1, 1), &data, &dir.path().join("b"), TextTerm::Enabled, None);
    let (x, y) = (&a.trace[0], &b.trace[0]);
    assert_eq!((x.rate_y, x.rate_z, x.distortion, x.text), (y.rate_y, y.rate_z, y.distortion, y.text));
    assert!(x.text > 0.0);
    assert!(((y.total - x.total) - 0.1 * x.text).abs() <= 1e-6 * y.total);
}
