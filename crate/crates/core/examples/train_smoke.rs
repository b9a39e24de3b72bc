//! Trains the reference codec for a few steps with and without the text term.
//!
//! cargo run --release --example train_smoke -- [steps]

use textcomp::compress::{HyperpriorCodec, Model};
use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::data::Sample;
use textcomp::textpipe::{build_cache, GlyphTemplateRecognizer, InkDetector};
use textcomp::trainer::{train, TrainOptions};
use textcomp::types::TrainConfig;

fn main() -> textcomp::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let data = (0..8u64)
        .map(|i| {
            let image = synth_text_image(&random_words(6, 5, i), (64, 256), i)?.image;
            let cache = build_cache(&image, &format!("img-{i}"), &InkDetector::default(), &rec, &TrainConfig::default())?;
            Ok(Sample { image_id: format!("img-{i}"), image, cache })
        })
        .collect::<textcomp::Result<Vec<_>>>()?;

    let out = std::env::temp_dir().join("textcomp-train-smoke");
    for kappa in [0.0, 0.1] {
        let cfg = TrainConfig { kappa, lr: 2e-3, batch_size: 4, epochs: 0, max_steps: Some(steps), ..TrainConfig::default() };
        let mut model = Model::from_spec(&HyperpriorCodec::DEFAULT_SPEC, 0)?;
        let opts = TrainOptions { out_dir: out.join(format!("kappa-{kappa}")), ..TrainOptions::default() };
        let run = train(&cfg, &data, &mut model, &rec, &opts)?;
        let (first, last) = (&run.trace[0], run.trace.last().unwrap());
        println!(
            "kappa {kappa}: total {:.2} -> {:.2}, text {:.1} -> {:.1}, checkpoint {}",
            first.total,
            last.total,
            first.text,
            last.text,
            run.state.checkpoint.display()
        );
    }
    Ok(())
}
