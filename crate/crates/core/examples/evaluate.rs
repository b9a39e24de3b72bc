//! Per-image bpp, PSNR, CER and WER for a lossless codec and an untrained one.
//!
//! cargo run --example evaluate

use textcomp::compress::{IdentityCodec, Model, ModelSpec};
use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::data::Sample;
use textcomp::metrics::aggregate;
use textcomp::textpipe::{build_cache, GlyphTemplateRecognizer, InkDetector};
use textcomp::trainer::evaluate;
use textcomp::types::TrainConfig;

fn main() -> textcomp::Result<()> {
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let samples = (0..4u64)
        .map(|i| {
            let image = synth_text_image(&random_words(5, 5, 40 + i), (64, 256), 40 + i)?.image;
            let cache = build_cache(&image, &format!("img-{i}"), &InkDetector::default(), &rec, &TrainConfig::default())?;
            Ok(Sample { image_id: format!("img-{i}"), image, cache })
        })
        .collect::<textcomp::Result<Vec<_>>>()?;

    let lossless = IdentityCodec::new(24.0)?;
    let untrained = Model::from_spec(&ModelSpec::default(), 0)?;
    for (name, records) in [("identity", evaluate(&lossless, &samples, &rec, 0)?), ("untrained", evaluate(&untrained, &samples, &rec, 0)?)] {
        println!("{name}");
        for r in &records {
            println!("  {}  bpp {:6.3}  psnr {:6.2}  cer {:?}  wer {:?}", r.image_id, r.bpp, r.psnr, r.cer, r.wer);
        }
        if let Some(s) = aggregate(&records) {
            println!("  mean bpp {:.3}, psnr {:.2}, cer {:?}, wer {:?}", s.mean_bpp, s.mean_psnr, s.mean_cer, s.mean_wer);
        }
    }
    Ok(())
}
