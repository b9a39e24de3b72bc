//! Renders a synthetic text image, detects and recognizes its words, and
//! stores the region cache.
//!
//! cargo run --example build_cache -- [out-dir]

use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::metrics::decode_logits;
use textcomp::textpipe::{build_cache, load_cache, save_cache, GlyphTemplateRecognizer, InkDetector, TextRecognizer};
use textcomp::types::TrainConfig;

fn main() -> textcomp::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("textcomp-cache").display().to_string());
    let words = random_words(5, 5, 7);
    let img = synth_text_image(&words, (64, 256), 7)?;
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let entry = build_cache(&img.image, "demo", &InkDetector::default(), &rec, &TrainConfig::default())?;

    println!("rendered: {}", words.join(" "));
    for r in &entry.records {
        let b = r.bbox;
        let text = decode_logits(&r.logits, rec.charset());
        println!("  box ({:3},{:3})-({:3},{:3})  retained={:<5}  read {text:?}", b.x0, b.y0, b.x1, b.y1, r.retained);
    }
    let dir = save_cache(&entry, out.as_ref())?;
    assert_eq!(load_cache(out.as_ref(), "demo")?, entry);
    println!("cache written to {}", dir.display());
    Ok(())
}
