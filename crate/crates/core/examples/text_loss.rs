//! Text logit loss of a few degraded reconstructions, with its gradient.
//!
//! cargo run --example text_loss

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcomp::autodiff::Graph;
use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::textloss::{text_logit_loss, text_logit_loss_var};
use textcomp::textpipe::{build_cache, GlyphTemplateRecognizer, InkDetector};
use textcomp::types::{ImageArray, TrainConfig};

fn main() -> textcomp::Result<()> {
    let img = synth_text_image(&random_words(4, 5, 3), (48, 192), 3)?.image;
    let rec = GlyphTemplateRecognizer::<f64>::default();
    let cache = build_cache(&img, "demo", &InkDetector::default(), &rec, &TrainConfig::default())?;
    println!("{} of {} regions retained", cache.retained_count(), cache.records.len());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for noise in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let px = img.pixels();
        let noisy = Array3::from_shape_fn(px.dim(), |i| (px[i] + rng.random_range(-noise..=noise)).clamp(0.0, 1.0));
        let t = text_logit_loss::<f64, _>(&img, &ImageArray::new(noisy)?, &cache, &rec)?;
        println!("noise {noise:.2}: T = {:10.3}", t.mean);
    }

    let blurred = ImageArray::filled(48, 192, 0.5)?;
    let g = Graph::<f64>::new();
    let x_hat = g.leaf(blurred.to_hwc());
    let loss = text_logit_loss_var(x_hat, &cache, &rec)?.mean;
    let grads = g.backward(loss);
    let grad = grads.get(x_hat).expect("gradient");
    let nonzero = grad.iter().filter(|v| **v != 0.0).count();
    println!("flat gray: T = {:.3}, {nonzero} of {} pixels receive gradient", loss.item(), grad.len());
    Ok(())
}
