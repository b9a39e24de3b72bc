//! A small (lambda, kappa) sweep with curves and plots.
//!
//! cargo run --release --example sweep -- [out-dir]

use std::path::PathBuf;

use textcomp::compress::ModelSpec;
use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::data::Sample;
use textcomp::plot::write_plots;
use textcomp::textpipe::{build_cache, GlyphTemplateRecognizer, InkDetector};
use textcomp::trainer::{run_sweep, SweepPlan};
use textcomp::types::TrainConfig;

fn samples(seed: u64, n: u64, rec: &GlyphTemplateRecognizer<f32>) -> textcomp::Result<Vec<Sample>> {
    (0..n)
        .map(|i| {
            let image = synth_text_image(&random_words(6, 5, seed + i), (64, 256), seed + i)?.image;
            let cache = build_cache(&image, &format!("img-{i}"), &InkDetector::default(), rec, &TrainConfig::default())?;
            Ok(Sample { image_id: format!("img-{i}"), image, cache })
        })
        .collect()
}

fn main() -> textcomp::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("textcomp-sweep"));
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let (train_set, test_set) = (samples(0, 6, &rec)?, samples(100, 3, &rec)?);
    let plan = SweepPlan { lambdas: vec![1.0, 100.0, 10_000.0], kappas: vec![0.0, 0.1] };
    let base = TrainConfig { lr: 2e-2, batch_size: 2, epochs: 0, max_steps: Some(3), ..TrainConfig::default() };
    let spec = ModelSpec::Hyperprior { channels: 4, latent: 4, hyper: 2 };
    let manifest = run_sweep(&plan, &base, &spec, &train_set, &test_set, &rec, &out, 0)?;
    for job in &manifest.jobs {
        let s = job.summary.as_ref();
        println!(
            "lambda {:>7} kappa {:>4}: bpp {:.3} psnr {:.2}",
            job.lambda,
            job.kappa,
            s.map_or(f64::NAN, |s| s.mean_bpp),
            s.map_or(f64::NAN, |s| s.mean_psnr)
        );
    }
    let curves = manifest.curves();
    for p in write_plots(&curves, &out)? {
        println!("plot {}", p.display());
    }
    println!("{} curves; manifest {}", curves.len(), out.join("sweep.json").display());
    Ok(())
}
