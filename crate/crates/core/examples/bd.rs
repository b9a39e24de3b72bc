//! Bjontegaard deltas between two rate/quality curves.
//!
//! cargo run --example bd

use textcomp::metrics::{bd_metric, bd_rate, mean_bd};
use textcomp::types::{MetricKind, RDCurve, RDPoint};

fn curve(label: &str, metric: MetricKind, pts: &[(f64, f64)]) -> textcomp::Result<RDCurve> {
    RDCurve::new(label, metric, pts.iter().map(|&(bpp, value)| RDPoint { bpp, value }).collect())
}

fn main() -> textcomp::Result<()> {
    let base_psnr = curve("baseline", MetricKind::Psnr, &[(0.12, 25.1), (0.21, 27.9), (0.38, 30.6), (0.70, 33.4)])?;
    let ours_psnr = curve("text-aware", MetricKind::Psnr, &[(0.13, 25.0), (0.22, 27.8), (0.40, 30.5), (0.73, 33.3)])?;
    let base_cer = curve("baseline", MetricKind::Cer, &[(0.12, 0.62), (0.21, 0.41), (0.38, 0.22), (0.70, 0.09)])?;
    let ours_cer = curve("text-aware", MetricKind::Cer, &[(0.13, 0.45), (0.22, 0.27), (0.40, 0.14), (0.73, 0.06)])?;

    let rate = bd_rate(&base_psnr, &ours_psnr)?;
    let cer = bd_metric(&base_cer, &ours_cer, MetricKind::Cer)?;
    let psnr = bd_metric(&base_psnr, &ours_psnr, MetricKind::Psnr)?;
    println!("BD-rate at equal PSNR: {:+.2}%", rate.value.unwrap_or(f64::NAN));
    println!("BD-CER at equal rate:  {:+.2}%", cer.value.unwrap_or(f64::NAN));
    println!("BD-PSNR at equal rate: {:+.3}%", psnr.value.unwrap_or(f64::NAN));

    let per_codec: Vec<_> = [(0.9, 0.55), (0.8, 0.5), (0.7, 0.52)]
        .iter()
        .map(|&(a, b)| {
            let r = curve("r", MetricKind::Cer, &[(0.1, a), (0.2, a * 0.6), (0.4, a * 0.3)])?;
            let t = curve("t", MetricKind::Cer, &[(0.1, b), (0.2, b * 0.6), (0.4, b * 0.3)])?;
            bd_metric(&r, &t, MetricKind::Cer)
        })
        .collect::<textcomp::Result<_>>()?;
    println!("mean BD-CER over three codecs: {:+.2}%", mean_bd(&per_codec).unwrap_or(f64::NAN));
    Ok(())
}
