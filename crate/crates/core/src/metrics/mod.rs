//! Text-quality and fidelity metrics.

pub mod bd;
pub mod edit;
pub mod io;

pub use bd::{bd_metric, bd_rate, mean_bd, BDResult, Pchip};
pub use edit::{cer, char_edit_counts, edit_counts, wer, word_edit_counts, EditCounts};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::Charset;
use crate::types::{EvalRecord, ImageArray, LogitMatrix};

/// Value reported for an exact reconstruction.
pub const PSNR_CAP: f64 = 99.0;

/// Greedy decode: per-position argmax (lowest index wins ties), stopping at
/// the first end-of-sequence symbol.
pub fn decode_logits(v: &LogitMatrix, charset: &Charset) -> String {
    let mut out = String::new();
    for t in 0..v.rows() {
        let row = v.row(t);
        let mut best = 0;
        for (s, &val) in row.iter().enumerate().skip(1) {
            if val > row[best] {
                best = s;
            }
        }
        if best == charset.eos() {
            break;
        }
        out.push_str(charset.symbol(best));
    }
    out
}

/// Mean squared error over all pixels and channels on the `[0, 1]` scale.
pub fn mse(x: &ImageArray, x_hat: &ImageArray) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        let (a, b) = (x.shape(), x_hat.shape());
        return Err(Error::ShapeMismatch { expected: vec![a.0, a.1, 3], got: vec![b.0, b.1, 3] });
    }
    let n = x.pixels().len() as f64;
    Ok(x.pixels().iter().zip(x_hat.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB for unit peak; capped at [`PSNR_CAP`].
pub fn psnr(x: &ImageArray, x_hat: &ImageArray) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, x_hat)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Dataset-level means of per-image rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub mean_bpp: f64,
    pub mean_psnr: f64,
    /// Over images that have text; `None` if none do.
    pub mean_cer: Option<f64>,
    pub mean_wer: Option<f64>,
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Unweighted means over images. Rows without text are left out of the
/// CER/WER means.
pub fn aggregate(records: &[EvalRecord]) -> Option<Summary> {
    if records.is_empty() {
        return None;
    }
    Some(Summary {
        images: records.len(),
        mean_bpp: mean(records.iter().map(|r| r.bpp))?,
        mean_psnr: mean(records.iter().map(|r| r.psnr))?,
        mean_cer: mean(records.iter().filter_map(|r| r.cer)),
        mean_wer: mean(records.iter().filter_map(|r| r.wer)),
    })
}
