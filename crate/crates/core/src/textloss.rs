//! Differentiable cropping, the text logit loss and the total training loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Var};
use crate::compress::{distortion_var, CompressionModel, Quantization};
use crate::error::{Error, Result};
use crate::textpipe::TextRecognizer;
use crate::types::{validate_bbox, BBox, ImageArray, RegionCacheEntry};

/// Crops an `(H, W, 3)` tensor to `bbox`; the gradient scatters back into the box.
pub fn crop<'g, F: Real>(image: Var<'g, F>, bbox: &BBox) -> Result<Var<'g, F>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::ShapeMismatch { expected: vec![0, 0, 3], got: s });
    }
    if !validate_bbox(bbox, (s[0], s[1])) {
        return Err(Error::InvalidBBox { bbox: *bbox, height: s[0], width: s[1] });
    }
    Ok(image.slice(&[(bbox.y0, bbox.y1), (bbox.x0, bbox.x1), (0, 3)]))
}

pub fn crop_image(image: &ImageArray, bbox: &BBox) -> Result<ImageArray> {
    if !validate_bbox(bbox, image.shape()) {
        let (h, w) = image.shape();
        return Err(Error::InvalidBBox { bbox: *bbox, height: h, width: w });
    }
    let view = image.pixels().slice(ndarray::s![bbox.y0..bbox.y1, bbox.x0..bbox.x1, ..]);
    ImageArray::new(view.to_owned())
}

/// Clamps to `[0, 1]`; the gradient is zero where the input is outside.
/// Reconstructions are clamped before recognition, as at evaluation time.
pub fn clamp_unit<'g, F: Real>(x: Var<'g, F>) -> Var<'g, F> {
    x.clamp_min(F::zero()).neg().add_scalar(F::one()).clamp_min(F::zero()).neg().add_scalar(F::one())
}

/// `(1, 3, H, W)` to `(H, W, 3)`.
pub fn nchw_to_hwc<'g, F: Real>(x: Var<'g, F>) -> Var<'g, F> {
    let s = x.shape();
    x.reshape(&[3, s[2], s[3]]).permute(&[1, 2, 0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextLossBreakdown {
    /// Squared Frobenius norm of the logit difference, per retained region.
    pub per_region: Vec<f64>,
    pub mean: f64,
    pub n: usize,
}

/// Text loss terms on a graph.
#[derive(Clone, Debug)]
pub struct TextLoss<'g, F: Real> {
    pub mean: Var<'g, F>,
    pub per_region: Vec<Var<'g, F>>,
}

impl<F: Real> TextLoss<'_, F> {
    pub fn breakdown(&self) -> TextLossBreakdown {
        TextLossBreakdown {
            per_region: self.per_region.iter().map(|v| v.item().as_f64()).collect(),
            mean: self.mean.item().as_f64(),
            n: self.per_region.len(),
        }
    }
}

/// Mean over retained regions of `||v_i - recognize(crop(x_hat, B_i))||^2`,
/// with `x_hat` as `(H, W, 3)`. Cached logits enter as constants; zero
/// retained regions give a zero loss.
pub fn text_logit_loss_var<'g, F, R>(
    x_hat: Var<'g, F>,
    cache: &RegionCacheEntry,
    recognizer: &R,
) -> Result<TextLoss<'g, F>>
where
    F: Real,
    R: TextRecognizer<F> + ?Sized,
{
    let s = x_hat.shape();
    if s.len() != 3 || (s[0], s[1]) != cache.source_shape {
        let (h, w) = cache.source_shape;
        return Err(Error::ShapeMismatch { expected: vec![h, w, 3], got: s });
    }
    if x_hat.is_tracked() && !recognizer.supports_gradients() {
        return Err(Error::NoGradient);
    }
    let g = x_hat.graph();
    let mut per_region = Vec::new();
    let mut sum: Option<Var<'g, F>> = None;
    for r in cache.retained() {
        let v_hat = recognizer.recognize(crop(x_hat, &r.bbox)?)?;
        let v = g.constant(r.logits.to_tensor());
        if v.shape() != v_hat.shape() {
            return Err(Error::ShapeMismatch { expected: v.shape(), got: v_hat.shape() });
        }
        let term = v_hat.sub(v).square().sum();
        per_region.push(term);
        sum = Some(match sum {
            Some(acc) => acc.add(term),
            None => term,
        });
    }
    let mean = match sum {
        Some(total) => total.scale(F::lit(1.0 / per_region.len() as f64)),
        None => g.scalar(F::zero()),
    };
    Ok(TextLoss { mean, per_region })
}

/// Value-only text loss between `x` and a reconstruction.
pub fn text_logit_loss<F, R>(
    x: &ImageArray,
    x_hat: &ImageArray,
    cache: &RegionCacheEntry,
    recognizer: &R,
) -> Result<TextLossBreakdown>
where
    F: Real,
    R: TextRecognizer<F> + ?Sized,
{
    if x.shape() != cache.source_shape {
        return Err(Error::Config(format!("cache for `{}` was built on a different image size", cache.image_id)));
    }
    let g = Graph::<F>::new();
    Ok(text_logit_loss_var(g.constant(x_hat.to_hwc()), cache, recognizer)?.breakdown())
}

/// Whether the text term takes part at all.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextTerm {
    #[default]
    Enabled,
    /// The recognizer is never called; the objective is plain rate-distortion.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalLossBreakdown {
    /// Batch means of the per-image terms. Rates are in bits per pixel.
    pub rate_y: f64,
    pub rate_z: f64,
    pub distortion: f64,
    pub text: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub total: f64,
}

pub struct TotalLoss<'g, F: Real> {
    pub total: Var<'g, F>,
    pub breakdown: TotalLossBreakdown,
}

/// One image of a batch with its region cache.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub image_id: &'a str,
    pub image: &'a ImageArray,
    pub cache: Option<&'a RegionCacheEntry>,
}

/// Per-image terms of the objective.
pub struct ImageTerms<'g, F: Real> {
    pub rate_y: Var<'g, F>,
    pub rate_z: Var<'g, F>,
    pub distortion: Var<'g, F>,
    pub text: Var<'g, F>,
    pub x_hat: Var<'g, F>,
}

/// Forward pass and loss terms for a single image. With `kappa == 0` the
/// text term is measured on a detached reconstruction and carries no gradient.
#[allow(clippy::too_many_arguments)]
pub fn image_terms<'g, F, M, R>(
    g: &'g Graph<F>,
    params: &[Var<'g, F>],
    item: &BatchItem<'_>,
    model: &M,
    recognizer: &R,
    kappa: f64,
    text: TextTerm,
    q: Quantization,
) -> Result<ImageTerms<'g, F>>
where
    F: Real,
    M: CompressionModel + ?Sized,
    R: TextRecognizer<F> + ?Sized,
{
    let cache = item.cache.ok_or_else(|| Error::MissingCache(item.image_id.to_string()))?;
    if cache.source_shape != item.image.shape() {
        return Err(Error::Config(format!("cache for `{}` was built on a different image size", item.image_id)));
    }
    let (h, w) = item.image.shape();
    let x = g.constant(item.image.to_nchw());
    let out = model.forward(params, x, q)?;
    if out.x_hat.shape() != x.shape() {
        return Err(Error::ShapeMismatch { expected: x.shape(), got: out.x_hat.shape() });
    }
    let per_pixel = F::lit(1.0 / (h * w) as f64);
    let text = match text {
        TextTerm::Disabled => g.scalar(F::zero()),
        TextTerm::Enabled => {
            let hwc = nchw_to_hwc(out.x_hat);
            let hwc = if kappa == 0.0 { hwc.detach() } else { hwc };
            let hwc = clamp_unit(hwc);
            text_logit_loss_var(hwc, cache, recognizer)?.mean
        }
    };
    Ok(ImageTerms {
        rate_y: out.bits_y.scale(per_pixel),
        rate_z: out.bits_z.scale(per_pixel),
        distortion: distortion_var(x, out.x_hat)?,
        text,
        x_hat: out.x_hat,
    })
}

/// Batch objective: `sum_k [R(y_k) + R(z_k) + lambda * D_k + kappa * T_k] / m`.
/// `quant(k)` gives the quantizer for the `k`-th image.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<'g, F, M, R>(
    g: &'g Graph<F>,
    params: &[Var<'g, F>],
    batch: &[BatchItem<'_>],
    model: &M,
    recognizer: &R,
    lambda: f64,
    kappa: f64,
    text: TextTerm,
    quant: impl Fn(usize) -> Quantization,
) -> Result<TotalLoss<'g, F>>
where
    F: Real,
    M: CompressionModel + ?Sized,
    R: TextRecognizer<F> + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let m = batch.len() as f64;
    let mut acc: Option<Var<'g, F>> = None;
    let mut sums = [0.0f64; 4];
    for (k, item) in batch.iter().enumerate() {
        let t = image_terms(g, params, item, model, recognizer, kappa, text, quant(k))?;
        let mut l = t.rate_y.add(t.rate_z).add(t.distortion.scale(F::lit(lambda)));
        if kappa != 0.0 && text == TextTerm::Enabled {
            l = l.add(t.text.scale(F::lit(kappa)));
        }
        acc = Some(match acc {
            Some(a) => a.add(l),
            None => l,
        });
        for (s, v) in sums.iter_mut().zip([t.rate_y, t.rate_z, t.distortion, t.text]) {
            *s += v.item().as_f64();
        }
    }
    let total = acc.unwrap().scale(F::lit(1.0 / m));
    let breakdown = TotalLossBreakdown {
        rate_y: sums[0] / m,
        rate_z: sums[1] / m,
        distortion: sums[2] / m,
        text: sums[3] / m,
        lambda,
        kappa,
        total: total.item().as_f64(),
    };
    Ok(TotalLoss { total, breakdown })
}
