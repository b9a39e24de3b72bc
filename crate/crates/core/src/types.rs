//! Domain types shared across the crate.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// RGB image, `H x W x 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage", into = "RawImage")]
pub struct ImageArray {
    pixels: Array3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl TryFrom<RawImage> for ImageArray {
    type Error = Error;

    fn try_from(raw: RawImage) -> Result<Self> {
        let arr = Array3::from_shape_vec((raw.height, raw.width, 3), raw.pixels)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        ImageArray::new(arr)
    }
}

impl From<ImageArray> for RawImage {
    fn from(img: ImageArray) -> Self {
        let (height, width) = img.shape();
        RawImage { height, width, pixels: img.pixels.iter().copied().collect() }
    }
}

impl ImageArray {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidImage(format!("empty image {h}x{w}")));
        }
        if c != 3 {
            return Err(Error::InvalidImage(format!("expected 3 channels, got {c}")));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels: pixels.as_standard_layout().into_owned() })
    }

    /// Uniform image filled with `value` in every channel.
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// `(H, W)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// `H x W x 3` tensor for the autodiff engine.
    pub fn to_hwc<F: Real>(&self) -> Tensor<F> {
        self.pixels.mapv(F::lit).into_dyn()
    }

    /// `1 x 3 x H x W` tensor for convolutional models.
    pub fn to_nchw<F: Real>(&self) -> Tensor<F> {
        let (h, w) = self.shape();
        let chw = self.pixels.view().permuted_axes([2, 0, 1]);
        let data: Vec<F> = chw.iter().map(|&v| F::lit(v)).collect();
        Tensor::from_shape_vec(IxDyn(&[1, 3, h, w]), data).unwrap()
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let arr = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Self::new(arr)
    }

    /// Quantizes to 8 bits; only used at file boundaries.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = self.shape();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c| (self.pixels[[y as usize, x as usize, c]] * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Per-pixel mean over channels, `H x W`.
    pub fn luma(&self) -> ndarray::Array2<f64> {
        self.pixels.mean_axis(ndarray::Axis(2)).unwrap()
    }
}

/// Clips reconstructed values into `[0, 1]`; non-finite input means the model diverged.
pub fn clamp_image(values: Array3<f64>) -> Result<ImageArray> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("reconstruction contains {v}")));
    }
    ImageArray::new(values.mapv(|v| v.clamp(0.0, 1.0)))
}

/// Axis-aligned text region. Top-left inclusive, bottom-right exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    /// Axis-aligned hull of a polygon given as `(x, y)` vertices, clipped to the image.
    pub fn from_polygon(points: &[(f64, f64)], shape: (usize, usize)) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let (h, w) = shape;
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
            points.iter().map(pick).fold(init, f)
        };
        let min_x = fold(f64::min, f64::INFINITY, |p| p.0).floor().max(0.0) as usize;
        let min_y = fold(f64::min, f64::INFINITY, |p| p.1).floor().max(0.0) as usize;
        let max_x = (fold(f64::max, f64::NEG_INFINITY, |p| p.0).ceil().max(0.0) as usize).min(w);
        let max_y = (fold(f64::max, f64::NEG_INFINITY, |p| p.1).ceil().max(0.0) as usize).min(h);
        let b = BBox::new(min_x, min_y, max_x, max_y);
        validate_bbox(&b, shape).then_some(b)
    }
}

/// True iff `bbox` is non-empty and lies inside an image of shape `(H, W)`.
pub fn validate_bbox(bbox: &BBox, shape: (usize, usize)) -> bool {
    let (h, w) = shape;
    bbox.x0 < bbox.x1 && bbox.x1 <= w && bbox.y0 < bbox.y1 && bbox.y1 <= h
}

/// `T x S` recognizer output: `T` character positions over an `S`-symbol charset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols < 2 {
            return Err(Error::ShapeMismatch { expected: vec![1, 2], got: vec![rows, cols] });
        }
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch { expected: vec![rows, cols], got: vec![values.len()] });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit {v}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::ShapeMismatch { expected: vec![0, 0], got: t.shape().to_vec() });
        }
        Self::new(t.shape()[0], t.shape()[1], t.iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::from_shape_vec(IxDyn(&[self.rows, self.cols]), self.values.iter().map(|&v| F::lit(v as f64)).collect())
            .unwrap()
    }

    /// Maximum character length `T`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Charset size `S`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub bbox: BBox,
    pub logits: LogitMatrix,
    /// Verdict of the English-region filter.
    pub retained: bool,
}

/// Precomputed regions and ground-truth logits for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCacheEntry {
    pub image_id: String,
    /// `(H, W)` of the image the boxes index.
    pub source_shape: (usize, usize),
    /// Detector output order.
    pub records: Vec<RegionRecord>,
}

impl RegionCacheEntry {
    pub fn retained(&self) -> impl Iterator<Item = &RegionRecord> {
        self.records.iter().filter(|r| r.retained)
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }
}

/// Quality metric carried by an [`RDCurve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Cer,
    Wer,
    Psnr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Cer, MetricKind::Wer, MetricKind::Psnr];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Cer => "cer",
            MetricKind::Wer => "wer",
            MetricKind::Psnr => "psnr",
        }
    }

    /// Error rates improve downward, PSNR upward.
    pub fn lower_is_better(&self) -> bool {
        !matches!(self, MetricKind::Psnr)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cer" => Ok(MetricKind::Cer),
            "wer" => Ok(MetricKind::Wer),
            "psnr" => Ok(MetricKind::Psnr),
            other => Err(Error::Config(format!("unknown metric kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub bpp: f64,
    pub value: f64,
}

/// Rate/quality curve with at least three points, sorted by strictly increasing bpp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    pub label: String,
    pub metric: MetricKind,
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub const MIN_POINTS: usize = 3;

    /// Sorts by bpp; rejects duplicates, non-positive rates and non-finite values.
    pub fn new(label: impl Into<String>, metric: MetricKind, mut points: Vec<RDPoint>) -> Result<Self> {
        let label = label.into();
        if points.len() < Self::MIN_POINTS {
            return Err(Error::InvalidCurve(format!("`{label}` has {} points, need {}", points.len(), Self::MIN_POINTS)));
        }
        if let Some(p) = points.iter().find(|p| !(p.bpp.is_finite() && p.bpp > 0.0 && p.value.is_finite())) {
            return Err(Error::InvalidCurve(format!("`{label}` has invalid point {p:?}")));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::InvalidCurve(format!("`{label}` has duplicate bpp values")));
        }
        Ok(Self { label, metric, points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }
}

/// Per-image evaluation row. `cer`/`wer` are `None` when the image has no
/// usable text regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub bpp: f64,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub psnr: f64,
}

/// Default distortion weight: 0.01 on the 8-bit MSE scale, expressed for
/// MSE on `[0, 1]` pixels.
pub const DEFAULT_LAMBDA: f64 = 0.01 * 255.0 * 255.0;

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the distortion term (MSE on `[0, 1]` pixels).
    pub lambda: f64,
    /// Weight of the text logit loss; 0 is the plain rate-distortion objective.
    pub kappa: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Extra epochs granted once when the loss has not converged.
    pub extension_epochs: usize,
    pub m_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
    /// Hard cap on optimizer steps; `None` runs the full epoch schedule.
    pub max_steps: Option<usize>,
    /// Checkpoint period in steps (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            kappa: 0.1,
            lr: 1e-4,
            batch_size: 8,
            epochs: 20,
            extension_epochs: 20,
            m_min: 14.2,
            sigma_max: 2.0,
            seed: 0,
            max_steps: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda must be finite and > 0");
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be finite and >= 0");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be finite and > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return bad("epochs must be >= 1");
        }
        if self.sigma_max.is_nan() || self.m_min.is_nan() {
            return bad("filter thresholds must not be NaN");
        }
        Ok(())
    }
}
