//! Text detection and recognition interfaces, the English-region filter, and
//! the per-image region cache.

pub mod cache;
pub mod detector;
pub mod recognizer;

pub use cache::{build_cache, load_cache, save_cache};
pub use detector::{BoxFileDetector, InkDetector};
pub use recognizer::GlyphTemplateRecognizer;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::types::{BBox, ImageArray, LogitMatrix, TrainConfig};

/// Finds text regions in a ground-truth image.
pub trait TextDetector {
    fn detect(&self, image: &ImageArray) -> Result<Vec<BBox>>;

    /// Detection when the caller knows the image id; adapters backed by
    /// precomputed results key on it.
    fn detect_image(&self, _image_id: &str, image: &ImageArray) -> Result<Vec<BBox>> {
        self.detect(image)
    }
}

/// Maps an `h x w x 3` crop to a `T x S` logit matrix.
pub trait TextRecognizer<F: Real> {
    fn charset(&self) -> &Charset;

    /// Maximum character length `T`.
    fn max_len(&self) -> usize;

    fn supports_gradients(&self) -> bool;

    /// Recognizes a crop tensor of shape `(h, w, 3)`; output is `(T, S)` for every crop size.
    fn recognize<'g>(&self, crop: Var<'g, F>) -> Result<Var<'g, F>>;

    fn recognize_image(&self, crop: &ImageArray) -> Result<LogitMatrix> {
        let g = Graph::new();
        let out = self.recognize(g.constant(crop.to_hwc()))?;
        LogitMatrix::from_tensor(&out.value())
    }
}

/// Ordered recognizer symbols including an end-of-sequence marker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Charset {
    symbols: Vec<String>,
    eos: usize,
}

impl Charset {
    pub fn new(symbols: Vec<String>, eos: usize) -> Result<Self> {
        if symbols.len() < 2 || eos >= symbols.len() {
            return Err(Error::Config(format!("charset of {} symbols with eos index {eos}", symbols.len())));
        }
        Ok(Self { symbols, eos })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// Which logits the filter statistics are taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterReduction {
    /// All `T * S` entries.
    #[default]
    Full,
    /// The per-position maxima (`T` values).
    PositionMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub m_min: f64,
    pub sigma_max: f64,
    pub reduction: FilterReduction,
}

impl From<&TrainConfig> for FilterConfig {
    fn from(cfg: &TrainConfig) -> Self {
        Self { m_min: cfg.m_min, sigma_max: cfg.sigma_max, reduction: FilterReduction::Full }
    }
}

/// Median and population standard deviation of a set of logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitStats {
    pub median: f64,
    pub stdev: f64,
}

impl LogitStats {
    pub fn of(v: &LogitMatrix, reduction: FilterReduction) -> Self {
        let mut vals: Vec<f64> = match reduction {
            FilterReduction::Full => v.values().iter().map(|&x| x as f64).collect(),
            FilterReduction::PositionMax => (0..v.rows())
                .map(|t| v.row(t).iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64)
                .collect(),
        };
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let stdev = (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        vals.sort_by(f64::total_cmp);
        let mid = vals.len() / 2;
        let median = if vals.len() % 2 == 1 { vals[mid] } else { (vals[mid - 1] + vals[mid]) / 2.0 };
        Self { median, stdev }
    }

    /// `median >= m_min` and `stdev <= sigma_max`, both inclusive.
    pub fn passes(&self, m_min: f64, sigma_max: f64) -> bool {
        self.median >= m_min && self.stdev <= sigma_max
    }
}

/// Keeps a region when its logits look like confidently recognized English.
pub fn english_filter(v: &LogitMatrix, m_min: f64, sigma_max: f64) -> bool {
    LogitStats::of(v, FilterReduction::Full).passes(m_min, sigma_max)
}

pub fn english_filter_with(v: &LogitMatrix, cfg: &FilterConfig) -> bool {
    LogitStats::of(v, cfg.reduction).passes(cfg.m_min, cfg.sigma_max)
}
