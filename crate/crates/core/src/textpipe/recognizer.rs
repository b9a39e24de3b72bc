//! Differentiable glyph-template recognizer for the embedded bitmap font.
//!
//! The crop is converted to gray, resized to glyph height with an
//! area-weighted linear resampler (aspect ratio kept, right-padded with
//! background up to `T` character cells), and split into `T` cells. Each cell
//! is scored against every template by mean squared distance `d`, and
//!
//! `logit[t, s] = bias - gain * d[t, s] + sharpness * tau * ln(sum_s' exp(-d[t, s'] / tau))`.
//!
//! The last term is a smooth minimum over templates: it vanishes for a cell
//! that matches some template exactly and lowers the whole row of a cell that
//! matches nothing, which is what the region filter picks up. Every stage is
//! smooth in the pixels.

use std::marker::PhantomData;

use ndarray::Array2;

use super::{Charset, TextRecognizer};
use crate::autodiff::{Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::font::{self, CELL_WIDTH, GLYPH_HEIGHT, GLYPH_WIDTH};

pub const EOS_SYMBOL: &str = "<eos>";
/// Gray value of padding and of the end-of-sequence template.
const BACKGROUND: f64 = 1.0;
const CELL_PIXELS: usize = GLYPH_HEIGHT * CELL_WIDTH;

#[derive(Clone, Debug)]
pub struct GlyphTemplateRecognizer<F: Real> {
    charset: Charset,
    max_len: usize,
    /// `(CELL_PIXELS, S)`.
    templates_t: Array2<f64>,
    /// `(1, S)` squared template norms.
    template_sq: Array2<f64>,
    pub bias: f64,
    pub gain: f64,
    pub sharpness: f64,
    pub tau: f64,
    _elem: PhantomData<F>,
}

impl<F: Real> Default for GlyphTemplateRecognizer<F> {
    fn default() -> Self {
        Self::new(12)
    }
}

impl<F: Real> GlyphTemplateRecognizer<F> {
    pub const DEFAULT_BIAS: f64 = 17.5;
    pub const DEFAULT_GAIN: f64 = 8.0;
    pub const DEFAULT_SHARPNESS: f64 = 60.0;
    pub const DEFAULT_TAU: f64 = 0.02;

    pub fn new(max_len: usize) -> Self {
        let mut symbols = vec![EOS_SYMBOL.to_string()];
        symbols.extend(font::alphabet().map(String::from));
        let s = symbols.len();
        let mut templates_t = Array2::from_elem((CELL_PIXELS, s), BACKGROUND);
        for (k, c) in font::alphabet().enumerate() {
            let g = font::glyph(c).unwrap();
            for (y, row) in g.iter().enumerate() {
                for (x, &ink) in row.iter().enumerate().take(GLYPH_WIDTH) {
                    if ink {
                        templates_t[[y * CELL_WIDTH + x, k + 1]] = 0.0;
                    }
                }
            }
        }
        let template_sq = templates_t.mapv(|v| v * v).sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        Self {
            charset: Charset::new(symbols, 0).unwrap(),
            max_len: max_len.max(1),
            templates_t,
            template_sq,
            bias: Self::DEFAULT_BIAS,
            gain: Self::DEFAULT_GAIN,
            sharpness: Self::DEFAULT_SHARPNESS,
            tau: Self::DEFAULT_TAU,
            _elem: PhantomData,
        }
    }

    /// Target width in pixels after aspect-preserving resize to glyph height.
    fn resized_width(&self, h: usize, w: usize) -> usize {
        let scaled = (w as f64 * GLYPH_HEIGHT as f64 / h as f64).round() as usize;
        scaled.clamp(1, self.max_len * CELL_WIDTH)
    }
}

/// Area-weighted resampling matrix `(out_len, in_len)`.
pub fn area_weights(in_len: usize, out_len: usize) -> Array2<f64> {
    let ratio = in_len as f64 / out_len as f64;
    let mut m = Array2::zeros((out_len, in_len));
    for i in 0..out_len {
        let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(in_len);
        for j in first..last {
            let overlap = (hi.min((j + 1) as f64) - lo.max(j as f64)).max(0.0);
            m[[i, j]] = overlap / ratio;
        }
    }
    m
}

fn tensor<F: Real>(a: &Array2<f64>) -> Tensor<F> {
    a.mapv(F::lit).into_dyn()
}

impl<F: Real> TextRecognizer<F> for GlyphTemplateRecognizer<F> {
    fn charset(&self) -> &Charset {
        &self.charset
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn recognize<'g>(&self, crop: Var<'g, F>) -> Result<Var<'g, F>> {
        let shape = crop.shape();
        if shape.len() != 3 || shape[2] != 3 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::ShapeMismatch { expected: vec![0, 0, 3], got: shape });
        }
        let (h, w) = (shape[0], shape[1]);
        let g = crop.graph();
        let t = self.max_len;
        let width = t * CELL_WIDTH;
        let target = self.resized_width(h, w);

        let rows = area_weights(h, GLYPH_HEIGHT);
        let mut cols_t = Array2::zeros((w, width));
        cols_t.slice_mut(ndarray::s![.., ..target]).assign(&area_weights(w, target).t());
        let mut pad = Array2::zeros((GLYPH_HEIGHT, width));
        pad.slice_mut(ndarray::s![.., target..]).fill(BACKGROUND);

        let gray = crop.sum_axis(2).reshape(&[h, w]).scale(F::lit(1.0 / 3.0));
        let resized = g
            .constant(tensor(&rows))
            .matmul(gray)
            .matmul(g.constant(tensor(&cols_t)))
            .add(g.constant(tensor(&pad)));
        let cells = resized.reshape(&[GLYPH_HEIGHT, t, CELL_WIDTH]).permute(&[1, 0, 2]).reshape(&[t, CELL_PIXELS]);

        let cross = cells.matmul(g.constant(tensor(&self.templates_t)));
        let cell_sq = cells.square().sum_axis(1);
        let dist = cell_sq
            .sub(cross.scale(F::lit(2.0)))
            .add(g.constant(tensor(&self.template_sq)))
            .scale(F::lit(1.0 / CELL_PIXELS as f64));
        // log-sum-exp shifted by the (constant) row minimum so distant cells do not underflow
        let dv = dist.value();
        let row_min = Tensor::from_shape_fn(ndarray::IxDyn(&[t, 1]), |i| {
            dv.index_axis(ndarray::Axis(0), i[0]).iter().copied().fold(F::infinity(), F::min)
        });
        let row_min = g.constant(row_min);
        let soft = dist
            .sub(row_min)
            .scale(F::lit(-1.0 / self.tau))
            .exp()
            .sum_axis(1)
            .ln()
            .scale(F::lit(self.tau))
            .sub(row_min)
            .scale(F::lit(self.sharpness));
        let logits = dist.scale(F::lit(-self.gain)).add(soft).add_scalar(F::lit(self.bias));
        debug_assert_eq!(logits.shape(), vec![t, self.charset.len()]);
        Ok(logits)
    }
}
