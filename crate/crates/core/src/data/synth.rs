//! Seeded text-image fixtures rendered with the embedded bitmap font.

use ndarray::{Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::font::{self, CELL_WIDTH, GLYPH_HEIGHT};
use crate::types::{BBox, ImageArray};

/// Renders `word` as an `(h, w, 3)` tensor, `h = 7 * scale`, with no margin.
pub fn render_word(word: &str, scale: usize, ink: f64, background: f64) -> Result<Tensor<f64>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || scale == 0 {
        return Err(Error::Layout("empty word or zero scale".into()));
    }
    let (h, w) = (GLYPH_HEIGHT * scale, font::word_width(chars.len()) * scale);
    let mut out = Tensor::from_elem(IxDyn(&[h, w, 3]), background);
    for (k, &c) in chars.iter().enumerate() {
        let g = font::glyph(c).ok_or_else(|| Error::Layout(format!("no glyph for {c:?}")))?;
        for (y, row) in g.iter().enumerate() {
            for (x, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = (k * CELL_WIDTH + x) * scale + dx;
                        for ch in 0..3 {
                            out[[y * scale + dy, px, ch]] = ink;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthStyle {
    pub scale: usize,
    pub ink: f64,
    pub background: f64,
}

impl Default for SynthStyle {
    fn default() -> Self {
        Self { scale: 2, ink: 0.0, background: 1.0 }
    }
}

/// A rendered fixture with its exact layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub image: ImageArray,
    /// Tight ink box of each word, in input order.
    pub boxes: Vec<BBox>,
    pub words: Vec<String>,
}

/// Lays words out left to right in lines with seeded margins and gaps.
///
/// Word gaps exceed the ink detector's merge distance and lines are separated
/// by blank rows, so detection on the result recovers `boxes` exactly.
pub fn synth_text_image<S: AsRef<str>>(words: &[S], size: (usize, usize), seed: u64) -> Result<SynthImage> {
    synth_text_image_with(words, size, seed, &SynthStyle::default())
}

pub fn synth_text_image_with<S: AsRef<str>>(
    words: &[S],
    size: (usize, usize),
    seed: u64,
    style: &SynthStyle,
) -> Result<SynthImage> {
    let (h, w) = size;
    if h == 0 || w == 0 || style.scale == 0 {
        return Err(Error::Layout(format!("canvas {h}x{w} at scale {}", style.scale)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Array3::from_elem((h, w, 3), style.background);
    let line_h = GLYPH_HEIGHT * style.scale;
    let margin = style.scale;
    let mut y = margin + rng.random_range(0..=2 * style.scale);
    let mut x = margin + rng.random_range(0..=4 * style.scale);
    let mut boxes = Vec::with_capacity(words.len());
    for word in words {
        let word = word.as_ref();
        let tile = render_word(word, style.scale, style.ink, style.background)?;
        let ww = tile.shape()[1];
        if ww + 2 * margin > w {
            return Err(Error::Layout(format!("`{word}` is {ww} px wide, canvas is {w}")));
        }
        if x + ww + margin > w {
            x = margin + rng.random_range(0..=4 * style.scale);
            y += line_h + 2 * style.scale + rng.random_range(0..=2 * style.scale);
        }
        if y + line_h + margin > h {
            return Err(Error::Layout(format!("{} words do not fit on a {h}x{w} canvas", words.len())));
        }
        for ((ty, tx, c), &v) in tile.view().into_dimensionality::<ndarray::Ix3>().unwrap().indexed_iter() {
            pixels[[y + ty, x + tx, c]] = v;
        }
        boxes.push(BBox::new(x, y, x + ww, y + line_h));
        x += ww + 6 * style.scale + rng.random_range(0..=6 * style.scale);
    }
    Ok(SynthImage { image: ImageArray::new(pixels)?, boxes, words: words.iter().map(|s| s.as_ref().to_string()).collect() })
}

/// `n` seeded words of 2 to `max_len` characters from the font alphabet.
pub fn random_words(n: usize, max_len: usize, seed: u64) -> Vec<String> {
    let alphabet: Vec<char> = font::alphabet().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=max_len.max(2));
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        })
        .collect()
}
