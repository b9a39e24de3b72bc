//! Static line plots of rate/quality curves, one PNG per metric.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::font::{glyph, CELL_WIDTH, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::types::{MetricKind, RDCurve};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 420;
const MARGIN: i64 = 48;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws `text` (upper-cased; characters without a glyph leave a gap).
fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: Rgb<u8>) {
    for (i, ch) in s.chars().enumerate() {
        let Some(g) = glyph(ch.to_ascii_uppercase()) else { continue };
        let ox = x + (i * CELL_WIDTH) as i64;
        for (r, row) in g.iter().enumerate() {
            for (col, &on) in row.iter().enumerate() {
                if on {
                    put(img, ox + col as i64, y + r as i64, c);
                }
            }
        }
    }
}

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders every curve of `metric` with bpp on the x axis.
pub fn plot_curves(curves: &[RDCurve], metric: MetricKind) -> Result<RgbImage> {
    let curves: Vec<&RDCurve> = curves.iter().filter(|c| c.metric == metric).collect();
    if curves.is_empty() {
        return Err(Error::InvalidCurve(format!("no {metric} curves to plot")));
    }
    let pts = || curves.iter().flat_map(|c| c.points().iter());
    let (x_lo, x_hi) = span(pts().map(|p| p.bpp));
    let (y_lo, y_hi) = span(pts().map(|p| p.value));
    let (w, h) = (WIDTH as i64, HEIGHT as i64);
    let to_px = |bpp: f64, v: f64| {
        let px = MARGIN + ((bpp - x_lo) / (x_hi - x_lo) * (w - 2 * MARGIN) as f64).round() as i64;
        let py = h - MARGIN - ((v - y_lo) / (y_hi - y_lo) * (h - 2 * MARGIN) as f64).round() as i64;
        (px, py)
    };

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    for i in 1..5 {
        let gx = MARGIN + i * (w - 2 * MARGIN) / 5;
        let gy = MARGIN + i * (h - 2 * MARGIN) / 5;
        line(&mut img, (gx, MARGIN), (gx, h - MARGIN), GRID);
        line(&mut img, (MARGIN, gy), (w - MARGIN, gy), GRID);
    }
    line(&mut img, (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), INK);
    line(&mut img, (MARGIN, MARGIN), (MARGIN, h - MARGIN), INK);
    text(&mut img, MARGIN, 16, metric.as_str(), INK);
    text(&mut img, w - MARGIN - 3 * CELL_WIDTH as i64, h - MARGIN + 12, "BPP", INK);
    text(&mut img, 4, h - MARGIN - GLYPH_HEIGHT as i64 / 2, &format!("{y_lo:.2}"), INK);
    text(&mut img, 4, MARGIN - GLYPH_HEIGHT as i64 / 2, &format!("{y_hi:.2}"), INK);
    text(&mut img, MARGIN, h - MARGIN + 12, &format!("{x_lo:.2}"), INK);

    for (k, c) in curves.iter().enumerate() {
        let col = Rgb(PALETTE[k % PALETTE.len()]);
        let px: Vec<(i64, i64)> = c.points().iter().map(|p| to_px(p.bpp, p.value)).collect();
        for pair in px.windows(2) {
            line(&mut img, pair[0], pair[1], col);
        }
        for &(x, y) in &px {
            for d in -2..=2 {
                line(&mut img, (x - 2, y + d), (x + 2, y + d), col);
            }
        }
        let ly = MARGIN + 4 + k as i64 * (GLYPH_HEIGHT as i64 + 6);
        let lx = w - MARGIN - 150;
        for d in 0..GLYPH_HEIGHT as i64 {
            line(&mut img, (lx, ly + d), (lx + GLYPH_WIDTH as i64 * 2, ly + d), col);
        }
        text(&mut img, lx + 16, ly, &c.label, INK);
    }
    Ok(img)
}

/// Writes `<dir>/curves-<metric>.png` for each metric present in `curves`.
pub fn write_plots(curves: &[RDCurve], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for metric in MetricKind::ALL {
        if curves.iter().any(|c| c.metric == metric) {
            let path = dir.join(format!("curves-{}.png", metric.as_str().to_ascii_lowercase()));
            plot_curves(curves, metric)?.save(&path)?;
            out.push(path);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RDPoint;

    fn curve(label: &str, metric: MetricKind, k: f64) -> RDCurve {
        let pts = (1..=4).map(|i| RDPoint { bpp: i as f64 * 0.25, value: k / i as f64 }).collect();
        RDCurve::new(label, metric, pts).unwrap()
    }

    #[test]
    fn plots_draw_each_curve_in_its_colour() {
        let curves = [curve("kappa=0", MetricKind::Cer, 0.8), curve("kappa=0.1", MetricKind::Cer, 0.5), curve("x", MetricKind::Psnr, 30.0)];
        let img = plot_curves(&curves, MetricKind::Cer).unwrap();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        for c in &PALETTE[..2] {
            assert!(img.pixels().any(|p| p.0 == *c));
        }
        assert!(!img.pixels().any(|p| p.0 == PALETTE[2]));
        assert!(plot_curves(&curves, MetricKind::Wer).is_err());
    }

    #[test]
    fn written_plots_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let curves = [curve("a", MetricKind::Cer, 0.8), curve("a", MetricKind::Psnr, 30.0)];
        let paths = write_plots(&curves, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        let first = std::fs::read(&paths[0]).unwrap();
        write_plots(&curves, dir.path()).unwrap();
        assert_eq!(std::fs::read(&paths[0]).unwrap(), first);
    }
}
