//! Reference detectors.

use std::fs;
use std::path::PathBuf;

use serde::Deserialize;

use super::TextDetector;
use crate::error::{Error, Result};
use crate::types::{validate_bbox, BBox, ImageArray};

/// Projection-profile word detector for dark text on a light background.
///
/// Rows containing ink form text lines; within a line, ink column runs
/// separated by gaps no wider than `merge_ratio * line_height` are merged
/// into one word box, which is then tightened vertically.
#[derive(Clone, Debug)]
pub struct InkDetector {
    /// Pixels with channel-mean below this count as ink.
    pub ink_threshold: f64,
    pub merge_ratio: f64,
    /// Boxes shorter than this are dropped as specks.
    pub min_height: usize,
}

impl Default for InkDetector {
    fn default() -> Self {
        Self { ink_threshold: 0.5, merge_ratio: 0.3, min_height: 3 }
    }
}

fn runs(flags: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut len = 0;
    for (i, f) in flags.enumerate() {
        len = i + 1;
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, len));
    }
    out
}

impl TextDetector for InkDetector {
    fn detect(&self, image: &ImageArray) -> Result<Vec<BBox>> {
        let ink = image.luma().mapv(|v| v < self.ink_threshold);
        let (h, w) = ink.dim();
        let mut boxes = Vec::new();
        for (r0, r1) in runs((0..h).map(|y| (0..w).any(|x| ink[[y, x]]))) {
            let max_gap = (self.merge_ratio * (r1 - r0) as f64).floor() as usize;
            let cols = runs((0..w).map(|x| (r0..r1).any(|y| ink[[y, x]])));
            let mut words: Vec<(usize, usize)> = Vec::new();
            for (c0, c1) in cols {
                match words.last_mut() {
                    Some(last) if c0 - last.1 <= max_gap => last.1 = c1,
                    _ => words.push((c0, c1)),
                }
            }
            for (c0, c1) in words {
                let rows = runs((r0..r1).map(|y| (c0..c1).any(|x| ink[[y, x]])));
                let (y0, y1) = (r0 + rows[0].0, r0 + rows[rows.len() - 1].1);
                if y1 - y0 >= self.min_height {
                    boxes.push(BBox::new(c0, y0, c1, y1));
                }
            }
        }
        Ok(boxes)
    }
}

/// Adapter for detections produced offline by an external detector.
///
/// Reads `<dir>/<image_id>.json` holding either `{"boxes": [[x0, y0, x1, y1], ...]}`
/// or `{"polygons": [[[x, y], ...], ...]}`; polygons become their axis-aligned hull.
#[derive(Clone, Debug)]
pub struct BoxFileDetector {
    pub dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxFile {
    #[serde(default)]
    boxes: Vec<[usize; 4]>,
    #[serde(default)]
    polygons: Vec<Vec<(f64, f64)>>,
}

impl TextDetector for BoxFileDetector {
    fn detect(&self, _image: &ImageArray) -> Result<Vec<BBox>> {
        Err(Error::Config("BoxFileDetector needs an image id".into()))
    }

    fn detect_image(&self, image_id: &str, image: &ImageArray) -> Result<Vec<BBox>> {
        let path = self.dir.join(format!("{image_id}.json"));
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.clone()),
            _ => e.into(),
        })?;
        let file: BoxFile =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let shape = image.shape();
        let mut out = Vec::new();
        for [x0, y0, x1, y1] in file.boxes {
            let b = BBox::new(x0, y0, x1, y1);
            if !validate_bbox(&b, shape) {
                return Err(Error::InvalidBBox { bbox: b, height: shape.0, width: shape.1 });
            }
            out.push(b);
        }
        out.extend(file.polygons.iter().filter_map(|p| BBox::from_polygon(p, shape)));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn canvas(h: usize, w: usize, ink: &[(usize, usize, usize, usize)]) -> ImageArray {
        let mut a = Array3::from_elem((h, w, 3), 1.0);
        for &(x0, y0, x1, y1) in ink {
            for y in y0..y1 {
                for x in x0..x1 {
                    for c in 0..3 {
                        a[[y, x, c]] = 0.0;
                    }
                }
            }
        }
        ImageArray::new(a).unwrap()
    }

    #[test]
    fn blank_image_has_no_boxes() {
        assert!(InkDetector::default().detect(&ImageArray::filled(20, 30, 1.0).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn merges_close_blobs_and_splits_far_ones() {
        // line of height 10: gaps <= 3 merge
        let img = canvas(30, 60, &[(2, 5, 6, 15), (8, 5, 12, 15), (20, 7, 25, 14), (5, 20, 9, 24)]);
        let boxes = InkDetector::default().detect(&img).unwrap();
        assert_eq!(boxes, vec![BBox::new(2, 5, 12, 15), BBox::new(20, 7, 25, 14), BBox::new(5, 20, 9, 24)]);
    }

    #[test]
    fn box_file_adapter() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.json"), r#"{"boxes": [[1, 1, 4, 3]], "polygons": [[[5.5, 1.0], [9.2, 1.4], [9.0, 6.0]]]}"#).unwrap();
        fs::write(dir.path().join("bad.json"), r#"{"boxes": [[1, 1, 40, 3]]}"#).unwrap();
        let det = BoxFileDetector { dir: dir.path().into() };
        let img = ImageArray::filled(10, 10, 1.0).unwrap();
        assert_eq!(det.detect_image("a", &img).unwrap(), vec![BBox::new(1, 1, 4, 3), BBox::new(5, 1, 10, 6)]);
        assert!(matches!(det.detect_image("missing", &img), Err(Error::NotFound(_))));
        assert!(matches!(det.detect_image("bad", &img), Err(Error::InvalidBBox { .. })));
    }
}
