//! Per-image region cache: build, save, load.
//!
//! On-disk layout, one directory per image:
//!
//! ```text
//! <dir>/<image_id>/index.json     image id, source shape, records (bbox, retained, t, s, blob)
//! <dir>/<image_id>/r0000.f32      T*S little-endian f32 logits, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{english_filter_with, FilterConfig, TextDetector, TextRecognizer};
use crate::autodiff::{Graph, Real};
use crate::error::{Error, Result};
use crate::textloss::crop;
use crate::types::{validate_bbox, BBox, ImageArray, LogitMatrix, RegionCacheEntry, RegionRecord, TrainConfig};

pub const INDEX_FILE: &str = "index.json";

/// Detects, crops the ground-truth image, recognizes and filters every region.
pub fn build_cache<F: Real, D, R>(
    image: &ImageArray,
    image_id: &str,
    detector: &D,
    recognizer: &R,
    cfg: &TrainConfig,
) -> Result<RegionCacheEntry>
where
    D: TextDetector + ?Sized,
    R: TextRecognizer<F> + ?Sized,
{
    build_cache_with(image, image_id, detector, recognizer, &FilterConfig::from(cfg))
}

pub fn build_cache_with<F: Real, D, R>(
    image: &ImageArray,
    image_id: &str,
    detector: &D,
    recognizer: &R,
    filter: &FilterConfig,
) -> Result<RegionCacheEntry>
where
    D: TextDetector + ?Sized,
    R: TextRecognizer<F> + ?Sized,
{
    let detector_err = |reason: String| Error::Detector { image_id: image_id.to_string(), reason };
    let boxes = detector.detect_image(image_id, image).map_err(|e| detector_err(e.to_string()))?;
    let shape = image.shape();
    let g = Graph::<F>::new();
    let x = g.constant(image.to_hwc());
    let mut records = Vec::with_capacity(boxes.len());
    for bbox in boxes {
        if !validate_bbox(&bbox, shape) {
            return Err(detector_err(format!("box {bbox:?} outside {}x{} image", shape.0, shape.1)));
        }
        let v = recognizer.recognize(crop(x, &bbox)?)?;
        let logits = LogitMatrix::from_tensor(&v.value())?;
        let retained = english_filter_with(&logits, filter);
        records.push(RegionRecord { bbox, logits, retained });
    }
    Ok(RegionCacheEntry { image_id: image_id.to_string(), source_shape: shape, records })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    image_id: String,
    height: usize,
    width: usize,
    records: Vec<IndexRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRecord {
    bbox: [usize; 4],
    retained: bool,
    t: usize,
    s: usize,
    blob: String,
}

fn check_id(image_id: &str) -> Result<()> {
    if image_id.is_empty() || image_id == "." || image_id == ".." || image_id.contains(['/', '\\']) {
        return Err(Error::Config(format!("`{image_id}` is not a valid image id")));
    }
    Ok(())
}

pub fn entry_dir(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(image_id)
}

/// Writes `entry` under `dir`; returns the entry directory.
pub fn save_cache(entry: &RegionCacheEntry, dir: &Path) -> Result<PathBuf> {
    check_id(&entry.image_id)?;
    let root = entry_dir(dir, &entry.image_id);
    fs::create_dir_all(&root)?;
    let mut records = Vec::with_capacity(entry.records.len());
    for (i, r) in entry.records.iter().enumerate() {
        let blob = format!("r{i:04}.f32");
        let bytes: Vec<u8> = r.logits.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(root.join(&blob), bytes)?;
        records.push(IndexRecord {
            bbox: [r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1],
            retained: r.retained,
            t: r.logits.rows(),
            s: r.logits.cols(),
            blob,
        });
    }
    let index = Index { image_id: entry.image_id.clone(), height: entry.source_shape.0, width: entry.source_shape.1, records };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    fs::write(root.join(INDEX_FILE), text)?;
    Ok(root)
}

/// Loads the entry for `image_id`. A missing index is `NotFound`; anything
/// unreadable behind an existing index is `Format`.
pub fn load_cache(dir: &Path, image_id: &str) -> Result<RegionCacheEntry> {
    check_id(image_id)?;
    let root = entry_dir(dir, image_id);
    let index_path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(index_path.clone()),
        _ => e.into(),
    })?;
    let format = |path: &Path, reason: String| Error::Format { path: path.to_path_buf(), reason };
    let index: Index = serde_json::from_str(&text).map_err(|e| format(&index_path, e.to_string()))?;
    if index.image_id != image_id {
        return Err(format(&index_path, format!("index is for `{}`", index.image_id)));
    }
    let shape = (index.height, index.width);
    let mut records = Vec::with_capacity(index.records.len());
    for r in index.records {
        let bbox = BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]);
        if !validate_bbox(&bbox, shape) {
            return Err(format(&index_path, format!("box {bbox:?} outside source shape")));
        }
        if r.blob.contains(['/', '\\']) {
            return Err(format(&index_path, format!("bad blob name `{}`", r.blob)));
        }
        let blob_path = root.join(&r.blob);
        let bytes = fs::read(&blob_path).map_err(|e| format(&blob_path, e.to_string()))?;
        if bytes.len() != r.t * r.s * 4 {
            return Err(format(&blob_path, format!("expected {} bytes, found {}", r.t * r.s * 4, bytes.len())));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let logits = LogitMatrix::new(r.t, r.s, values).map_err(|e| format(&blob_path, e.to_string()))?;
        records.push(RegionRecord { bbox, logits, retained: r.retained });
    }
    Ok(RegionCacheEntry { image_id: index.image_id, source_shape: shape, records })
}
