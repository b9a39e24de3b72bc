//! Dataset ingestion, the training-set retention rule, and fixtures.

pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::{build_cache, english_filter_with, load_cache, save_cache, FilterConfig, TextDetector, TextRecognizer};
use crate::types::{ImageArray, RegionCacheEntry, TrainConfig};

/// Training images need at least this many retained regions.
pub const TRAIN_MIN_REGIONS: usize = 5;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the manifest root.
    pub file: PathBuf,
    pub retained_region_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Train images dropped by the retention rule.
    pub excluded: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedImage>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.into()),
            _ => e.into(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })
    }
}

/// An image with its region cache, ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image_id: String,
    pub image: ImageArray,
    pub cache: RegionCacheEntry,
}

/// Image files directly under `dir`, sorted by image id (the file stem).
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(dir.into()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<ImageArray> {
    ImageArray::from_rgb8(&image::open(path)?.to_rgb8())
}

pub fn save_image(image: &ImageArray, path: &Path) -> Result<()> {
    image.to_rgb8().save(path)?;
    Ok(())
}

/// Returns the cached entry when one matching the image shape exists,
/// otherwise builds and saves it. Retention flags of a cached entry are
/// recomputed from its logits under `cfg`, and the entry is rewritten if
/// they change.
pub fn cached_or_build<D, R>(
    image: &ImageArray,
    image_id: &str,
    cache_dir: &Path,
    detector: &D,
    recognizer: &R,
    cfg: &TrainConfig,
) -> Result<RegionCacheEntry>
where
    D: TextDetector + ?Sized,
    R: TextRecognizer<f32> + ?Sized,
{
    match load_cache(cache_dir, image_id) {
        Ok(mut e) if e.source_shape == image.shape() => {
            let filter = FilterConfig::from(cfg);
            let mut changed = false;
            for r in &mut e.records {
                let keep = english_filter_with(&r.logits, &filter);
                changed |= keep != r.retained;
                r.retained = keep;
            }
            if changed {
                save_cache(&e, cache_dir)?;
            }
            Ok(e)
        }
        Ok(_) | Err(Error::NotFound(_)) => {
            let e = build_cache(image, image_id, detector, recognizer, cfg)?;
            save_cache(&e, cache_dir)?;
            Ok(e)
        }
        Err(e) => Err(e),
    }
}

fn relative(root: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(root).unwrap_or(path).to_path_buf()
}

/// Builds (or reuses) caches for every image in `dir` and applies the
/// training retention rule. `jobs` bounds worker threads (0 = all cores).
#[allow(clippy::too_many_arguments)]
pub fn ingest<D, R>(
    dir: &Path,
    split: Split,
    cache_dir: &Path,
    detector: &D,
    recognizer: &R,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<DatasetManifest>
where
    D: TextDetector + Sync + ?Sized,
    R: TextRecognizer<f32> + Sync + ?Sized,
{
    let files = list_images(dir)?;
    fs::create_dir_all(cache_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<usize>> = pool.install(|| {
        files
            .par_iter()
            .map(|(id, path)| {
                let image = load_image(path)?;
                Ok(cached_or_build(&image, id, cache_dir, detector, recognizer, cfg)?.retained_count())
            })
            .collect()
    });
    let mut manifest =
        DatasetManifest { root: dir.to_path_buf(), split, entries: Vec::new(), excluded: Vec::new(), skipped: Vec::new() };
    for ((image_id, path), result) in files.into_iter().zip(results) {
        let file = relative(dir, &path);
        match result {
            Ok(count) => {
                let entry = ManifestEntry { image_id, file, retained_region_count: count };
                if split == Split::Train && count < TRAIN_MIN_REGIONS {
                    manifest.excluded.push(entry);
                } else {
                    manifest.entries.push(entry);
                }
            }
            Err(e @ (Error::Image(_) | Error::InvalidImage(_))) => {
                log::warn!("skipping {}: {e}", path.display());
                manifest.skipped.push(SkippedImage { file, reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(manifest)
}

/// Loads the images and caches listed in `manifest`.
pub fn load_samples(manifest: &DatasetManifest, cache_dir: &Path) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_image(&manifest.root.join(&e.file))?;
            let cache = load_cache(cache_dir, &e.image_id)?;
            Ok(Sample { image_id: e.image_id.clone(), image, cache })
        })
        .collect()
}

/// Writes `count` seeded fixtures `img-000.png`, ... with `words_per_image`
/// random words each; returns their ground-truth words.
pub fn write_synth_dataset(
    dir: &Path,
    count: usize,
    words_per_image: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let words = synth::random_words(words_per_image, 5, s);
            let img = synth::synth_text_image(&words, size, s)?;
            save_image(&img.image, &dir.join(format!("img-{i:03}.png")))?;
            Ok(words)
        })
        .collect()
}
