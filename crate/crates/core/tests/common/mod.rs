#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use textcomp::compress::ModelSpec;
use textcomp::data::synth::{random_words, synth_text_image};
use textcomp::data::Sample;
use textcomp::textpipe::{build_cache, GlyphTemplateRecognizer, InkDetector};
use textcomp::types::TrainConfig;

pub const SMOKE_SIZE: (usize, usize) = (64, 256);
pub const TINY: ModelSpec = ModelSpec::Hyperprior { channels: 4, latent: 4, hyper: 2 };

/// Synthetic image with `words` random words and its region cache.
pub fn sample(id: &str, words: usize, size: (usize, usize), seed: u64) -> Sample {
    let rec = GlyphTemplateRecognizer::<f32>::default();
    let image = synth_text_image(&random_words(words, 5, seed), size, seed).unwrap().image;
    let cache = build_cache(&image, id, &InkDetector::default(), &rec, &TrainConfig::default()).unwrap();
    Sample { image_id: id.to_string(), image, cache }
}

/// `n` 64x256 images with six words each.
pub fn smoke_set(n: usize, base_seed: u64) -> Vec<Sample> {
    (0..n).map(|i| sample(&format!("img-{i:03}"), 6, SMOKE_SIZE, base_seed + i as u64)).collect()
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `textcomp` binary with `TEXTCOMP_CACHE` removed unless given.
pub fn textcomp(args: &[&str], cache_env: Option<&Path>) -> Run {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_textcomp"));
    cmd.args(args).env_remove("TEXTCOMP_CACHE");
    if let Some(c) = cache_env {
        cmd.env("TEXTCOMP_CACHE", c);
    }
    let out = cmd.output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
