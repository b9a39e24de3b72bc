//! Checkpoints: a binary parameter container plus a TOML sidecar.
//!
//! Container layout (little-endian): magic `TXCKPT01`, `u32` section count,
//! then per section a length-prefixed name, a `u32` tensor count and per
//! tensor a length-prefixed name, `u32` rank, `u64` dims and `f64` data.
//! Sections are `params` and, when optimizer state is saved, `adam.m` and
//! `adam.v`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::{CompressionModel, Model, ModelSpec, ParamSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::types::TrainConfig;

const MAGIC: &[u8; 8] = b"TXCKPT01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ParamSet,
    /// Adam first and second moments.
    pub moments: Option<(ParamSet, ParamSet)>,
    /// Optimizer steps taken.
    pub step: usize,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    crate_version: String,
    step: usize,
    model: ModelSpec,
    config: TrainConfig,
}

impl Checkpoint {
    pub fn from_model<M: CompressionModel>(model: &M, config: &TrainConfig) -> Self {
        Self { model: model.spec(), params: model.params().clone(), moments: None, step: 0, config: config.clone() }
    }

    /// Rebuilds the model and installs the stored parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut m = Model::from_spec(&self.model, 0)?;
        m.params().check_layout(&self.params)?;
        *m.params_mut() = self.params.clone();
        Ok(m)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_set(out: &mut Vec<u8>, name: &str, set: &ParamSet) {
    put_str(out, name);
    out.extend((set.len() as u32).to_le_bytes());
    for (n, v) in set.iter() {
        put_str(out, n);
        out.extend((v.ndim() as u32).to_le_bytes());
        for &d in v.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for x in v.iter() {
            out.extend(x.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = MAGIC.to_vec();
    let sections = if ckpt.moments.is_some() { 3u32 } else { 1 };
    out.extend(sections.to_le_bytes());
    put_set(&mut out, "params", &ckpt.params);
    if let Some((m, v)) = &ckpt.moments {
        put_set(&mut out, "adam.m", m);
        put_set(&mut out, "adam.v", v);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        step: ckpt.step,
        model: ckpt.model.clone(),
        config: ckpt.config.clone(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, reason: &str) -> Error {
        Error::Format { path: self.path.into(), reason: format!("{reason} at byte {}", self.pos) }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| self.err("invalid utf-8"))
    }

    fn set(&mut self) -> Result<(String, ParamSet)> {
        let name = self.string()?;
        let count = self.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let pname = self.string()?;
            let rank = self.u32()? as usize;
            let dims = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.err("size overflow"))?;
            let raw = self.take(len.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            set.push(pname, Tensor::from_shape_vec(IxDyn(&dims), data).unwrap());
        }
        Ok((name, set))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    fn not_found(p: &Path, e: std::io::Error) -> Error {
        match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(p.into()),
            _ => e.into(),
        }
    }
    let bytes = fs::read(path).map_err(|e| not_found(path, e))?;
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| not_found(&side_path, e))?;
    let side: Sidecar =
        toml::from_str(&text).map_err(|e| Error::Format { path: side_path.clone(), reason: e.to_string() })?;
    if side.format_version != FORMAT_VERSION {
        return Err(Error::Format { path: side_path, reason: format!("format version {}", side.format_version) });
    }
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let sections = r.u32()?;
    let mut params = None;
    let (mut m, mut v) = (None, None);
    for _ in 0..sections {
        let (name, set) = r.set()?;
        match name.as_str() {
            "params" => params = Some(set),
            "adam.m" => m = Some(set),
            "adam.v" => v = Some(set),
            other => return Err(r.err(&format!("unknown section `{other}`"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let params = params.ok_or_else(|| r.err("missing params section"))?;
    let moments = match (m, v) {
        (Some(m), Some(v)) => {
            params.check_layout(&m)?;
            params.check_layout(&v)?;
            Some((m, v))
        }
        (None, None) => None,
        _ => return Err(r.err("incomplete optimizer state")),
    };
    Ok(Checkpoint { model: side.model, params, moments, step: side.step, config: side.config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::HyperpriorCodec;

    #[test]
    fn roundtrip_is_bit_exact_and_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let model = HyperpriorCodec::new(3, 4, 2, 8).unwrap();
        let mut ck = Checkpoint::from_model(&model, &TrainConfig { m_min: f64::INFINITY, max_steps: Some(3), ..Default::default() });
        let mut m = model.params().zeros_like();
        m.values_mut()[0].fill(-0.0);
        m.values_mut()[1].fill(f64::MIN_POSITIVE / 4.0);
        ck.moments = Some((m, model.params().clone()));
        ck.step = 17;
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_checkpoint(&a, &ck).unwrap();
        let back = load_checkpoint(&a).unwrap();
        assert_eq!(back, ck);
        let bits = |s: &ParamSet| s.values().iter().flat_map(|v| v.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&back.moments.as_ref().unwrap().0), bits(&ck.moments.as_ref().unwrap().0));
        save_checkpoint(&b, &back).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(sidecar_path(&a)).unwrap(), fs::read(sidecar_path(&b)).unwrap());
        assert_eq!(back.to_model().unwrap().params(), model.params());
    }

    #[test]
    fn damaged_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        assert!(matches!(load_checkpoint(&p), Err(Error::NotFound(_))));
        let model = HyperpriorCodec::new(2, 2, 2, 0).unwrap();
        save_checkpoint(&p, &Checkpoint::from_model(&model, &TrainConfig::default())).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
        fs::write(&p, &bytes).unwrap();
        fs::write(sidecar_path(&p), "bogus = 1\n").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    }
}
