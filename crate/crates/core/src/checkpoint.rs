//! Binary checkpoints of a [`ParamStore`].
//!
//! Layout, little endian: `u32` format version, `u32` parameter count, then
//! per parameter a `u32` name length, the UTF-8 name, a `u32` rank, `rank`
//! `u64` dimensions and the `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use mxj_autodiff::{ParamStore, Tensor};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::model::Model;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "model.json";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.numel() * 8);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Named tensors in file order.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| "dimension overflows".to_string())?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("{name}: shape {shape:?} overflows"))?;
        let raw = r.take(numel.checked_mul(8).ok_or("size overflows")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ckpt_err(path: &Path, detail: impl Into<String>) -> CoreError {
    CoreError::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `bytes` through a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store))
}

/// Overwrites every value in `store` from `path`. Names and shapes must
/// match exactly; on error `store` is unchanged.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let entries = decode(&bytes).map_err(|d| ckpt_err(path, d))?;
    if entries.len() != store.len() {
        return Err(ckpt_err(
            path,
            format!("{} parameters, model has {}", entries.len(), store.len()),
        ));
    }
    let mut loaded = ParamStore::new();
    for (name, t) in entries {
        match store.id(&name) {
            None => return Err(ckpt_err(path, format!("unknown parameter {name}"))),
            Some(id) if store.value(id).shape() != t.shape() => {
                return Err(ckpt_err(
                    path,
                    format!("{name}: shape {:?}, model has {:?}", t.shape(), store.value(id).shape()),
                ))
            }
            Some(_) => {}
        }
        if loaded.id(&name).is_some() {
            return Err(ckpt_err(path, format!("duplicate parameter {name}")));
        }
        loaded.add(name, t);
    }
    store.load_values(&loaded).map_err(|e| ckpt_err(path, e.to_string()))
}

/// Writes the weights and the model configuration into `dir`.
pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg = serde_json::to_string_pretty(&model.cfg).expect("config serializes");
    write_atomic(&dir.join(CONFIG_FILE), cfg.as_bytes())?;
    save(&model.store, &dir.join(WEIGHTS_FILE))
}

pub fn load_config(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(&path, e.to_string()))
}

/// Rebuilds a model from a directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<Model> {
    let cfg = load_config(dir)?;
    let mut model = Model::new(cfg, 0)?;
    load_into(&mut model.store, &dir.join(WEIGHTS_FILE))?;
    Ok(model)
}
