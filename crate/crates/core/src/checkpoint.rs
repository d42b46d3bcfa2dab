//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MPRF0001`, a little-endian `u64` manifest
//! length, the UTF-8 manifest, then raw little-endian parameter data.
//! The manifest holds the full config as `key=value` lines, a
//! `dtype <f32|f64>` line, a `params <count>` line and one
//! `<name> <n> <c> <h> <w>` line per parameter in storage order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::MprNet;
use crate::tensor::{Real, Shape};

pub const MAGIC: &[u8; 8] = b"MPRF0001";

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes `model` with `cfg` (whose model section is replaced by the
/// model's own).
pub fn save<T: Real>(path: &Path, model: &MprNet<T>, cfg: &Config) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.model = model.config().clone();
    let mut manifest = cfg.to_text();
    manifest.push_str(&format!("dtype {}\nparams {}\n", T::NAME, model.params().len()));
    for (_, p) in model.params().iter() {
        let s = p.tensor.shape();
        manifest.push_str(&format!("{} {} {} {} {}\n", p.name, s.n, s.c, s.h, s.w));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(manifest.len() as u64).to_le_bytes())?;
    out.write_all(manifest.as_bytes())?;
    for (_, p) in model.params().iter() {
        for &v in p.tensor.data() {
            match T::NAME {
                "f64" => out.write_all(&v.as_f64().to_le_bytes())?,
                _ => out.write_all(&(v.as_f64() as f32).to_le_bytes())?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Parsed manifest of a checkpoint.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub config: Config,
    pub dtype: String,
    pub params: Vec<(String, Shape)>,
}

impl Manifest {
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, s)| s.numel()).sum()
    }
}

fn read_manifest(r: &mut impl Read) -> Result<Manifest> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("file too short for a checkpoint header"))?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&magic), "MPRF0001")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| corrupt("truncated manifest length"))?;
    let len = u64::from_le_bytes(len);
    if len > 64 << 20 {
        return Err(corrupt(format!("implausible manifest length {len}")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text).map_err(|_| corrupt("truncated manifest"))?;
    let text = String::from_utf8(text).map_err(|_| corrupt("manifest is not UTF-8"))?;

    let mut config = Config::default();
    let mut dtype = None;
    let mut params = Vec::new();
    let mut expected = None;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            config.set(k, v).map_err(|e| corrupt(format!("manifest config: {e}")))?;
        } else if let Some(d) = line.strip_prefix("dtype ") {
            dtype = Some(d.to_string());
        } else if let Some(n) = line.strip_prefix("params ") {
            expected = Some(n.parse::<usize>().map_err(|_| corrupt("bad parameter count"))?);
        } else {
            let f: Vec<&str> = line.split_whitespace().collect();
            let dims: Option<Vec<usize>> = f.get(1..5).map(|d| d.iter().filter_map(|x| x.parse().ok()).collect());
            match dims {
                Some(d) if f.len() == 5 && d.len() == 4 => {
                    let shape = Shape::new(d[0], d[1], d[2], d[3]).map_err(|_| corrupt("zero-sized parameter"))?;
                    params.push((f[0].to_string(), shape));
                }
                _ => return Err(corrupt(format!("unparsable manifest line `{line}`"))),
            }
        }
    }
    let dtype = dtype.ok_or_else(|| corrupt("manifest lacks a dtype line"))?;
    if dtype != "f32" && dtype != "f64" {
        return Err(corrupt(format!("unknown dtype `{dtype}`")));
    }
    if expected != Some(params.len()) {
        return Err(corrupt(format!("manifest lists {} parameters, header says {expected:?}", params.len())));
    }
    Ok(Manifest { config, dtype, params })
}

pub fn read_manifest_from(path: &Path) -> Result<Manifest> {
    read_manifest(&mut BufReader::new(File::open(path)?))
}

/// Loads a checkpoint into a freshly built model of the recorded
/// architecture, checking every name and shape.
pub fn load<T: Real>(path: &Path) -> Result<(MprNet<T>, Config)> {
    let mut r = BufReader::new(File::open(path)?);
    let manifest = read_manifest(&mut r)?;
    let mut model = MprNet::<T>::zeroed(manifest.config.model.clone())?;
    if model.params().len() != manifest.params.len() {
        return Err(corrupt(format!(
            "checkpoint has {} parameters, architecture expects {}",
            manifest.params.len(),
            model.params().len()
        )));
    }
    let width = if manifest.dtype == "f64" { 8 } else { 4 };
    for (p, (name, shape)) in model.params_mut().iter_mut().zip(&manifest.params) {
        if &p.name != name || p.tensor.shape() != *shape {
            return Err(corrupt(format!(
                "parameter mismatch: checkpoint `{name}` {shape}, model `{}` {}",
                p.name,
                p.tensor.shape()
            )));
        }
        let mut bytes = vec![0u8; shape.numel() * width];
        r.read_exact(&mut bytes).map_err(|_| corrupt(format!("truncated data for `{name}`")))?;
        for (dst, chunk) in p.tensor.data_mut().iter_mut().zip(bytes.chunks_exact(width)) {
            let v = if width == 8 {
                f64::from_le_bytes(chunk.try_into().expect("8 bytes"))
            } else {
                f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64
            };
            *dst = T::of(v);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(corrupt("trailing bytes after parameter data"));
    }
    Ok((model, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.model = ModelConfig { base_width: 4, n_scales: 2, n_orbs: 1, n_cabs_per_orb: 1, n_cabs_per_scale: 1, cab_reduction: 2, ..Default::default() };
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let cfg = tiny();
        let m = MprNet::<f32>::new(cfg.model.clone(), 5).unwrap();
        save(&p, &m, &cfg).unwrap();
        let (back, back_cfg) = load::<f32>(&p).unwrap();
        assert_eq!(back_cfg.model, cfg.model);
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }

    #[test]
    fn bad_magic_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"NOTMAGIC\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Checkpoint(_))));
    }
}
