//! Checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!   magic "CDLB" | u32 version | u32 config_len | canonical config text
//!   | 7 pairs of f32 codec bounds (lo, hi per action dimension)
//!   | 7 pairs of f32 standardization stats (mean, std per dimension)
//!   | per parameter in registry order:
//!       u32 name_len | name bytes | u32 rank | u32 extents... | f32 values...

use std::io::{Read, Write};
use std::path::Path;

use crate::codec::{BinCodec, Standardizer, ACTION_DIMS};
use crate::config::ModelConfig;
use crate::model::{Head, Model};

pub const MAGIC: &[u8; 4] = b"CDLB";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format(String),
    Incompatible(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Format(m) => write!(f, "checkpoint format error: {m}"),
            CheckpointError::Incompatible(m) => write!(f, "incompatible checkpoint: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

pub struct Checkpoint {
    pub config: ModelConfig,
    pub codec: BinCodec,
    pub standardizer: Standardizer,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn save(
    path: &Path,
    model: &Model,
    codec: &BinCodec,
    standardizer: &Standardizer,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config.canonical_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    for d in 0..ACTION_DIMS {
        out.extend_from_slice(&codec.lo[d].to_le_bytes());
        out.extend_from_slice(&codec.hi[d].to_le_bytes());
    }
    for d in 0..ACTION_DIMS {
        out.extend_from_slice(&standardizer.mean[d].to_le_bytes());
        out.extend_from_slice(&standardizer.std[d].to_le_bytes());
    }
    for p in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &e in &p.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| CheckpointError::Format("config text not utf-8".into()))?;
    let config = ModelConfig::from_canonical_text(cfg_text)
        .map_err(|e| CheckpointError::Format(e.0))?;
    let mut codec = BinCodec { lo: [0.0; ACTION_DIMS], hi: [0.0; ACTION_DIMS], token_base: crate::vocab::ACTION_BIN_BASE };
    for d in 0..ACTION_DIMS {
        codec.lo[d] = cur.f32()?;
        codec.hi[d] = cur.f32()?;
    }
    let mut standardizer = Standardizer::identity();
    for d in 0..ACTION_DIMS {
        standardizer.mean[d] = cur.f32()?;
        standardizer.std[d] = cur.f32()?;
    }
    let mut params = Vec::new();
    while !cur.done() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::Format("parameter name not utf-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(4 * n)?;
        let mut data = Vec::with_capacity(n);
        for c in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        params.push((name, shape, data));
    }
    Ok(Checkpoint { config, codec, standardizer, params })
}

/// Load checkpoint weights into a freshly initialized model.
///
/// The requested config must match the stored one structurally; the
/// attention mode may differ (one weight set serves both). Parameters are
/// matched by name. Model parameters missing from the file must be head
/// parameters (fresh heads attach to pretrained backbones); file
/// parameters unknown to the model are an error.
pub fn load_into_model(
    path: &Path,
    config: &ModelConfig,
    head: Head,
    init_seed: u64,
) -> Result<(Model, BinCodec, Standardizer)> {
    let ckpt = read(path)?;
    if !ckpt.config.structural_eq(config) {
        return Err(CheckpointError::Incompatible(format!(
            "stored architecture differs:\n{}\nvs requested:\n{}",
            ckpt.config.canonical_text(),
            config.canonical_text()
        )));
    }
    let mut model = Model::new(config.clone(), head, init_seed)
        .map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    for (name, shape, data) in &ckpt.params {
        match model.store.by_name_mut(name) {
            Some(p) => {
                if &p.shape != shape {
                    return Err(CheckpointError::Incompatible(format!(
                        "parameter {name}: stored shape {shape:?} vs model {:?}",
                        p.shape
                    )));
                }
                p.data.copy_from_slice(data);
            }
            None => {
                if !name.starts_with("head.") {
                    return Err(CheckpointError::Incompatible(format!(
                        "stored backbone parameter {name} not present in model"
                    )));
                }
                // stored head for a different objective; skip
            }
        }
    }
    // every backbone parameter must have been provided
    for p in model.store.iter() {
        if !p.name.starts_with("head.") && !ckpt.params.iter().any(|(n, _, _)| n == &p.name) {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint missing backbone parameter {}",
                p.name
            )));
        }
    }
    Ok((model, ckpt.codec, ckpt.standardizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AttentionMode;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 32,
            obs_grid: 2,
            obs_channels: 3,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join("chunklab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.cdlb");
        let model = Model::new(tiny_config(), Head::TokenLogits, 7).unwrap();
        let codec = BinCodec {
            lo: [-0.05; ACTION_DIMS],
            hi: [0.05; ACTION_DIMS],
            token_base: crate::vocab::ACTION_BIN_BASE,
        };
        let std = Standardizer::identity();
        save(&path, &model, &codec, &std).unwrap();
        let (loaded, c2, s2) = load_into_model(&path, &tiny_config(), Head::TokenLogits, 99).unwrap();
        assert_eq!(codec, c2);
        assert_eq!(std, s2);
        for (a, b) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(
                a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn loads_across_attention_modes_and_heads() {
        let dir = std::env::temp_dir().join("chunklab-ckpt-test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.cdlb");
        let model = Model::new(tiny_config(), Head::TokenLogits, 7).unwrap();
        save(&path, &model, &BinCodec { lo: [0.0; 7], hi: [1.0; 7], token_base: 64 }, &Standardizer::identity()).unwrap();

        let causal = ModelConfig { attention_mode: AttentionMode::Causal, ..tiny_config() };
        let (m2, _, _) = load_into_model(&path, &causal, Head::TokenLogits, 0).unwrap();
        assert_eq!(m2.config.attention_mode, AttentionMode::Causal);

        let (m3, _, _) =
            load_into_model(&path, &tiny_config(), Head::Regression { input_proj: true }, 0).unwrap();
        assert_eq!(m3.backbone_signature(), model.backbone_signature());

        let incompatible = ModelConfig { d_model: 32, ..tiny_config() };
        assert!(load_into_model(&path, &incompatible, Head::TokenLogits, 0).is_err());
    }
}
