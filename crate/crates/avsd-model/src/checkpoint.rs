//! Flat binary checkpoints.
//!
//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic "AVSD" | version u32 | n_blocks u32 |
//!   per block: ndim u32, dims u32[ndim] |
//!   per block: values f64, row-major, declaration order
//! ```
//!
//! Block order: embed, w_window, b_window, w_summary, w_out, b_out.
//! A plain-text sidecar (same path, `.meta` extension) carries the config,
//! seed, and step as `key=value` lines. Optimizer state for resumption uses
//! the same container with magic `AVSO`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::adam::AdamState;
use crate::model::{ToyLMConfig, ToyLMParams};

const MODEL_MAGIC: &[u8; 4] = b"AVSD";
const OPT_MAGIC: &[u8; 4] = b"AVSO";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),

    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Sidecar contents: the model config plus run provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub cfg: ToyLMConfig,
    pub seed: u64,
    pub step: u64,
    /// Free-form extra keys (task parameters and the like), kept sorted.
    pub extras: BTreeMap<String, String>,
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

pub fn write_meta(path: &Path, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    let mut text = String::new();
    text.push_str(&format!("vocab_size={}\n", meta.cfg.vocab_size));
    text.push_str(&format!("embed_dim={}\n", meta.cfg.embed_dim));
    text.push_str(&format!("hidden_dim={}\n", meta.cfg.hidden_dim));
    text.push_str(&format!("window={}\n", meta.cfg.window));
    text.push_str(&format!("terminator={}\n", meta.cfg.terminator));
    text.push_str(&format!("seed={}\n", meta.seed));
    text.push_str(&format!("step={}\n", meta.step));
    for (k, v) in &meta.extras {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(meta_path(path), text)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let text = fs::read_to_string(meta_path(path))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Format(format!("bad meta line: {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut take_num = |key: &str| -> Result<u64, CheckpointError> {
        map.remove(key)
            .ok_or_else(|| CheckpointError::Format(format!("meta missing key {key}")))?
            .parse()
            .map_err(|_| CheckpointError::Format(format!("meta key {key} is not an integer")))
    };
    let cfg = ToyLMConfig {
        vocab_size: take_num("vocab_size")? as usize,
        embed_dim: take_num("embed_dim")? as usize,
        hidden_dim: take_num("hidden_dim")? as usize,
        window: take_num("window")? as usize,
        terminator: take_num("terminator")? as usize,
    };
    let seed = take_num("seed")?;
    let step = take_num("step")?;
    Ok(CheckpointMeta {
        cfg,
        seed,
        step,
        extras: map,
    })
}

fn push_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn push_block(buf: &mut Vec<u8>, dims: &[u32], values: &[f64]) {
    for x in values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    debug_assert_eq!(
        dims.iter().map(|&d| d as usize).product::<usize>(),
        values.len()
    );
}

/// Write the model file and its sidecar.
pub fn save_params(
    path: &Path,
    params: &ToyLMParams,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let cfg = &params.cfg;
    let shapes: [Vec<u32>; 6] = [
        vec![cfg.vocab_size as u32, cfg.embed_dim as u32],
        vec![(cfg.window * cfg.embed_dim) as u32, cfg.hidden_dim as u32],
        vec![cfg.hidden_dim as u32],
        vec![cfg.embed_dim as u32, cfg.hidden_dim as u32],
        vec![cfg.hidden_dim as u32, cfg.vocab_size as u32],
        vec![cfg.vocab_size as u32],
    ];
    let mut buf = Vec::with_capacity(16 + cfg.param_count() * 8);
    buf.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    push_u32(&mut buf, shapes.len() as u32);
    for dims in &shapes {
        push_u32(&mut buf, dims.len() as u32);
        for &d in dims {
            push_u32(&mut buf, d);
        }
    }
    for (dims, block) in shapes.iter().zip(params.block_slices()) {
        push_block(&mut buf, dims, block);
    }
    fs::write(path, buf)?;
    write_meta(path, meta)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("truncated checkpoint".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Read a model file plus sidecar back into parameters.
pub fn load_params(path: &Path) -> Result<(ToyLMParams, CheckpointMeta), CheckpointError> {
    let meta = read_meta(path)?;
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MODEL_MAGIC {
        return Err(CheckpointError::Format("bad model magic".to_string()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let n_blocks = r.u32()? as usize;
    if n_blocks != 6 {
        return Err(CheckpointError::Format(format!(
            "expected 6 blocks, found {n_blocks}"
        )));
    }
    let mut shapes = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        shapes.push(dims);
    }
    let cfg = &meta.cfg;
    let expect: [Vec<usize>; 6] = [
        vec![cfg.vocab_size, cfg.embed_dim],
        vec![cfg.window * cfg.embed_dim, cfg.hidden_dim],
        vec![cfg.hidden_dim],
        vec![cfg.embed_dim, cfg.hidden_dim],
        vec![cfg.hidden_dim, cfg.vocab_size],
        vec![cfg.vocab_size],
    ];
    for (got, want) in shapes.iter().zip(&expect) {
        if got != want {
            return Err(CheckpointError::Format(format!(
                "shape table {got:?} does not match sidecar config {want:?}"
            )));
        }
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for dims in &shapes {
        blocks.push(r.f64s(dims.iter().product())?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Format(
            "trailing bytes after parameter blocks".to_string(),
        ));
    }
    let arr2 = |vals: Vec<f64>, rows: usize, cols: usize| {
        Array2::from_shape_vec((rows, cols), vals)
            .map_err(|e| CheckpointError::Format(e.to_string()))
    };
    let params = ToyLMParams {
        embed: arr2(blocks[0].clone(), cfg.vocab_size, cfg.embed_dim)?,
        w_window: arr2(
            blocks[1].clone(),
            cfg.window * cfg.embed_dim,
            cfg.hidden_dim,
        )?,
        b_window: Array1::from_vec(blocks[2].clone()),
        w_summary: arr2(blocks[3].clone(), cfg.embed_dim, cfg.hidden_dim)?,
        w_out: arr2(blocks[4].clone(), cfg.hidden_dim, cfg.vocab_size)?,
        b_out: Array1::from_vec(blocks[5].clone()),
        cfg: cfg.clone(),
    };
    Ok((params, meta))
}

/// Write optimizer moments next to a checkpoint (`.opt` extension).
pub fn save_adam_state(path: &Path, state: &AdamState) -> Result<(), CheckpointError> {
    let mut buf = Vec::with_capacity(24 + state.m.len() * 16);
    buf.extend_from_slice(OPT_MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    buf.extend_from_slice(&state.t.to_le_bytes());
    push_u32(&mut buf, state.m.len() as u32);
    for x in state.m.iter().chain(state.v.iter()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path.with_extension("opt"), buf)?;
    Ok(())
}

pub fn load_adam_state(path: &Path) -> Result<AdamState, CheckpointError> {
    let bytes = fs::read(path.with_extension("opt"))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != OPT_MAGIC {
        return Err(CheckpointError::Format("bad optimizer magic".to_string()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let t = r.u64()?;
    let n = r.u32()? as usize;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    Ok(AdamState { t, m, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use tempfile::tempdir;

    fn cfg() -> ToyLMConfig {
        ToyLMConfig {
            vocab_size: 7,
            embed_dim: 3,
            hidden_dim: 4,
            window: 2,
            terminator: 6,
        }
    }

    fn meta() -> CheckpointMeta {
        let mut extras = BTreeMap::new();
        extras.insert("modulus".to_string(), "7".to_string());
        CheckpointMeta {
            cfg: cfg(),
            seed: 42,
            step: 10,
            extras,
        }
    }

    #[test]
    fn params_round_trip_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let params = init_params(cfg(), 123);
        save_params(&path, &params, &meta()).unwrap();
        let (loaded, loaded_meta) = load_params(&path).unwrap();
        for (a, b) in params.block_slices().iter().zip(loaded.block_slices()) {
            assert_eq!(a, b);
        }
        assert_eq!(loaded_meta, meta());
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let params = init_params(cfg(), 5);
        save_params(&a, &params, &meta()).unwrap();
        save_params(&b, &params, &meta()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(a.with_extension("meta")).unwrap(),
            fs::read(b.with_extension("meta")).unwrap()
        );
    }

    #[test]
    fn adam_state_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut state = AdamState::new(&cfg());
        state.t = 17;
        state.m[3] = 0.5;
        state.v[3] = 0.25;
        save_adam_state(&path, &state).unwrap();
        let loaded = load_adam_state(&path).unwrap();
        assert_eq!(loaded.t, 17);
        assert_eq!(loaded.m, state.m);
        assert_eq!(loaded.v, state.v);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let params = init_params(cfg(), 1);
        save_params(&path, &params, &meta()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_params(&path),
            Err(CheckpointError::Format(_))
        ));

        save_params(&path, &params, &meta()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_params(&path),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn missing_checkpoint_is_an_io_error() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_params(&dir.path().join("nope.bin")),
            Err(CheckpointError::Io(_))
        ));
    }
}
