//! Versioned binary checkpoints for dual-layer models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "DLKPNCKP"
//! version      u32       1
//! 2 x layer:
//!   in_channels  u32
//!   n_hidden     u32
//!   hidden[i]    u32 * n_hidden
//!   ksize        u32
//!   levels       u32
//!   n_params     u64
//!   params       f32 * n_params   (per stage: weights [tap][in][out], then biases)
//! ```

use std::fs;
use std::path::Path;

use super::model::{DlkpnModel, KpnArch, KpnModel};
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: [u8; 8] = *b"DLKPNCKP";
pub const FORMAT_VERSION: u32 = 1;

fn write_layer(out: &mut Vec<u8>, model: &KpnModel) {
    let arch = &model.arch;
    out.extend_from_slice(&(arch.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden.len() as u32).to_le_bytes());
    for &w in &arch.hidden {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(arch.ksize as u32).to_le_bytes());
    out.extend_from_slice(&(arch.levels as u32).to_le_bytes());
    let params = model.flat_params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
}

/// Serializes both layers. Parameters are stored as `f32`.
pub fn encode_checkpoint(model: &DlkpnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_layer(&mut out, &model.layer1);
    write_layer(&mut out, &model.layer2);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

const MAX_HIDDEN_STAGES: u32 = 64;
const MAX_WIDTH: u32 = 4096;

fn read_layer(r: &mut Reader<'_>) -> Result<KpnModel, CheckpointError> {
    let in_channels = r.u32("in_channels")? as usize;
    let n_hidden = r.u32("hidden stage count")?;
    if n_hidden > MAX_HIDDEN_STAGES {
        return Err(CheckpointError::Architecture(format!(
            "{n_hidden} hidden stages"
        )));
    }
    let mut hidden = Vec::with_capacity(n_hidden as usize);
    for _ in 0..n_hidden {
        let w = r.u32("hidden width")?;
        if w == 0 || w > MAX_WIDTH {
            return Err(CheckpointError::Architecture(format!("hidden width {w}")));
        }
        hidden.push(w as usize);
    }
    let ksize = r.u32("ksize")? as usize;
    let levels = r.u32("levels")? as usize;
    let arch = KpnArch {
        in_channels,
        hidden,
        ksize,
        levels,
    };
    arch.validate()
        .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    let expected = arch.param_count() as u64;
    let found = r.u64("parameter count")?;
    if found != expected {
        return Err(CheckpointError::ParamCount { expected, found });
    }
    let raw = r.take(found as usize * 4, "parameters")?;
    let mut params = Vec::with_capacity(found as usize);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(CheckpointError::NonFinite(i));
        }
        params.push(v as f64);
    }
    let mut model =
        KpnModel::zeros(&arch).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    model
        .set_flat_params(&params)
        .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    Ok(model)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DlkpnModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r
        .take(MAGIC.len(), "magic")
        .map_err(|_| CheckpointError::BadMagic {
            expected: MAGIC,
            found: bytes.to_vec(),
        })?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            expected: FORMAT_VERSION,
            found: version,
        }
        .into());
    }
    let layer1 = read_layer(&mut r)?;
    let layer2 = read_layer(&mut r)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
    }
    DlkpnModel::new(layer1, layer2).map_err(|e| CheckpointError::Architecture(e.to_string()).into())
}

pub fn save_checkpoint(model: &DlkpnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DlkpnModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
